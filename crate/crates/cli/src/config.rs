//! Config file loading, flag precedence and run manifests.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use radscene::loss::LossConfig;
use radscene::scenario::ScenarioConfig;
use radscene::targets::KernelConfig;
use radscene::train::TrainerSettings;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::KernelArgs;

/// Bad flags or config values; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Validation failures of a config struct are usage errors.
pub fn check(r: radscene::Result<()>) -> Result<()> {
    r.map_err(|e| usage(e.to_string()))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub n: Option<u64>,
    pub scenario: Option<ScenarioConfig>,
    pub kernel: Option<KernelConfig>,
    pub loss: Option<LossConfig>,
    pub trainer: Option<TrainerSettings>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }
}

/// Global settings after merging flags over the config file.
pub struct RunContext {
    pub seed: u64,
    pub out: PathBuf,
    pub file: FileConfig,
}

impl RunContext {
    pub fn new(seed: Option<u64>, out: Option<PathBuf>, config: Option<&Path>) -> Result<Self> {
        let file = FileConfig::load(config)?;
        Ok(Self {
            seed: seed.or(file.seed).unwrap_or(0),
            out: out.unwrap_or_else(|| PathBuf::from(".")),
            file,
        })
    }

    pub fn kernel(&self, flags: &KernelArgs) -> Result<KernelConfig> {
        let mut k = self.file.kernel.unwrap_or_default();
        if let Some(s) = &flags.sigma {
            k.sigmas = s
                .as_slice()
                .try_into()
                .map_err(|_| usage(format!("--sigma needs 4 values, got {}", s.len())))?;
        }
        if let Some(l) = flags.lambda {
            k.lambda = l;
        }
        check(k.validate())?;
        Ok(k)
    }

    pub fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }

    pub fn write_manifest(&self, command: &str, config: Value, inputs: Value, outputs: &[&str]) -> Result<()> {
        let manifest = Manifest {
            tool: "radscene",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: self.seed,
            config,
            inputs,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        };
        write_json(&self.out_dir()?.join("manifest.json"), &serde_json::to_value(manifest)?)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    seed: u64,
    config: Value,
    inputs: Value,
    outputs: Vec<String>,
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn path_value(p: &Path) -> Value {
    json!(p.display().to_string())
}
