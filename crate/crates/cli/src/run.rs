use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use radscene::caption::{generate_caption, parse_caption, CaptionTemplates};
use radscene::hash::{decode_hash, encode_hash_with, HashLayout, SceneHash};
use radscene::loss::LossDirection;
use radscene::matrix_io::write_matrix;
use radscene::metrics::evaluate;
use radscene::scenario::{generate_dataset, generate_scene, read_dataset, scene_record, ScenarioKind, SceneRecord};
use radscene::scene::SceneDescriptor;
use radscene::targets::soft_target_matrix_with_ids;
use radscene::train::{toy_align_targets, AlignConfig};
use serde_json::{json, Value};

use crate::args::*;
use crate::config::{check, path_value, usage, write_json, RunContext};

const DEFAULT_SCENES: u64 = 100;
const DEFAULT_BATCH: u64 = 160;

pub fn dispatch(cli: Cli) -> Result<()> {
    let ctx = RunContext::new(cli.seed, cli.out, cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => generate(&ctx, a),
        Command::Hash(a) => hash(a),
        Command::Targets(a) => targets(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Caption(a) => caption(&ctx, a),
        Command::Parse(a) => parse(a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Layout(a) => {
            let layout = if a.thermometer {
                HashLayout::THERMOMETER
            } else {
                HashLayout::BINARY
            };
            print!("{}", layout.offset_table());
            Ok(())
        }
    }
}

fn scenario_kind(k: KindArg) -> ScenarioKind {
    match k {
        KindArg::Highway => ScenarioKind::Highway,
        KindArg::Urban => ScenarioKind::Urban,
        KindArg::Intersection => ScenarioKind::Intersection,
    }
}

fn generate(ctx: &RunContext, a: GenerateArgs) -> Result<()> {
    let mut cfg = ctx.file.scenario.clone().unwrap_or_default();
    cfg.seed = ctx.seed;
    if let Some(k) = a.kind {
        cfg.kind = Some(scenario_kind(k));
    }
    if let Some(c) = a.captions {
        cfg.captions_per_scene = c;
    }
    if let Some(v) = &a.vehicles {
        cfg.vehicles = v
            .as_slice()
            .try_into()
            .map_err(|_| usage(format!("--vehicles needs MIN,MAX, got {} values", v.len())))?;
    }
    check(cfg.validate())?;
    let n = a.n.or(ctx.file.n).unwrap_or(DEFAULT_SCENES);
    if n == 0 {
        return Err(usage("--n must be at least 1"));
    }

    let out = ctx.out_dir()?;
    let files = generate_dataset(&cfg, n as usize, out, &CaptionTemplates::default())?;
    ctx.write_manifest(
        "generate",
        json!({ "n": n, "scenario": cfg }),
        json!({}),
        &["scenes.jsonl", "stats.json"],
    )?;
    println!(
        "wrote {} scenes to {} ({} empty cells)",
        files.summary.scenes,
        files.scenes.display(),
        files.summary.empty_cells().len()
    );
    Ok(())
}

/// A single descriptor JSON object, or JSONL records with a `descriptor`.
enum DescriptorInput {
    Single(SceneDescriptor),
    Records(Vec<(u64, SceneDescriptor)>),
}

fn read_descriptors(path: &Path) -> Result<DescriptorInput> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(v) = serde_json::from_str::<Value>(&text) {
        if v.get("descriptor").is_none() {
            return Ok(DescriptorInput::Single(SceneDescriptor::from_json_value(&v)?));
        }
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        let id = v.get("scene_id").and_then(Value::as_u64).unwrap_or(out.len() as u64);
        let d = v
            .get("descriptor")
            .with_context(|| format!("{}:{}: no descriptor field", path.display(), i + 1))?;
        out.push((id, SceneDescriptor::from_json_value(d)?));
    }
    Ok(DescriptorInput::Records(out))
}

fn hash(a: HashArgs) -> Result<()> {
    if let Some(hex) = a.decode {
        let h = SceneHash::from_hex(hex.trim())?;
        println!("{}", decode_hash(&h).to_json_pretty());
        return Ok(());
    }
    let layout = if a.thermometer {
        HashLayout::THERMOMETER
    } else {
        HashLayout::BINARY
    };
    let path = a.input.expect("clap requires --input without --decode");
    match read_descriptors(&path)? {
        DescriptorInput::Single(d) => println!("{}", encode_hash_with(&d, layout).to_hex()),
        DescriptorInput::Records(records) => {
            for (id, d) in records {
                println!("{id}\t{}", encode_hash_with(&d, layout).to_hex());
            }
        }
    }
    Ok(())
}

fn load_records(path: &Path, n: Option<u64>) -> Result<Vec<SceneRecord>> {
    let mut records = read_dataset(path)?;
    if let Some(n) = n {
        if records.len() < n as usize {
            bail!("{} has {} records, {n} requested", path.display(), records.len());
        }
        records.truncate(n as usize);
    }
    Ok(records)
}

fn targets(ctx: &RunContext, a: TargetsArgs) -> Result<()> {
    let kernel = ctx.kernel(&a.kernel)?;
    let expected = HashLayout::from_version(&a.layout).map_err(|e| usage(e.to_string()))?;
    let records = load_records(&a.dataset, a.n.or(ctx.file.n))?;
    let mut hashes = Vec::with_capacity(records.len());
    for r in &records {
        let h = SceneHash::from_hex(&r.hash_hex).with_context(|| format!("scene {}", r.scene_id))?;
        if h.layout() != expected {
            bail!(
                "scene {} uses hash layout {}, expected {}",
                r.scene_id,
                h.layout().version(),
                expected.version()
            );
        }
        hashes.push(h);
    }
    let ids = records.iter().map(|r| r.scene_id).collect();
    let t = soft_target_matrix_with_ids(&hashes, ids, &kernel)?;

    let out = ctx.out_dir()?;
    let meta = json!({
        "sigmas": kernel.sigmas,
        "lambda": kernel.lambda,
        "ids": t.ids(),
    });
    let bin_path = out.join("targets.bin");
    let f = File::create(&bin_path).with_context(|| format!("creating {}", bin_path.display()))?;
    write_matrix(BufWriter::new(f), t.values(), expected.version(), meta)?;
    let csv_path = out.join("targets.csv");
    let mut w = BufWriter::new(File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?);
    t.write_csv(&mut w)?;
    w.flush()?;
    ctx.write_manifest(
        "targets",
        json!({ "kernel": kernel, "layout": expected.version(), "n": t.len() }),
        json!({ "dataset": path_value(&a.dataset) }),
        &["targets.bin", "targets.csv"],
    )?;
    println!("{}x{} soft targets", t.len(), t.len());
    println!("max row-sum deviation: {:.3e}", t.max_row_sum_deviation());
    Ok(())
}

fn train(ctx: &RunContext, a: TrainArgs) -> Result<()> {
    let mut cfg = AlignConfig {
        kernel: ctx.kernel(&a.kernel)?,
        loss: ctx.file.loss.unwrap_or_default(),
        trainer: ctx.file.trainer.unwrap_or_default(),
    };
    cfg.trainer.seed = ctx.seed;
    if let Some(t) = a.tau {
        cfg.loss.temperature = t;
    }
    if let Some(d) = a.direction {
        cfg.loss.direction = match d {
            DirectionArg::RadarToText => LossDirection::RadarToText,
            DirectionArg::TextToRadar => LossDirection::TextToRadar,
            DirectionArg::Symmetric => LossDirection::Symmetric,
        };
    }
    if let Some(i) = a.iterations {
        cfg.trainer.iterations = i;
    }
    if let Some(d) = a.dim {
        cfg.trainer.dim = d;
    }
    if let Some(s) = a.step {
        cfg.trainer.step_size = s;
    }
    check(cfg.loss.validate())?;
    check(cfg.trainer.validate())?;
    let n = a.n.or(ctx.file.n).unwrap_or(DEFAULT_BATCH);

    let records = match &a.dataset {
        Some(path) => load_records(path, Some(n))?,
        None => {
            let mut scenario = ctx.file.scenario.clone().unwrap_or_default();
            scenario.seed = ctx.seed;
            check(scenario.validate())?;
            let templates = CaptionTemplates::default();
            (0..n)
                .map(|id| scene_record(&scenario, &generate_scene(&scenario, id)?, &templates))
                .collect::<radscene::Result<Vec<_>>>()?
        }
    };
    let hashes = records
        .iter()
        .map(|r| SceneHash::from_hex(&r.hash_hex).with_context(|| format!("scene {}", r.scene_id)))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<u64> = records.iter().map(|r| r.scene_id).collect();
    let targets = soft_target_matrix_with_ids(&hashes, ids.clone(), &cfg.kernel)?;
    let result = toy_align_targets(targets, &cfg)?;
    let rho = result.mean_row_spearman();

    let out = ctx.out_dir()?;
    write_json(&out.join("history.json"), &serde_json::to_value(&result.history)?)?;
    let meta = json!({ "seed": ctx.seed, "ids": ids });
    for (name, side, m) in [
        ("radar.bin", "radar", result.embeddings.radar()),
        ("text.bin", "text", result.embeddings.text()),
        ("similarity.bin", "similarity", result.similarity.view()),
    ] {
        let path = out.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_matrix(BufWriter::new(f), m, side, meta.clone())?;
    }

    // nearest text for every radar embedding, as a caption prediction
    let path = out.join("retrieval.jsonl");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    for (i, row) in result.similarity.rows().into_iter().enumerate() {
        let best = row.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc },
        );
        let caption = records[best.0].captions.first().cloned().unwrap_or_default();
        let line = json!({
            "scene_id": records[i].scene_id,
            "retrieved_scene_id": records[best.0].scene_id,
            "similarity": best.1,
            "caption": caption,
        });
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;

    ctx.write_manifest(
        "train",
        json!({
            "n": records.len(),
            "tau": cfg.loss.temperature,
            "lambda": cfg.kernel.lambda,
            "sigmas": cfg.kernel.sigmas,
            "loss": cfg.loss,
            "trainer": cfg.trainer,
        }),
        json!({ "dataset": a.dataset.as_deref().map(path_value) }),
        &[
            "history.json",
            "radar.bin",
            "text.bin",
            "similarity.bin",
            "retrieval.jsonl",
        ],
    )?;
    let h = &result.history;
    println!(
        "loss {:.6} -> {:.6} over {} iterations ({} rejected steps)",
        h.loss[0],
        h.loss[h.loss.len() - 1],
        h.iterations,
        h.rejected_steps
    );
    println!("mean row spearman(S, T): {rho:.4}");
    Ok(())
}

fn caption(ctx: &RunContext, a: CaptionArgs) -> Result<()> {
    let templates = CaptionTemplates::default();
    let render = |d: &SceneDescriptor| -> Result<Vec<String>> {
        (0..a.count as u64)
            .map(|k| Ok(generate_caption(d, ctx.seed.wrapping_add(k), &templates)?.text))
            .collect()
    };
    match read_descriptors(&a.input)? {
        DescriptorInput::Single(d) => {
            for c in render(&d)? {
                println!("{c}");
            }
        }
        DescriptorInput::Records(records) => {
            for (id, d) in records {
                println!("{}", json!({ "scene_id": id, "captions": render(&d)? }));
            }
        }
    }
    Ok(())
}

fn caption_field(v: &Value) -> Option<&str> {
    v.get("caption")
        .and_then(Value::as_str)
        .or_else(|| v.get("captions")?.get(0)?.as_str())
        .or_else(|| v.as_str())
}

fn parse(a: ParseArgs) -> Result<()> {
    let templates = CaptionTemplates::default();
    let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let jsonl = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.trim_start().starts_with(['{', '"']));
    if !jsonl {
        let p = parse_caption(&text, &templates);
        for d in &p.diagnostics {
            eprintln!("warning: {d}");
        }
        println!("{}", p.descriptor.to_json_pretty());
        return Ok(());
    }
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).with_context(|| format!("{}:{}", a.input.display(), i + 1))?;
        let c = caption_field(&v).with_context(|| format!("{}:{}: no caption", a.input.display(), i + 1))?;
        let p = parse_caption(c, &templates);
        let diagnostics: Vec<String> = p.diagnostics.iter().map(ToString::to_string).collect();
        println!(
            "{}",
            json!({
                "scene_id": v.get("scene_id"),
                "descriptor": p.descriptor,
                "diagnostics": diagnostics,
            })
        );
    }
    Ok(())
}

fn read_jsonl_values(path: &Path) -> Result<Vec<(usize, Value)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut values = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        match serde_json::from_str::<Value>(line) {
            Ok(v) => values.push((i + 1, v)),
            Err(e) => bad.push(format!("  line {}: {e}", i + 1)),
        }
    }
    if !bad.is_empty() {
        bail!("unparseable lines in {}:\n{}", path.display(), bad.join("\n"));
    }
    Ok(values)
}

fn eval(ctx: &RunContext, a: EvalArgs) -> Result<()> {
    let templates = CaptionTemplates::default();
    let mut truth: Vec<(u64, SceneDescriptor)> = Vec::new();
    for (line, v) in read_jsonl_values(&a.truth)? {
        let id = v
            .get("scene_id")
            .and_then(Value::as_u64)
            .with_context(|| format!("{}:{line}: no scene_id", a.truth.display()))?;
        let d = v
            .get("descriptor")
            .with_context(|| format!("{}:{line}: no descriptor", a.truth.display()))?;
        let d = SceneDescriptor::from_json_value(d).with_context(|| format!("{}:{line}", a.truth.display()))?;
        truth.push((id, d));
    }

    let mut preds: BTreeMap<u64, SceneDescriptor> = BTreeMap::new();
    let mut problems = Vec::new();
    let mut diagnostics: Vec<Value> = Vec::new();
    for (line, v) in read_jsonl_values(&a.pred)? {
        let Some(id) = v.get("scene_id").and_then(Value::as_u64) else {
            problems.push(format!("  line {line}: no scene_id"));
            continue;
        };
        let caption = caption_field(&v).filter(|_| a.source != PredSource::Descriptor);
        let descriptor = v.get("descriptor").filter(|_| a.source != PredSource::Caption);
        let d = match (caption, descriptor) {
            (Some(c), _) => {
                let p = parse_caption(c, &templates);
                if !p.diagnostics.is_empty() {
                    let msgs: Vec<String> = p.diagnostics.iter().map(ToString::to_string).collect();
                    for m in &msgs {
                        eprintln!("scene {id}: {m}");
                    }
                    diagnostics.push(json!({ "scene_id": id, "diagnostics": msgs }));
                }
                p.descriptor
            }
            (None, Some(d)) => match SceneDescriptor::from_json_value(d) {
                Ok(d) => d,
                Err(e) => {
                    problems.push(format!("  line {line}: {e}"));
                    continue;
                }
            },
            (None, None) => {
                problems.push(format!("  line {line}: no usable prediction field"));
                continue;
            }
        };
        if preds.insert(id, d).is_some() {
            problems.push(format!("  line {line}: duplicate scene_id {id}"));
        }
    }
    let known: BTreeSet<u64> = truth.iter().map(|(id, _)| *id).collect();
    for id in preds.keys().filter(|id| !known.contains(id)) {
        problems.push(format!("  scene {id}: not in {}", a.truth.display()));
    }
    if !a.subset {
        for (id, _) in truth.iter().filter(|(id, _)| !preds.contains_key(id)) {
            problems.push(format!("  scene {id}: no prediction"));
        }
    }
    if !problems.is_empty() {
        const SHOWN: usize = 20;
        let more = problems.len().saturating_sub(SHOWN);
        problems.truncate(SHOWN);
        if more > 0 {
            problems.push(format!("  ... and {more} more"));
        }
        bail!("unusable predictions in {}:\n{}", a.pred.display(), problems.join("\n"));
    }

    let pairs: Vec<_> = truth
        .iter()
        .filter_map(|(id, t)| Some((preds.get(id)?.clone(), t.clone())))
        .collect();
    let report = evaluate(&pairs)?;
    let out = ctx.out_dir()?;
    std::fs::write(out.join("report.csv"), report.to_csv()).context("writing report.csv")?;
    let mut summary = report.summary_json();
    summary["parse_diagnostics"] = Value::Array(diagnostics);
    write_json(&out.join("report.json"), &summary)?;
    ctx.write_manifest(
        "eval",
        json!({ "source": format!("{:?}", a.source).to_lowercase(), "subset": a.subset, "verify": a.verify }),
        json!({ "pred": path_value(&a.pred), "truth": path_value(&a.truth) }),
        &["report.csv", "report.json"],
    )?;

    println!("{} scenes", report.scenes);
    for (bin, m) in radscene::scene::DistanceBin::ALL.iter().zip(&report.bin_means) {
        match m.f1 {
            Some(f1) => println!("  {:<7} mean f1 {f1:.4} over {} cells", bin.key(), m.cells),
            None => println!("  {:<7} no vehicles", bin.key()),
        }
    }
    println!(
        "overall precision {:.4} recall {:.4} f1 {:.4}",
        report.overall_precision, report.overall_recall, report.overall_f1
    );
    if a.verify {
        let issues = report.verify();
        if !issues.is_empty() {
            bail!("report failed verification:\n  {}", issues.join("\n  "));
        }
        println!("verify: ok");
    }
    Ok(())
}
