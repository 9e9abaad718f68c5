//! Toy alignment trainer: free per-scene embeddings fitted to the soft
//! targets by full-batch gradient descent.
//!
//! A step is accepted only if it does not increase the loss; otherwise the
//! step size is halved and the step retried. Accepted steps grow the step
//! size by `growth`, so the recorded history is non-increasing.

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{encode_hash, SceneHash};
use crate::loss::{hash_clip_loss, EmbeddingBatch, LossConfig, LossOutput};
use crate::scene::SceneDescriptor;
use crate::stats::spearman;
use crate::targets::{soft_target_matrix, KernelConfig, SoftTargetMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSettings {
    pub step_size: f64,
    pub iterations: usize,
    pub seed: u64,
    pub dim: usize,
    pub growth: f64,
    pub max_halvings: u32,
}

impl Default for TrainerSettings {
    fn default() -> Self {
        Self {
            step_size: 1.0,
            iterations: 500,
            seed: 0,
            dim: 32,
            growth: 1.2,
            max_halvings: 60,
        }
    }
}

impl TrainerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.dim == 0 {
            return Err(Error::config("embedding dimension must be positive"));
        }
        if !(self.growth >= 1.0 && self.growth.is_finite()) {
            return Err(Error::config(format!("step growth must be >= 1, got {}", self.growth)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub kernel: KernelConfig,
    pub loss: LossConfig,
    pub trainer: TrainerSettings,
}

/// Serializable run record: effective config plus per-iteration losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub seed: u64,
    pub tau: f64,
    pub lambda: f64,
    pub sigmas: Vec<f64>,
    pub step_size: f64,
    pub iterations: usize,
    pub dim: usize,
    pub scenes: usize,
    /// `loss[0]` is the initial loss, `loss[k]` the loss after iteration k.
    pub loss: Vec<f64>,
    pub rejected_steps: usize,
}

impl TrainHistory {
    pub fn is_non_increasing(&self) -> bool {
        self.loss.windows(2).all(|w| w[1] <= w[0])
    }
}

#[derive(Debug, Clone)]
pub struct AlignResult {
    pub embeddings: EmbeddingBatch,
    pub targets: SoftTargetMatrix,
    pub history: TrainHistory,
    pub similarity: Array2<f64>,
}

impl AlignResult {
    /// Mean over rows of the Spearman correlation between `S_i.` and `T_i.`.
    /// Rows where either side is constant are skipped.
    pub fn mean_row_spearman(&self) -> f64 {
        mean_row_spearman(&self.similarity, &self.targets)
    }
}

pub fn mean_row_spearman(similarity: &Array2<f64>, targets: &SoftTargetMatrix) -> f64 {
    let t = targets.values();
    let rhos: Vec<f64> = similarity
        .axis_iter(Axis(0))
        .zip(t.axis_iter(Axis(0)))
        .filter_map(|(s, t)| spearman(&s.to_vec(), &t.to_vec()))
        .collect();
    rhos.iter().sum::<f64>() / rhos.len().max(1) as f64
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    let scale = 1.0 / (d as f64).sqrt();
    Array2::from_shape_simple_fn((n, d), || {
        let v: f64 = StandardNormal.sample(rng);
        v * scale
    })
}

pub fn toy_align(scenes: &[SceneDescriptor], cfg: &AlignConfig) -> Result<AlignResult> {
    let hashes: Vec<SceneHash> = scenes.iter().map(encode_hash).collect();
    let targets = soft_target_matrix(&hashes, &cfg.kernel)?;
    toy_align_targets(targets, cfg)
}

/// Trainer entry point for a precomputed target matrix.
pub fn toy_align_targets(targets: SoftTargetMatrix, cfg: &AlignConfig) -> Result<AlignResult> {
    cfg.loss.validate()?;
    cfg.trainer.validate()?;
    let settings = cfg.trainer;
    let n = targets.len();
    if n < 2 {
        return Err(Error::InvalidBatch(format!("need at least 2 scenes, got {n}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let radar = random_matrix(&mut rng, n, settings.dim);
    let text = random_matrix(&mut rng, n, settings.dim);
    let mut batch = EmbeddingBatch::new(radar, text)?;
    let mut current: LossOutput = hash_clip_loss(&batch, &targets, &cfg.loss)?;
    if !current.value.is_finite() {
        return Err(Error::TrainingFailure {
            iteration: 0,
            loss: current.value,
        });
    }

    let mut losses = Vec::with_capacity(settings.iterations + 1);
    losses.push(current.value);
    let mut step = settings.step_size;
    let mut rejected = 0;
    for iteration in 1..=settings.iterations {
        let mut accepted = false;
        for _ in 0..=settings.max_halvings {
            let radar = &batch.radar() - &(&current.grad_radar * step);
            let text = &batch.text() - &(&current.grad_text * step);
            let trial = EmbeddingBatch::new(radar, text).and_then(|b| {
                let out = hash_clip_loss(&b, &targets, &cfg.loss)?;
                Ok((b, out))
            });
            match trial {
                Ok((b, out)) if out.value.is_finite() && out.value <= current.value => {
                    batch = b;
                    current = out;
                    step *= settings.growth;
                    accepted = true;
                    break;
                }
                _ => {
                    rejected += 1;
                    step /= 2.0;
                }
            }
        }
        if !current.value.is_finite() {
            return Err(Error::TrainingFailure {
                iteration,
                loss: current.value,
            });
        }
        if !accepted {
            // stalled at numerical precision; keep the iterate
            step = settings.step_size;
        }
        losses.push(current.value);
    }

    let history = TrainHistory {
        seed: settings.seed,
        tau: cfg.loss.temperature,
        lambda: cfg.kernel.lambda,
        sigmas: cfg.kernel.sigmas.to_vec(),
        step_size: settings.step_size,
        iterations: settings.iterations,
        dim: settings.dim,
        scenes: n,
        loss: losses,
        rejected_steps: rejected,
    };
    Ok(AlignResult {
        similarity: current.similarity,
        embeddings: batch,
        targets,
        history,
    })
}
