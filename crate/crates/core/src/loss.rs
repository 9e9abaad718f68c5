//! Hash-aware soft contrastive loss with analytic gradients.
//!
//! For cosine similarities `S` and a row-stochastic target `T`:
//!
//! ```text
//! L_rt = -(1/N) sum_i sum_j T_ij log softmax_j(S_ij / tau)
//! L_tr = -(1/N) sum_j sum_i T'_ji log softmax_i(S_ij / tau)
//! L    = (L_rt + L_tr) / 2
//! ```
//!
//! `T'` is the text-side target. Built from the same hashes it equals `T`
//! because the kernel is symmetric; only the softmax axis changes.
//!
//! Gradients. With `P` the row softmax of `S / tau` and `r_i = sum_j T_ij`:
//!
//! ```text
//! dL_rt/dS_ij = (P_ij r_i - T_ij) / (N tau)
//! ```
//!
//! and `L_tr` contributes the same expression evaluated on `S^T`, transposed
//! back. Through the cosine normalization, with `a_i = z_r^i`, `b_j = z_t^j`
//! and hats for unit vectors, `G = dL/dS`:
//!
//! ```text
//! dL/da_i = (sum_j G_ij b^_j - (sum_j G_ij S_ij) a^_i) / |a_i|
//! dL/db_j = (sum_i G_ij a^_i - (sum_i G_ij S_ij) b^_j) / |b_j|
//! ```

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::targets::{check_row_stochastic, SoftTargetMatrix};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;
/// Row-sum tolerance accepted for target matrices.
pub const TARGET_TOLERANCE: f64 = 1e-6;

/// Paired radar and text embeddings, one row per scene.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    radar: Array2<f64>,
    text: Array2<f64>,
}

impl EmbeddingBatch {
    pub fn new(radar: Array2<f64>, text: Array2<f64>) -> Result<Self> {
        if radar.dim() != text.dim() {
            return Err(Error::input(format!(
                "radar embeddings are {:?} but text embeddings are {:?}",
                radar.dim(),
                text.dim()
            )));
        }
        if radar.nrows() == 0 || radar.ncols() == 0 {
            return Err(Error::input("embedding batch is empty"));
        }
        for (side, m) in [("radar", &radar), ("text", &text)] {
            for (i, row) in m.rows().into_iter().enumerate() {
                let norm = row.dot(&row).sqrt();
                if !(norm > 0.0 && norm.is_finite()) {
                    return Err(Error::input(format!("{side} row {i} has norm {norm}")));
                }
            }
        }
        Ok(Self { radar, text })
    }

    pub fn radar(&self) -> ArrayView2<'_, f64> {
        self.radar.view()
    }

    pub fn text(&self) -> ArrayView2<'_, f64> {
        self.text.view()
    }

    pub fn len(&self) -> usize {
        self.radar.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.radar.ncols()
    }

    /// Same embeddings with the radar and text roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            radar: self.text.clone(),
            text: self.radar.clone(),
        }
    }

    pub fn into_parts(self) -> (Array2<f64>, Array2<f64>) {
        (self.radar, self.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossDirection {
    RadarToText,
    TextToRadar,
    #[default]
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub temperature: f64,
    pub direction: LossDirection,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            direction: LossDirection::Symmetric,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_radar: Array2<f64>,
    pub grad_text: Array2<f64>,
    pub similarity: Array2<f64>,
}

fn unit_rows(m: ArrayView2<'_, f64>) -> (Array2<f64>, Array1<f64>) {
    let norms: Array1<f64> = m.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let unit = &m / &norms.view().insert_axis(Axis(1));
    (unit, norms)
}

fn cosine_parts(batch: &EmbeddingBatch) -> (Array2<f64>, Array2<f64>, Array1<f64>, Array2<f64>, Array1<f64>) {
    let (ra, na) = unit_rows(batch.radar.view());
    let (tb, nb) = unit_rows(batch.text.view());
    let s = ra.dot(&tb.t()).mapv(|v| v.clamp(-1.0, 1.0));
    (s, ra, na, tb, nb)
}

/// `S_ij = cos(z_r^i, z_t^j)`.
pub fn cosine_similarity_matrix(batch: &EmbeddingBatch) -> Array2<f64> {
    cosine_parts(batch).0
}

/// Row softmax of `scores / tau` with max subtraction.
pub fn softmax_rows(scores: ArrayView2<'_, f64>, tau: f64) -> Array2<f64> {
    let mut p = scores.mapv(|v| v / tau);
    for mut row in p.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    p
}

/// Mean over rows of the cross-entropy between `targets` rows and
/// `softmax(scores / tau)` rows, and its gradient with respect to `scores`.
pub fn soft_cross_entropy(scores: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>, tau: f64) -> (f64, Array2<f64>) {
    let n = scores.nrows() as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros(scores.dim());
    for ((s_row, t_row), mut g_row) in scores.rows().into_iter().zip(targets.rows()).zip(grad.rows_mut()) {
        let z = s_row.mapv(|v| v / tau);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let t_sum = t_row.sum();
        for ((&zj, &tj), g) in z.iter().zip(t_row).zip(g_row.iter_mut()) {
            let log_p = zj - lse;
            if tj != 0.0 {
                value -= tj * log_p;
            }
            *g = (log_p.exp() * t_sum - tj) / (n * tau);
        }
    }
    (value / n, grad)
}

/// Soft contrastive loss using `targets` for both directions.
pub fn hash_clip_loss(batch: &EmbeddingBatch, targets: &SoftTargetMatrix, cfg: &LossConfig) -> Result<LossOutput> {
    let t = targets.values();
    hash_clip_loss_directional(batch, t, t, cfg)
}

/// Soft contrastive loss with separate targets per direction.
///
/// `radar_to_text[i][j]` weights text `j` for radar query `i`;
/// `text_to_radar[j][i]` weights radar `i` for text query `j`.
pub fn hash_clip_loss_directional(
    batch: &EmbeddingBatch,
    radar_to_text: ArrayView2<'_, f64>,
    text_to_radar: ArrayView2<'_, f64>,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    let n = batch.len();
    for t in [&radar_to_text, &text_to_radar] {
        if t.dim() != (n, n) {
            return Err(Error::InvalidTarget(format!(
                "target matrix is {:?}, batch has {n} scenes",
                t.dim()
            )));
        }
        check_row_stochastic(t.view(), TARGET_TOLERANCE)?;
    }
    let tau = cfg.temperature;
    let (s, ra, na, tb, nb) = cosine_parts(batch);

    let (value, grad_s) = match cfg.direction {
        LossDirection::RadarToText => soft_cross_entropy(s.view(), radar_to_text, tau),
        LossDirection::TextToRadar => {
            let (v, g) = soft_cross_entropy(s.t(), text_to_radar, tau);
            (v, g.reversed_axes())
        }
        LossDirection::Symmetric => {
            let (v1, g1) = soft_cross_entropy(s.view(), radar_to_text, tau);
            let (v2, g2) = soft_cross_entropy(s.t(), text_to_radar, tau);
            (0.5 * (v1 + v2), (g1 + g2.reversed_axes()) * 0.5)
        }
    };

    // chain rule through the cosine normalization
    let gs = &grad_s * &s;
    let coef_a = gs.sum_axis(Axis(1));
    let coef_b = gs.sum_axis(Axis(0));
    let mut grad_radar = grad_s.dot(&tb);
    Zip::from(grad_radar.rows_mut())
        .and(ra.rows())
        .and(&coef_a)
        .and(&na)
        .for_each(|mut g, a, &c, &norm| {
            g.scaled_add(-c, &a);
            g.mapv_inplace(|v| v / norm);
        });
    let mut grad_text = grad_s.t().dot(&ra);
    Zip::from(grad_text.rows_mut())
        .and(tb.rows())
        .and(&coef_b)
        .and(&nb)
        .for_each(|mut g, b, &c, &norm| {
            g.scaled_add(-c, &b);
            g.mapv_inplace(|v| v / norm);
        });

    Ok(LossOutput {
        value,
        grad_radar,
        grad_text,
        similarity: s,
    })
}
