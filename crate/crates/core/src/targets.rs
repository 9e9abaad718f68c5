//! Soft similarity targets from scene hashes.
//!
//! Per-bin Hamming distances go through a Gaussian kernel
//! `s_b = exp(-d^2 / (2 sigma_b^2))`, are combined with decaying bin weights
//! `w_b = lambda^(b-1)` and row-normalized into a stochastic matrix.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{hamming_bin, SceneHash};
use crate::scene::DistanceBin;

pub const DEFAULT_SIGMAS: [f64; 4] = [1.0, 1.5, 2.0, 2.5];
pub const DEFAULT_LAMBDA: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    /// Per-bin bandwidths, nearest bin first.
    pub sigmas: [f64; 4],
    /// Bin weight decay rate in `(0, 1]`.
    pub lambda: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            sigmas: DEFAULT_SIGMAS,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::config(format!("kernel bandwidths must be positive, got {s}")));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::config(format!("lambda must lie in (0, 1], got {}", self.lambda)));
        }
        Ok(())
    }

    pub fn sigma(&self, bin: DistanceBin) -> f64 {
        self.sigmas[bin.slot()]
    }
}

/// `exp(-d^2 / (2 sigma^2))`.
pub fn gaussian_kernel(hamming: u32, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::config(format!("kernel bandwidth must be positive, got {sigma}")));
    }
    let d = f64::from(hamming);
    Ok((-(d * d) / (2.0 * sigma * sigma)).exp())
}

pub fn kernel_similarity(a: &SceneHash, b: &SceneHash, bin: DistanceBin, cfg: &KernelConfig) -> Result<f64> {
    gaussian_kernel(hamming_bin(a, b, bin)?, cfg.sigma(bin))
}

pub fn bin_weights(cfg: &KernelConfig) -> Result<[f64; 4]> {
    cfg.validate()?;
    Ok(std::array::from_fn(|b| cfg.lambda.powi(b as i32)))
}

/// Unnormalized `sum_b w_b s_b` for one pair.
pub fn weighted_similarity(a: &SceneHash, b: &SceneHash, cfg: &KernelConfig) -> Result<f64> {
    let w = bin_weights(cfg)?;
    DistanceBin::ALL.iter().try_fold(0.0, |acc, &bin| {
        Ok(acc + w[bin.slot()] * kernel_similarity(a, b, bin, cfg)?)
    })
}

/// Row-stochastic soft target matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTargetMatrix {
    values: Array2<f64>,
    ids: Vec<u64>,
}

impl SoftTargetMatrix {
    /// Wraps an arbitrary square matrix after checking it is row-stochastic
    /// within `tol`.
    pub fn from_values(values: Array2<f64>, ids: Vec<u64>, tol: f64) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(Error::InvalidTarget(format!(
                "target matrix is {}x{}",
                n,
                values.ncols()
            )));
        }
        if ids.len() != n {
            return Err(Error::InvalidTarget(format!("{} ids for {n} rows", ids.len())));
        }
        check_row_stochastic(values.view(), tol)?;
        Ok(Self { values, ids })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            values: Array2::eye(n),
            ids: (0..n as u64).collect(),
        }
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn transpose(&self) -> Array2<f64> {
        self.values.t().to_owned()
    }

    /// Largest `|sum_j T_ij - 1|`.
    pub fn max_row_sum_deviation(&self) -> f64 {
        self.values
            .rows()
            .into_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Rows whose maximum is attained at more than one column.
    pub fn tied_row_maxima(&self) -> Vec<usize> {
        self.values
            .rows()
            .into_iter()
            .enumerate()
            .filter(|(_, r)| {
                let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                r.iter().filter(|&&v| v == m).count() > 1
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// `row,col,value` CSV with a header line; rows and columns are scene ids.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "row,col,value")?;
        for ((i, j), v) in self.values.indexed_iter() {
            writeln!(w, "{},{},{:.17e}", self.ids[i], self.ids[j], v)?;
        }
        Ok(())
    }
}

pub(crate) fn check_row_stochastic(values: ArrayView2<'_, f64>, tol: f64) -> Result<()> {
    for (i, row) in values.rows().into_iter().enumerate() {
        if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidTarget(format!("row {i} has entry {v}")));
        }
        let sum = row.sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::InvalidTarget(format!("row {i} sums to {sum}")));
        }
    }
    Ok(())
}

/// `T_ij = sum_b w_b s_ij^(b) / sum_k sum_b w_b s_ik^(b)`.
///
/// Rows and columns are labelled `0..N`; use
/// [`soft_target_matrix_with_ids`] to carry scene ids.
pub fn soft_target_matrix(hashes: &[SceneHash], cfg: &KernelConfig) -> Result<SoftTargetMatrix> {
    soft_target_matrix_with_ids(hashes, (0..hashes.len() as u64).collect(), cfg)
}

pub fn soft_target_matrix_with_ids(
    hashes: &[SceneHash],
    ids: Vec<u64>,
    cfg: &KernelConfig,
) -> Result<SoftTargetMatrix> {
    let n = hashes.len();
    if n < 2 {
        return Err(Error::InvalidBatch(format!(
            "soft targets need at least 2 scenes, got {n}"
        )));
    }
    if ids.len() != n {
        return Err(Error::InvalidBatch(format!("{} ids for {n} scenes", ids.len())));
    }
    cfg.validate()?;
    let layout = hashes[0].layout();
    if let Some(h) = hashes.iter().find(|h| h.layout() != layout) {
        return Err(Error::LayoutMismatch {
            expected: layout.version().into(),
            found: h.layout().version().into(),
        });
    }

    // the kernel is symmetric, so fill the upper triangle and mirror
    let mut sim = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let s = weighted_similarity(&hashes[i], &hashes[j], cfg)?;
            sim[[i, j]] = s;
            sim[[j, i]] = s;
        }
    }
    for mut row in sim.rows_mut() {
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    Ok(SoftTargetMatrix { values: sim, ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::{encode_hash, HashLayout};
    use crate::scene::{SceneDescriptor, SectorLabel};

    fn bin(i: u8) -> DistanceBin {
        DistanceBin::new(i).unwrap()
    }

    #[test]
    fn kernel_spot_values() {
        assert_eq!(gaussian_kernel(0, 1.3).unwrap(), 1.0);
        assert!((gaussian_kernel(2, 2.0).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        assert!((gaussian_kernel(2, 2.0).unwrap() - 0.606531).abs() < 1e-6);
        assert!(gaussian_kernel(1, 0.0).is_err());
        assert!(gaussian_kernel(1, -1.0).is_err());
    }

    #[test]
    fn weights() {
        let w = |l| {
            bin_weights(&KernelConfig {
                lambda: l,
                ..Default::default()
            })
        };
        assert_eq!(w(1.0).unwrap(), [1.0; 4]);
        let w85 = w(0.85).unwrap();
        for (a, b) in w85.iter().zip([1.0, 0.85, 0.7225, 0.614125]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(w(0.5).unwrap(), [1.0, 0.5, 0.25, 0.125]);
        assert!(w(0.0).is_err());
        assert!(w(1.01).is_err());
    }

    #[test]
    fn identical_batch_is_uniform() {
        let h = encode_hash(&SceneDescriptor::new());
        let t = soft_target_matrix(&vec![h; 5], &KernelConfig::default()).unwrap();
        for v in t.values() {
            assert!((v - 0.2).abs() < 1e-15);
        }
        assert_eq!(t.tied_row_maxima().len(), 5);
    }

    #[test]
    fn two_scene_hand_example() {
        // bin 1 differs by two bits: count 3 (011) vs count 0 in a 3-bit field
        let a = SceneDescriptor::new();
        let mut b = SceneDescriptor::new();
        b.set_count(bin(1), SectorLabel::LeftSide, 3);
        let hs = [encode_hash(&a), encode_hash(&b)];
        assert_eq!(hamming_bin(&hs[0], &hs[1], bin(1)).unwrap(), 2);
        let cfg = KernelConfig::default();
        let t = soft_target_matrix(&hs, &cfg).unwrap();
        // scalar evaluation: self = 1 + .85 + .7225 + .614125
        let self_sim = 3.186625;
        let cross = (-2.0f64).exp() + 2.186625;
        assert!((t.get(0, 0) - self_sim / (self_sim + cross)).abs() < 1e-12);
        // 3.186625 / 5.508585 = 0.5784834
        assert!((t.get(0, 0) - 0.578_483_4).abs() < 1e-7);
        assert!((t.get(1, 0) - cross / (self_sim + cross)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_batches() {
        let h = encode_hash(&SceneDescriptor::new());
        assert!(matches!(
            soft_target_matrix(std::slice::from_ref(&h), &KernelConfig::default()),
            Err(Error::InvalidBatch(_))
        ));
        let th = crate::hash::encode_hash_with(&SceneDescriptor::new(), HashLayout::THERMOMETER);
        assert!(matches!(
            soft_target_matrix(&[h.clone(), th], &KernelConfig::default()),
            Err(Error::LayoutMismatch { .. })
        ));
        let bad = KernelConfig {
            sigmas: [1.0, 0.0, 1.0, 1.0],
            ..Default::default()
        };
        assert!(soft_target_matrix(&[h.clone(), h], &bad).is_err());
    }

    #[test]
    fn from_values_checks_rows() {
        let ok = Array2::from_shape_vec((2, 2), vec![0.5, 0.5, 0.1, 0.9]).unwrap();
        assert!(SoftTargetMatrix::from_values(ok, vec![0, 1], 1e-9).is_ok());
        let bad = Array2::from_shape_vec((2, 2), vec![0.5, 0.6, 0.1, 0.9]).unwrap();
        assert!(SoftTargetMatrix::from_values(bad, vec![0, 1], 1e-6).is_err());
        let neg = Array2::from_shape_vec((2, 2), vec![1.5, -0.5, 0.1, 0.9]).unwrap();
        assert!(SoftTargetMatrix::from_values(neg, vec![0, 1], 1e-6).is_err());
    }

    #[test]
    fn csv_export() {
        let t = SoftTargetMatrix::identity(2);
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "row,col,value");
        assert!(lines[1].starts_with("0,0,1.0"));
    }
}
