//! Independent oracles and generators shared by integration tests.
#![allow(dead_code)]

use proptest::prelude::*;
use radscene::hash::HashLayout;
use radscene::scene::{DistanceBin, SceneDescriptor, SectorLabel, SignKind};
use rand::Rng;

/// Random descriptor with every field inside its hash capacity.
/// Cells are sparse: each is empty with probability `1 - fill`.
pub fn random_descriptor<R: Rng>(rng: &mut R, fill: f64) -> SceneDescriptor {
    let mut d = SceneDescriptor::new();
    for bin in DistanceBin::ALL {
        for sector in SectorLabel::ALL {
            if rng.random_bool(fill) {
                d.set_count(bin, sector, rng.random_range(1..=HashLayout::capacity(sector)));
            }
        }
    }
    for sign in SignKind::ALL {
        if rng.random_bool(0.5) {
            d.insert_sign(sign);
        }
    }
    d.set_walkers(rng.random_range(0..=7));
    d
}

pub fn descriptor_strategy() -> impl Strategy<Value = SceneDescriptor> {
    let cell = |sector: SectorLabel| prop_oneof![3 => Just(0u32), 1 => 0..=HashLayout::capacity(sector)];
    let cells: Vec<_> = (0..DistanceBin::COUNT * SectorLabel::COUNT)
        .map(|i| cell(SectorLabel::from_slot(i % SectorLabel::COUNT)))
        .collect();
    (cells, prop::collection::vec(any::<bool>(), 4), 0u32..=7).prop_map(|(cells, signs, walkers)| {
        let mut d = SceneDescriptor::new();
        for (i, n) in cells.into_iter().enumerate() {
            d.set_count(
                DistanceBin::from_slot(i / SectorLabel::COUNT),
                SectorLabel::from_slot(i % SectorLabel::COUNT),
                n,
            );
        }
        for (k, on) in SignKind::ALL.iter().zip(signs) {
            if on {
                d.insert_sign(*k);
            }
        }
        d.set_walkers(walkers);
        d
    })
}

pub type Mat = Vec<Vec<f64>>;

pub fn random_matrix<R: Rng>(rng: &mut R, n: usize, d: usize) -> Mat {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn to_array(m: &Mat) -> ndarray::Array2<f64> {
    let (n, d) = (m.len(), m[0].len());
    ndarray::Array2::from_shape_fn((n, d), |(i, j)| m[i][j])
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Standard symmetric InfoNCE with hard (diagonal) labels, coded without
/// any of the library's matrix helpers.
pub fn hard_infonce(radar: &Mat, text: &Mat, tau: f64) -> f64 {
    let n = radar.len();
    let logits: Mat = (0..n)
        .map(|i| (0..n).map(|j| cosine(&radar[i], &text[j]) / tau).collect())
        .collect();
    let nll = |scores: &[f64], target: usize| {
        let m = scores.iter().cloned().fold(f64::MIN, f64::max);
        let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
        lse - scores[target]
    };
    let mut r2t = 0.0;
    let mut t2r = 0.0;
    for i in 0..n {
        r2t += nll(&logits[i], i);
        let column: Vec<f64> = (0..n).map(|k| logits[k][i]).collect();
        t2r += nll(&column, i);
    }
    0.5 * (r2t + t2r) / n as f64
}

/// Central differences of `f` over every entry of `x`.
pub fn finite_difference(x: &Mat, h: f64, mut f: impl FnMut(&Mat) -> f64) -> Mat {
    let mut probe = x.clone();
    let mut out = vec![vec![0.0; x[0].len()]; x.len()];
    for i in 0..x.len() {
        for j in 0..x[0].len() {
            let orig = probe[i][j];
            probe[i][j] = orig + h;
            let up = f(&probe);
            probe[i][j] = orig - h;
            let down = f(&probe);
            probe[i][j] = orig;
            out[i][j] = (up - down) / (2.0 * h);
        }
    }
    out
}

/// Vehicle-slot oracle: every scene-cell is unrolled into `max(pred, truth)`
/// slots, slot `k` is predicted iff `k < pred` and real iff `k < truth`, and
/// the slots of all scenes are pooled into one list before counting.
pub fn slot_counts(
    pairs: &[(SceneDescriptor, SceneDescriptor)],
    bin: DistanceBin,
    sector: SectorLabel,
) -> (u64, u64, u64) {
    let mut slots: Vec<(bool, bool)> = Vec::new();
    for (pred, truth) in pairs {
        let (p, y) = (pred.count(bin, sector), truth.count(bin, sector));
        for k in 0..p.max(y) {
            slots.push((k < p, k < y));
        }
    }
    let tp = slots.iter().filter(|s| s.0 && s.1).count() as u64;
    let fp = slots.iter().filter(|s| s.0 && !s.1).count() as u64;
    let fn_ = slots.iter().filter(|s| !s.0 && s.1).count() as u64;
    (tp, fp, fn_)
}

/// Uniform pseudo-random rotation angle.
pub fn angle<R: Rng>(rng: &mut R) -> f64 {
    rng.random_range(0.0..std::f64::consts::TAU)
}
