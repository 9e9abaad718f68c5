mod common;

use common::{random_descriptor, slot_counts};
use radscene::metrics::{cell_counts, cell_precision_recall_piecewise, evaluate, micro_aggregate};
use radscene::scene::{DistanceBin, SceneDescriptor, SectorLabel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Perturbs a truth descriptor into a plausible prediction.
fn noisy<R: Rng>(rng: &mut R, truth: &SceneDescriptor) -> SceneDescriptor {
    let mut p = truth.clone();
    for bin in DistanceBin::ALL {
        for sector in SectorLabel::ALL {
            let n = truth.count(bin, sector) as i64 + rng.random_range(-2..=2);
            p.set_count(bin, sector, n.max(0) as u32);
        }
    }
    p
}

fn corpus(seed: u64, n: usize) -> Vec<(SceneDescriptor, SceneDescriptor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let truth = random_descriptor(&mut rng, 0.1);
            let pred = if rng.random_bool(0.3) {
                truth.clone()
            } else {
                noisy(&mut rng, &truth)
            };
            (pred, truth)
        })
        .collect()
}

#[test]
fn micro_average_matches_slot_oracle() {
    for seed in 0..30 {
        let pairs = corpus(seed, 1 + seed as usize * 3);
        let report = evaluate(&pairs).unwrap();
        assert!(report.verify().is_empty());
        for c in &report.cells {
            let (tp, fp, fn_) = slot_counts(&pairs, c.bin, c.sector);
            assert_eq!((c.counts.tp, c.counts.fp, c.counts.fn_), (tp, fp, fn_));
            if tp + fp > 0 {
                assert!((c.precision - tp as f64 / (tp + fp) as f64).abs() <= 1e-12);
            }
            if tp + fn_ > 0 {
                assert!((c.recall - tp as f64 / (tp + fn_) as f64).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn per_scene_cells_never_over_and_under_count() {
    for (pred, truth) in corpus(99, 200) {
        for c in cell_counts(&pred, &truth).iter().flatten() {
            assert_eq!(c.fp * c.fn_, 0);
        }
    }
}

#[test]
fn swapping_roles_swaps_precision_and_recall() {
    let pairs = corpus(5, 60);
    let swapped: Vec<_> = pairs.iter().map(|(p, t)| (t.clone(), p.clone())).collect();
    let a = evaluate(&pairs).unwrap();
    let b = evaluate(&swapped).unwrap();
    for (x, y) in a.cells.iter().zip(&b.cells) {
        assert_eq!(x.counts.tp, y.counts.tp);
        assert_eq!((x.counts.fp, x.counts.fn_), (y.counts.fn_, y.counts.fp));
        assert!((x.precision - y.recall).abs() < 1e-15 && (x.recall - y.precision).abs() < 1e-15);
    }
}

#[test]
fn piecewise_flags_over_and_under_counting() {
    for p in 0..12u32 {
        for y in 0..12u32 {
            let (precision, recall) = cell_precision_recall_piecewise(p, y);
            assert_eq!(precision < 1.0, p > y);
            assert_eq!(recall < 1.0, p < y);
        }
    }
}

#[test]
fn aggregation_is_order_independent() {
    let pairs = corpus(17, 40);
    let counts: Vec<_> = pairs.iter().map(|(p, t)| cell_counts(p, t)).collect();
    let mut reversed = counts.clone();
    reversed.reverse();
    assert_eq!(micro_aggregate(&counts).unwrap(), micro_aggregate(&reversed).unwrap());
}
