mod common;

use common::{finite_difference, hard_infonce, random_descriptor, random_matrix, to_array, Mat};
use ndarray::Array2;
use radscene::hash::encode_hash;
use radscene::loss::{hash_clip_loss, EmbeddingBatch, LossConfig, LossDirection};
use radscene::targets::{soft_target_matrix, KernelConfig, SoftTargetMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-6;
/// Entries whose magnitude is below this are compared absolutely.
const GRAD_FLOOR: f64 = 1e-3;

fn soft_targets(rng: &mut ChaCha8Rng, n: usize) -> SoftTargetMatrix {
    let hashes: Vec<_> = (0..n).map(|_| encode_hash(&random_descriptor(rng, 0.1))).collect();
    soft_target_matrix(&hashes, &KernelConfig::default()).unwrap()
}

fn loss_at(radar: &Mat, text: &Mat, t: &SoftTargetMatrix, cfg: &LossConfig) -> f64 {
    let batch = EmbeddingBatch::new(to_array(radar), to_array(text)).unwrap();
    hash_clip_loss(&batch, t, cfg).unwrap().value
}

fn max_rel_error(analytic: &Array2<f64>, numeric: &Mat) -> f64 {
    let mut worst: f64 = 0.0;
    for ((i, j), &a) in analytic.indexed_iter() {
        let f = numeric[i][j];
        worst = worst.max((a - f).abs() / a.abs().max(f.abs()).max(GRAD_FLOOR));
    }
    worst
}

fn gradient_check(seed: u64, direction: LossDirection) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (8, 16);
    let t = soft_targets(&mut rng, n);
    let radar = random_matrix(&mut rng, n, d);
    let text = random_matrix(&mut rng, n, d);
    let cfg = LossConfig {
        direction,
        ..Default::default()
    };
    let batch = EmbeddingBatch::new(to_array(&radar), to_array(&text)).unwrap();
    let out = hash_clip_loss(&batch, &t, &cfg).unwrap();
    let num_r = finite_difference(&radar, FD_STEP, |r| loss_at(r, &text, &t, &cfg));
    let num_t = finite_difference(&text, FD_STEP, |x| loss_at(&radar, x, &t, &cfg));
    max_rel_error(&out.grad_radar, &num_r).max(max_rel_error(&out.grad_text, &num_t))
}

#[test]
fn symmetric_gradient_matches_finite_differences() {
    let worst = (0..20)
        .map(|s| gradient_check(s, LossDirection::Symmetric))
        .fold(0.0, f64::max);
    println!("max relative gradient error over 20 instances: {worst:.3e}");
    assert!(worst <= 1e-5, "{worst}");
}

#[test]
fn one_directional_gradients_match_finite_differences() {
    for direction in [LossDirection::RadarToText, LossDirection::TextToRadar] {
        for s in 100..105 {
            let err = gradient_check(s, direction);
            assert!(err <= 1e-5, "{direction:?} seed {s}: {err}");
        }
    }
}

#[test]
fn identity_targets_reduce_to_hard_infonce() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for k in 0..100 {
        let n = 2 + k % 15;
        let d = 3 + k % 9;
        let radar = random_matrix(&mut rng, n, d);
        let text = random_matrix(&mut rng, n, d);
        let got = loss_at(&radar, &text, &SoftTargetMatrix::identity(n), &LossConfig::default());
        let want = hard_infonce(&radar, &text, 0.07);
        assert!((got - want).abs() <= 1e-12, "batch {k}: {got} vs {want}");
    }
}

#[test]
fn loss_is_scale_invariant_per_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t = soft_targets(&mut rng, 6);
    let radar = random_matrix(&mut rng, 6, 5);
    let text = random_matrix(&mut rng, 6, 5);
    let base = loss_at(&radar, &text, &t, &LossConfig::default());
    let scaled: Mat = radar
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().map(|v| v * (0.1 + i as f64 * 3.0)).collect())
        .collect();
    let moved = loss_at(&scaled, &text, &t, &LossConfig::default());
    assert!((base - moved).abs() < 1e-12);
}

#[test]
fn loss_is_bounded_below_by_target_entropy() {
    // cross-entropy >= entropy of the target rows, in each direction
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let t = soft_targets(&mut rng, 10);
        let entropy: f64 = t
            .values()
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| -v * v.ln())
            .sum::<f64>()
            / 10.0;
        let radar = random_matrix(&mut rng, 10, 4);
        let text = random_matrix(&mut rng, 10, 4);
        for direction in [
            LossDirection::RadarToText,
            LossDirection::TextToRadar,
            LossDirection::Symmetric,
        ] {
            let cfg = LossConfig {
                direction,
                ..Default::default()
            };
            assert!(loss_at(&radar, &text, &t, &cfg) >= entropy - 1e-12);
        }
    }
}

#[test]
fn symmetric_is_mean_of_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let t = soft_targets(&mut rng, 7);
    let radar = random_matrix(&mut rng, 7, 6);
    let text = random_matrix(&mut rng, 7, 6);
    let at = |direction| {
        loss_at(
            &radar,
            &text,
            &t,
            &LossConfig {
                direction,
                ..Default::default()
            },
        )
    };
    let mean = 0.5 * (at(LossDirection::RadarToText) + at(LossDirection::TextToRadar));
    assert!((at(LossDirection::Symmetric) - mean).abs() < 1e-12);
}

#[test]
fn rejects_bad_inputs() {
    let t = SoftTargetMatrix::identity(3);
    let ok = Array2::from_elem((3, 2), 1.0);
    let mut zero_row = ok.clone();
    zero_row.row_mut(1).fill(0.0);
    let err = EmbeddingBatch::new(zero_row, ok.clone()).unwrap_err();
    assert!(err.to_string().contains("row 1"), "{err}");
    assert!(EmbeddingBatch::new(ok.clone(), Array2::from_elem((2, 2), 1.0)).is_err());
    let batch = EmbeddingBatch::new(ok.clone(), ok).unwrap();
    assert!(hash_clip_loss(&batch, &SoftTargetMatrix::identity(4), &LossConfig::default()).is_err());
    let cfg = LossConfig {
        temperature: 0.0,
        ..Default::default()
    };
    assert!(hash_clip_loss(&batch, &t, &cfg).is_err());
}

#[test]
fn hard_targets_vanish_with_diagonal_margin() {
    use radscene::loss::soft_cross_entropy;
    let n = 5;
    let eye = Array2::<f64>::eye(n);
    let losses: Vec<f64> = [2.0, 5.0, 10.0]
        .iter()
        .map(|&m| soft_cross_entropy((&eye * m).view(), eye.view(), 1.0).0)
        .collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    // -log(e^m / (e^m + n - 1)) = ln(1 + (n - 1) e^-m)
    for (&m, &l) in [2.0f64, 5.0, 10.0].iter().zip(&losses) {
        assert!((l - (1.0 + (n as f64 - 1.0) * (-m).exp()).ln()).abs() < 1e-14);
    }
}
