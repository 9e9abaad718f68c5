//! Localization-aware counting metrics over (bin, sector) cells.
//!
//! Per scene-cell, with predicted count `p` and ground truth `y`:
//! `tp = min(p, y)`, `fp = max(0, p - y)`, `fn = max(0, y - p)`.
//! Dataset metrics sum these per cell across scenes before applying the
//! standard precision/recall/F1 formulas (micro-averaging). The piecewise
//! single-scene precision/recall are reported alongside as a separate
//! column, averaged over the scene-cells where either count is nonzero.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{DistanceBin, SceneDescriptor, SectorLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CellCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl CellCounts {
    pub fn from_pair(pred: u32, truth: u32) -> Self {
        let (p, y) = (u64::from(pred), u64::from(truth));
        Self {
            tp: p.min(y),
            fp: p.saturating_sub(y),
            fn_: y.saturating_sub(p),
        }
    }

    pub fn add(&mut self, other: CellCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// No predictions and no ground truth.
    pub fn is_vacuous(&self) -> bool {
        self.tp == 0 && self.fp == 0 && self.fn_ == 0
    }

    /// Standard formulas. A zero denominator yields 1.0 for that quantity;
    /// F1 is 0 whenever `tp == 0` unless the cell is vacuous.
    pub fn precision_recall_f1(&self) -> (f64, f64, f64) {
        let tp = self.tp as f64;
        let precision = if self.tp + self.fp == 0 {
            1.0
        } else {
            tp / (self.tp + self.fp) as f64
        };
        let recall = if self.tp + self.fn_ == 0 {
            1.0
        } else {
            tp / (self.tp + self.fn_) as f64
        };
        let f1 = if self.is_vacuous() {
            1.0
        } else {
            f1_score(precision, recall)
        };
        (precision, recall, f1)
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Per-cell counts for one scene, indexed `[bin slot][sector slot]`.
pub type SceneCounts = [[CellCounts; SectorLabel::COUNT]; DistanceBin::COUNT];

pub fn cell_counts(pred: &SceneDescriptor, truth: &SceneDescriptor) -> SceneCounts {
    let mut out = [[CellCounts::default(); SectorLabel::COUNT]; DistanceBin::COUNT];
    for bin in DistanceBin::ALL {
        for sector in SectorLabel::ALL {
            out[bin.slot()][sector.slot()] = CellCounts::from_pair(pred.count(bin, sector), truth.count(bin, sector));
        }
    }
    out
}

/// Single-scene piecewise precision and recall; `(1, 1)` when both are 0.
pub fn cell_precision_recall_piecewise(pred: u32, truth: u32) -> (f64, f64) {
    use std::cmp::Ordering::*;
    match pred.cmp(&truth) {
        Equal => (1.0, 1.0),
        Greater => (f64::from(truth) / f64::from(pred), 1.0),
        Less => (1.0, f64::from(pred) / f64::from(truth)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub bin: DistanceBin,
    pub sector: SectorLabel,
    pub counts: CellCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Ground-truth vehicles in this cell across all scenes.
    pub support: u64,
    pub vacuous: bool,
    /// Piecewise means over non-vacuous scene-cells; `None` if there are none.
    pub piecewise_precision: Option<f64>,
    pub piecewise_recall: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Number of non-vacuous cells averaged.
    pub cells: usize,
}

impl MeanScores {
    fn of<'a>(cells: impl Iterator<Item = &'a CellMetrics>) -> Self {
        let (mut p, mut r, mut f, mut n) = (0.0, 0.0, 0.0, 0usize);
        for c in cells.filter(|c| !c.vacuous) {
            p += c.precision;
            r += c.recall;
            f += c.f1;
            n += 1;
        }
        let mean = |s: f64| (n > 0).then(|| s / n as f64);
        Self {
            precision: mean(p),
            recall: mean(r),
            f1: mean(f),
            cells: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenes: usize,
    /// 48 cells, bin-major in canonical sector order.
    pub cells: Vec<CellMetrics>,
    pub bin_means: Vec<MeanScores>,
    pub sector_means: Vec<MeanScores>,
    /// Standard formulas on counts pooled over every cell.
    pub overall: CellCounts,
    pub overall_precision: f64,
    pub overall_recall: f64,
    pub overall_f1: f64,
    /// Exact-match rate of the sign sets; `None` when not evaluated.
    pub sign_accuracy: Option<f64>,
    pub walker_accuracy: Option<f64>,
}

struct Accumulator {
    counts: SceneCounts,
    piecewise: [[(f64, f64, usize); SectorLabel::COUNT]; DistanceBin::COUNT],
    scenes: usize,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            counts: [[CellCounts::default(); SectorLabel::COUNT]; DistanceBin::COUNT],
            piecewise: [[(0.0, 0.0, 0); SectorLabel::COUNT]; DistanceBin::COUNT],
            scenes: 0,
        }
    }

    fn add_counts(&mut self, scene: &SceneCounts) {
        for (b, row) in scene.iter().enumerate() {
            for (s, c) in row.iter().enumerate() {
                self.counts[b][s].add(*c);
            }
        }
        self.scenes += 1;
    }

    fn add_pair(&mut self, pred: &SceneDescriptor, truth: &SceneDescriptor) {
        self.add_counts(&cell_counts(pred, truth));
        for bin in DistanceBin::ALL {
            for sector in SectorLabel::ALL {
                let (p, y) = (pred.count(bin, sector), truth.count(bin, sector));
                if p == 0 && y == 0 {
                    continue;
                }
                let (pp, pr) = cell_precision_recall_piecewise(p, y);
                let acc = &mut self.piecewise[bin.slot()][sector.slot()];
                acc.0 += pp;
                acc.1 += pr;
                acc.2 += 1;
            }
        }
    }

    fn finish(self) -> Result<MetricsReport> {
        if self.scenes == 0 {
            return Err(Error::input("metrics need at least one scene"));
        }
        let mut cells = Vec::with_capacity(DistanceBin::COUNT * SectorLabel::COUNT);
        let mut overall = CellCounts::default();
        for bin in DistanceBin::ALL {
            for sector in SectorLabel::ALL {
                let counts = self.counts[bin.slot()][sector.slot()];
                overall.add(counts);
                let (precision, recall, f1) = counts.precision_recall_f1();
                let (sp, sr, n) = self.piecewise[bin.slot()][sector.slot()];
                cells.push(CellMetrics {
                    bin,
                    sector,
                    counts,
                    precision,
                    recall,
                    f1,
                    support: counts.tp + counts.fn_,
                    vacuous: counts.is_vacuous(),
                    piecewise_precision: (n > 0).then(|| sp / n as f64),
                    piecewise_recall: (n > 0).then(|| sr / n as f64),
                });
            }
        }
        let bin_means = DistanceBin::ALL
            .iter()
            .map(|&b| MeanScores::of(cells.iter().filter(|c| c.bin == b)))
            .collect();
        let sector_means = SectorLabel::ALL
            .iter()
            .map(|&s| MeanScores::of(cells.iter().filter(|c| c.sector == s)))
            .collect();
        let (overall_precision, overall_recall, overall_f1) = overall.precision_recall_f1();
        Ok(MetricsReport {
            scenes: self.scenes,
            cells,
            bin_means,
            sector_means,
            overall,
            overall_precision,
            overall_recall,
            overall_f1,
            sign_accuracy: None,
            walker_accuracy: None,
        })
    }
}

/// Sums per-scene counts and applies the standard formulas per cell.
pub fn micro_aggregate(scene_counts: &[SceneCounts]) -> Result<MetricsReport> {
    let mut acc = Accumulator::new();
    for s in scene_counts {
        acc.add_counts(s);
    }
    acc.finish()
}

/// Full evaluation over `(prediction, truth)` pairs, including piecewise
/// columns and sign/walker exact-match accuracies.
pub fn evaluate(pairs: &[(SceneDescriptor, SceneDescriptor)]) -> Result<MetricsReport> {
    let mut acc = Accumulator::new();
    let (mut signs_ok, mut walkers_ok) = (0usize, 0usize);
    for (pred, truth) in pairs {
        acc.add_pair(pred, truth);
        signs_ok += usize::from(pred.signs() == truth.signs());
        walkers_ok += usize::from(pred.walkers() == truth.walkers());
    }
    let mut report = acc.finish()?;
    let n = pairs.len() as f64;
    report.sign_accuracy = Some(signs_ok as f64 / n);
    report.walker_accuracy = Some(walkers_ok as f64 / n);
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.17e}"))
}

impl MetricsReport {
    pub fn cell(&self, bin: DistanceBin, sector: SectorLabel) -> &CellMetrics {
        &self.cells[bin.slot() * SectorLabel::COUNT + sector.slot()]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "bin,sector,tp,fp,fn,precision,recall,f1,support,vacuous,piecewise_precision,piecewise_recall\n",
        );
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.17e},{:.17e},{:.17e},{},{},{},{}",
                c.bin.key(),
                c.sector.key(),
                c.counts.tp,
                c.counts.fp,
                c.counts.fn_,
                c.precision,
                c.recall,
                c.f1,
                c.support,
                c.vacuous,
                fmt_opt(c.piecewise_precision),
                fmt_opt(c.piecewise_recall),
            );
        }
        out
    }

    /// Summary shaped like the per-bin and per-sector F1 tables.
    pub fn summary_json(&self) -> serde_json::Value {
        let mut bins = serde_json::Map::new();
        for (b, m) in DistanceBin::ALL.iter().zip(&self.bin_means) {
            bins.insert(b.key().to_string(), serde_json::to_value(m).expect("plain data"));
        }
        let mut sectors = serde_json::Map::new();
        for (s, m) in SectorLabel::ALL.iter().zip(&self.sector_means) {
            sectors.insert(s.key().to_string(), serde_json::to_value(m).expect("plain data"));
        }
        serde_json::json!({
            "scenes": self.scenes,
            "metric": "micro-averaged standard precision/recall/f1, arithmetic mean over non-vacuous cells",
            "per_bin": bins,
            "per_sector": sectors,
            "overall": {
                "tp": self.overall.tp,
                "fp": self.overall.fp,
                "fn": self.overall.fn_,
                "precision": self.overall_precision,
                "recall": self.overall_recall,
                "f1": self.overall_f1,
            },
            "vacuous_cells": self.cells.iter().filter(|c| c.vacuous).map(|c| format!("{}/{}", c.bin.key(), c.sector.key())).collect::<Vec<_>>(),
            "sign_accuracy": self.sign_accuracy,
            "walker_accuracy": self.walker_accuracy,
        })
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }

    /// Re-derives every aggregate from the cell counts; returns the list of
    /// inconsistencies (empty when the report is coherent).
    pub fn verify(&self) -> Vec<String> {
        const TOL: f64 = 1e-12;
        let mut problems = Vec::new();
        if self.cells.len() != DistanceBin::COUNT * SectorLabel::COUNT {
            problems.push(format!("expected 48 cells, found {}", self.cells.len()));
            return problems;
        }
        let close = |a: f64, b: f64| (a - b).abs() <= TOL;
        let close_opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => close(a, b),
            (None, None) => true,
            _ => false,
        };
        let mut overall = CellCounts::default();
        for (i, c) in self.cells.iter().enumerate() {
            let name = format!("{}/{}", c.bin.key(), c.sector.key());
            if c.bin.slot() * SectorLabel::COUNT + c.sector.slot() != i {
                problems.push(format!("cell {name} out of order at position {i}"));
            }
            overall.add(c.counts);
            let (p, r, f) = c.counts.precision_recall_f1();
            if !(close(p, c.precision) && close(r, c.recall) && close(f, c.f1)) {
                problems.push(format!("cell {name}: scores disagree with its counts"));
            }
            if !c.vacuous && !close(c.f1, f1_score(c.precision, c.recall)) {
                problems.push(format!("cell {name}: f1 is not the harmonic mean"));
            }
            if c.vacuous != c.counts.is_vacuous() {
                problems.push(format!("cell {name}: vacuous flag is wrong"));
            }
            if c.support != c.counts.tp + c.counts.fn_ {
                problems.push(format!("cell {name}: support is not tp + fn"));
            }
        }
        if overall != self.overall {
            problems.push("overall counts are not the sum of cell counts".into());
        }
        let (p, r, f) = overall.precision_recall_f1();
        if !(close(p, self.overall_precision) && close(r, self.overall_recall) && close(f, self.overall_f1)) {
            problems.push("overall scores disagree with overall counts".into());
        }
        let check_means =
            |label: &str, got: &[MeanScores], groups: Vec<Vec<&CellMetrics>>, problems: &mut Vec<String>| {
                if got.len() != groups.len() {
                    problems.push(format!(
                        "{label} means: expected {} rows, found {}",
                        groups.len(),
                        got.len()
                    ));
                    return;
                }
                for (k, (m, cells)) in got.iter().zip(groups).enumerate() {
                    let live: Vec<_> = cells.into_iter().filter(|c| !c.vacuous).collect();
                    let n = live.len();
                    let mean =
                        |f: fn(&CellMetrics) -> f64| (n > 0).then(|| live.iter().map(|c| f(c)).sum::<f64>() / n as f64);
                    if m.cells != n
                        || !close_opt(m.precision, mean(|c| c.precision))
                        || !close_opt(m.recall, mean(|c| c.recall))
                        || !close_opt(m.f1, mean(|c| c.f1))
                    {
                        problems.push(format!("{label} mean {k} does not match its cells"));
                    }
                }
            };
        let by_bin = DistanceBin::ALL
            .iter()
            .map(|&b| self.cells.iter().filter(|c| c.bin == b).collect())
            .collect();
        let by_sector = SectorLabel::ALL
            .iter()
            .map(|&s| self.cells.iter().filter(|c| c.sector == s).collect())
            .collect();
        check_means("bin", &self.bin_means, by_bin, &mut problems);
        check_means("sector", &self.sector_means, by_sector, &mut problems);
        problems
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bin(i: u8) -> DistanceBin {
        DistanceBin::new(i).unwrap()
    }

    fn one_cell(n: u32) -> SceneDescriptor {
        let mut d = SceneDescriptor::new();
        d.set_count(bin(2), SectorLabel::LeftSide, n);
        d
    }

    #[test]
    fn counts_by_hand() {
        assert_eq!(CellCounts::from_pair(5, 3), CellCounts { tp: 3, fp: 2, fn_: 0 });
        assert_eq!(CellCounts::from_pair(1, 4), CellCounts { tp: 1, fp: 0, fn_: 3 });
        assert_eq!(CellCounts::from_pair(0, 0), CellCounts::default());
    }

    #[test]
    fn piecewise_by_hand() {
        assert_eq!(cell_precision_recall_piecewise(3, 3), (1.0, 1.0));
        assert_eq!(cell_precision_recall_piecewise(5, 3), (0.6, 1.0));
        assert_eq!(cell_precision_recall_piecewise(1, 4), (1.0, 0.25));
        assert_eq!(cell_precision_recall_piecewise(0, 0), (1.0, 1.0));
    }

    #[test]
    fn perfect_prediction() {
        let d = one_cell(4);
        let counts = cell_counts(&d, &d);
        assert!(counts.iter().flatten().all(|c| c.fp == 0 && c.fn_ == 0));
        assert_eq!(counts[1][SectorLabel::LeftSide.slot()].tp, 4);
        let r = evaluate(&[(d.clone(), d)]).unwrap();
        assert!(r
            .cells
            .iter()
            .all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
        assert_eq!(r.cells.iter().filter(|c| !c.vacuous).count(), 1);
        assert_eq!(r.bin_means[1].f1, Some(1.0));
        assert_eq!(r.bin_means[0].f1, None);
        assert_eq!(r.sign_accuracy, Some(1.0));
        assert!(r.verify().is_empty());
    }

    #[test]
    fn two_scene_example() {
        let pairs = [(one_cell(5), one_cell(3)), (one_cell(1), one_cell(4))];
        let r = evaluate(&pairs).unwrap();
        let c = r.cell(bin(2), SectorLabel::LeftSide);
        assert_eq!(c.counts, CellCounts { tp: 4, fp: 2, fn_: 3 });
        assert!((c.precision - 4.0 / 6.0).abs() < 1e-15);
        assert!((c.recall - 4.0 / 7.0).abs() < 1e-15);
        assert!((c.f1 - 8.0 / 13.0).abs() < 1e-15);
        assert_eq!(c.support, 7);
        assert_eq!(c.piecewise_precision, Some(0.8));
        assert_eq!(c.piecewise_recall, Some(0.625));
        let counts: Vec<_> = pairs.iter().map(|(p, t)| cell_counts(p, t)).collect();
        let micro = micro_aggregate(&counts).unwrap();
        assert_eq!(
            micro.cells,
            r.cells
                .iter()
                .map(|c| CellMetrics {
                    piecewise_precision: None,
                    piecewise_recall: None,
                    ..*c
                })
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn one_sided_cells() {
        // missed entirely: nothing predicted
        let r = evaluate(&[(SceneDescriptor::new(), one_cell(2))]).unwrap();
        let c = r.cell(bin(2), SectorLabel::LeftSide);
        assert_eq!((c.precision, c.recall, c.f1, c.vacuous), (1.0, 0.0, 0.0, false));
        // hallucinated: nothing there
        let r = evaluate(&[(one_cell(2), SceneDescriptor::new())]).unwrap();
        let c = r.cell(bin(2), SectorLabel::LeftSide);
        assert_eq!((c.precision, c.recall, c.f1, c.vacuous), (0.0, 1.0, 0.0, false));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(micro_aggregate(&[]).is_err());
        assert!(evaluate(&[]).is_err());
    }

    #[test]
    fn verify_detects_tampering() {
        let r = evaluate(&[(one_cell(5), one_cell(3))]).unwrap();
        assert!(r.verify().is_empty());
        let mut bad = r.clone();
        bad.bin_means[1].f1 = Some(0.5);
        assert_eq!(bad.verify().len(), 1);
        let mut bad = r;
        bad.cells[0].vacuous = false;
        assert!(!bad.verify().is_empty());
    }

    #[test]
    fn csv_shape() {
        let r = evaluate(&[(one_cell(5), one_cell(3))]).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 49);
        let row = csv.lines().find(|l| l.starts_with("10-20m,left_side,")).unwrap();
        assert!(row.starts_with("10-20m,left_side,3,2,0,"), "{row}");
        assert!(row.contains(",3,false,"));
    }
}
