//! Evaluation arithmetic: confusion matrices, UAR, proposal scoring,
//! precision-recall curves, AP and F-beta.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::WorldPoint;

/// Square confusion matrix, rows are ground truth and columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidInput("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn add(&mut self, truth: usize, predicted: usize, n: u64) {
        self.counts[truth * self.k + predicted] += n;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.k..(truth + 1) * self.k].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merged(mut self, other: &ConfusionMatrix) -> ConfusionMatrix {
        assert_eq!(self.k, other.k, "merging confusion matrices of different sizes");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self
    }

    /// Recall of each class; `None` for classes with no ground truth.
    pub fn recalls(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let row = self.row_sum(c);
                (row > 0).then(|| self.get(c, c) as f64 / row as f64)
            })
            .collect()
    }

    /// Unweighted average recall over classes present in the ground truth.
    pub fn uar(&self) -> Result<f64> {
        let recalls: Vec<f64> = self.recalls().into_iter().flatten().collect();
        if recalls.is_empty() {
            return Err(Error::UndefinedMetric("UAR of an empty confusion matrix".into()));
        }
        Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
    }

    /// Overall success rate (trace over total).
    pub fn accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::UndefinedMetric("accuracy of an empty confusion matrix".into()));
        }
        Ok((0..self.k).map(|c| self.get(c, c)).sum::<u64>() as f64 / total as f64)
    }
}

pub fn uar(cm: &ConfusionMatrix) -> Result<f64> {
    cm.uar()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl BinaryCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        BinaryCounts { tp, fp, tn, fn_ }
    }

    pub fn precision(&self) -> Result<f64> {
        if self.tp + self.fp == 0 {
            return Err(Error::UndefinedMetric("precision without positive predictions".into()));
        }
        Ok(self.tp as f64 / (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> Result<f64> {
        if self.tp + self.fn_ == 0 {
            return Err(Error::UndefinedMetric("recall without positive ground truth".into()));
        }
        Ok(self.tp as f64 / (self.tp + self.fn_) as f64)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::Add for BinaryCounts {
    type Output = BinaryCounts;
    fn add(self, o: BinaryCounts) -> BinaryCounts {
        BinaryCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::ops::AddAssign for BinaryCounts {
    fn add_assign(&mut self, o: BinaryCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for BinaryCounts {
    fn sum<I: Iterator<Item = BinaryCounts>>(iter: I) -> Self {
        iter.fold(BinaryCounts::default(), |a, b| a + b)
    }
}

/// How proposals made for a part that is not in the frame are counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsentPartRule {
    /// Each such proposal is a false negative.
    #[default]
    FalseNegative,
    /// Each such proposal is a false positive.
    FalsePositive,
}

impl AbsentPartRule {
    fn score(self, proposals: u64) -> BinaryCounts {
        match self {
            AbsentPartRule::FalseNegative => BinaryCounts::new(0, 0, 0, proposals),
            AbsentPartRule::FalsePositive => BinaryCounts::new(0, proposals, 0, 0),
        }
    }
}

/// Scores every mode proposed for one part in one frame. `modes` must be in
/// decreasing confidence order. The first mode within `delta` of the truth
/// is a true positive, every other mode a false positive; a present part
/// with no mode within `delta` also scores one false negative.
pub fn score_all_modes(modes: &[WorldPoint], truth: Option<&WorldPoint>, delta: f64, rule: AbsentPartRule) -> BinaryCounts {
    match truth {
        None if modes.is_empty() => BinaryCounts::new(0, 0, 1, 0),
        None => rule.score(modes.len() as u64),
        Some(t) => {
            let hit = modes.iter().any(|m| m.distance(t) <= delta);
            let n = modes.len() as u64;
            if hit {
                BinaryCounts::new(1, n - 1, 0, 0)
            } else {
                BinaryCounts::new(0, n, 0, 1)
            }
        }
    }
}

/// Per-frame modes and ground truth for one part.
#[derive(Debug, Clone, PartialEq)]
pub struct PartFrame {
    pub modes: Vec<WorldPoint>,
    pub truth: Option<WorldPoint>,
}

pub fn score_proposals_all_modes(frames: &[PartFrame], delta: f64, rule: AbsentPartRule) -> BinaryCounts {
    frames
        .iter()
        .map(|f| score_all_modes(&f.modes, f.truth.as_ref(), delta, rule))
        .sum()
}

/// Scores the single final proposal for one part in one frame.
pub fn score_final(proposal: Option<&WorldPoint>, truth: Option<&WorldPoint>, delta: f64, rule: AbsentPartRule) -> BinaryCounts {
    match (truth, proposal) {
        (Some(t), Some(p)) if p.distance(t) <= delta => BinaryCounts::new(1, 0, 0, 0),
        (Some(_), Some(_)) => BinaryCounts::new(0, 1, 0, 0),
        (Some(_), None) => BinaryCounts::new(0, 0, 0, 1),
        (None, None) => BinaryCounts::new(0, 0, 1, 0),
        (None, Some(_)) => rule.score(1),
    }
}

pub fn score_final_proposals(
    frames: &[(Option<WorldPoint>, Option<WorldPoint>)],
    delta: f64,
    rule: AbsentPartRule,
) -> BinaryCounts {
    frames
        .iter()
        .map(|(p, t)| score_final(p.as_ref(), t.as_ref(), delta, rule))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

/// `n` evenly spaced thresholds from 0 to 1 inclusive.
pub fn threshold_grid(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Builds a PR curve from per-threshold counts. With no positive
/// predictions precision is taken as 1; with no positive ground truth
/// recall is taken as 0.
pub fn pr_curve(counts: &[(f64, BinaryCounts)]) -> Result<PrCurve> {
    if counts.windows(2).any(|w| !(w[0].0 < w[1].0)) {
        return Err(Error::InvalidInput("PR thresholds must be strictly increasing".into()));
    }
    if counts.iter().all(|(_, c)| c.tp + c.fn_ == 0) {
        return Err(Error::UndefinedMetric("no positives at any threshold".into()));
    }
    let points = counts
        .iter()
        .map(|(t, c)| PrPoint {
            threshold: *t,
            precision: c.precision().unwrap_or(1.0),
            recall: c.recall().unwrap_or(0.0),
        })
        .collect();
    Ok(PrCurve { points })
}

/// Evaluates `score` on every grid threshold and builds the PR curve.
pub fn pr_curve_from_fn(grid: &[f64], score: impl Fn(f64) -> BinaryCounts + Sync) -> Result<PrCurve> {
    use rayon::prelude::*;
    let counts: Vec<(f64, BinaryCounts)> = grid.par_iter().map(|&t| (t, score(t))).collect();
    pr_curve(&counts)
}

/// Area under the PR curve by trapezoids over recall. The curve is ordered
/// by recall (ties by decreasing precision) and extended flat to recall 0.
pub fn average_precision(curve: &PrCurve) -> Result<f64> {
    if curve.points.is_empty() {
        return Err(Error::UndefinedMetric("empty PR curve".into()));
    }
    let mut pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.recall, p.precision)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut area = 0.0;
    let (mut r0, mut p0) = (0.0, pts[0].1);
    for &(r, p) in &pts {
        area += (r - r0) * (p + p0) / 2.0;
        r0 = r;
        p0 = p;
    }
    Ok(area)
}

/// Grid threshold where precision and recall are closest; ties go to the
/// lower threshold.
pub fn eer_threshold(curve: &PrCurve) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for p in &curve.points {
        let gap = (p.precision - p.recall).abs();
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, p.threshold));
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| Error::UndefinedMetric("empty PR curve".into()))
}

pub fn mean_average_precision(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::UndefinedMetric("mAP of no parts".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

pub fn f_beta(counts: &BinaryCounts, beta: f64) -> Result<f64> {
    let p = counts.precision()?;
    let r = counts.recall()?;
    let b2 = beta * beta;
    let denom = b2 * p + r;
    if denom == 0.0 {
        return Err(Error::UndefinedMetric("F-beta with zero precision and recall".into()));
    }
    Ok((1.0 + b2) * p * r / denom)
}

/// Unweighted mean of per-group F-beta; groups where it is undefined are
/// left out and counted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanScore {
    pub mean: Option<f64>,
    pub included: usize,
    pub excluded: usize,
}

pub fn mean_f_beta<'a>(groups: impl IntoIterator<Item = &'a BinaryCounts>, beta: f64) -> MeanScore {
    let mut sum = 0.0;
    let mut included = 0;
    let mut excluded = 0;
    for c in groups {
        match f_beta(c, beta) {
            Ok(f) => {
                sum += f;
                included += 1;
            }
            Err(_) => excluded += 1,
        }
    }
    MeanScore {
        mean: (included > 0).then(|| sum / included as f64),
        included,
        excluded,
    }
}

/// Mean per-trial F-beta for each `(category, part)` cell. `trials[t]`
/// lists `(category, part, counts)` frame scores of trial `t`.
pub fn category_part_table<C: Ord + Clone, P: Ord + Clone>(
    trials: &[Vec<(C, P, BinaryCounts)>],
    beta: f64,
) -> BTreeMap<(C, P), MeanScore> {
    let mut per_cell: BTreeMap<(C, P), Vec<BinaryCounts>> = BTreeMap::new();
    for trial in trials {
        let mut acc: BTreeMap<(C, P), BinaryCounts> = BTreeMap::new();
        for (c, p, counts) in trial {
            *acc.entry((c.clone(), p.clone())).or_default() += *counts;
        }
        for (key, counts) in acc {
            per_cell.entry(key).or_default().push(counts);
        }
    }
    per_cell
        .into_iter()
        .map(|(k, v)| (k, mean_f_beta(&v, beta)))
        .collect()
}
