//! Detection metrics with OOD samples as the positive class.
//!
//! A sample is flagged OOD when `score >= threshold`. Thresholds sweep the
//! distinct observed scores from high to low, so each tie group is crossed
//! in one step. Counting in integers keeps AUROC identical to the pairwise
//! Mann–Whitney statistic.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    in_scores: Vec<f64>,
    ood_scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(in_scores: Vec<f64>, ood_scores: Vec<f64>) -> Result<Self> {
        if in_scores.is_empty() {
            return Err(Error::Empty("ScoreSet in-distribution scores"));
        }
        if ood_scores.is_empty() {
            return Err(Error::Empty("ScoreSet OOD scores"));
        }
        if in_scores.iter().chain(&ood_scores).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ScoreSet".into()));
        }
        Ok(ScoreSet { in_scores, ood_scores })
    }

    pub fn in_scores(&self) -> &[f64] {
        &self.in_scores
    }

    pub fn ood_scores(&self) -> &[f64] {
        &self.ood_scores
    }

    pub fn n_in(&self) -> usize {
        self.in_scores.len()
    }

    pub fn n_ood(&self) -> usize {
        self.ood_scores.len()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<ScoreSet> {
        ScoreSet::new(
            self.in_scores.iter().map(|&v| f(v)).collect(),
            self.ood_scores.iter().map(|&v| f(v)).collect(),
        )
    }
}

/// Cumulative counts at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Counts {
    /// In-distribution samples flagged OOD.
    pub fp: usize,
    /// OOD samples flagged OOD.
    pub tp: usize,
}

/// `(0, 0)` followed by the counts after crossing each tie group, highest
/// score first. The last entry is always `(n_in, n_ood)`.
pub fn operating_points(s: &ScoreSet) -> Vec<Counts> {
    let mut all: Vec<(f64, bool)> = s
        .in_scores
        .iter()
        .map(|&v| (v, false))
        .chain(s.ood_scores.iter().map(|&v| (v, true)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![Counts { fp: 0, tp: 0 }];
    let mut cur = Counts { fp: 0, tp: 0 };
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                cur.tp += 1;
            } else {
                cur.fp += 1;
            }
            i += 1;
        }
        points.push(cur);
    }
    points
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from threshold `+∞` down to `−∞`.
    pub points: Vec<(f64, f64)>,
}

pub fn roc_curve(s: &ScoreSet) -> RocCurve {
    let (n, p) = (s.n_in() as f64, s.n_ood() as f64);
    RocCurve {
        points: operating_points(s)
            .into_iter()
            .map(|c| (c.fp as f64 / n, c.tp as f64 / p))
            .collect(),
    }
}

/// Trapezoidal area under the ROC curve.
pub fn auroc(s: &ScoreSet) -> f64 {
    let pts = operating_points(s);
    // twice the area, in units of 1 / (n_in · n_ood)
    let twice: u128 = pts
        .windows(2)
        .map(|w| (w[1].fp - w[0].fp) as u128 * (w[1].tp + w[0].tp) as u128)
        .sum();
    twice as f64 / (2 * s.n_in() as u128 * s.n_ood() as u128) as f64
}

/// Area under precision–recall, `Σ (R_k − R_{k−1}) · P_k`, no interpolation.
///
/// Accumulated as `Σ ΔTP_k · P_k` and divided by `|ood|` once, so a perfect
/// ranking gives exactly 1.
pub fn aupr(s: &ScoreSet) -> f64 {
    let weighted: f64 = operating_points(s)
        .windows(2)
        .map(|w| (w[1].tp - w[0].tp) as f64 * (w[1].tp as f64 / (w[1].tp + w[1].fp) as f64))
        .sum();
    weighted / s.n_ood() as f64
}

/// Largest achievable TPR with FPR at most `fpr_cap`.
pub fn tpr_at_fpr(s: &ScoreSet, fpr_cap: f64) -> f64 {
    let (n, p) = (s.n_in() as f64, s.n_ood() as f64);
    operating_points(s)
        .into_iter()
        .filter(|c| c.fp as f64 / n <= fpr_cap)
        .map(|c| c.tp as f64 / p)
        .fold(0.0, f64::max)
}

/// Smallest achievable FPR with TPR at least `tpr_floor`.
pub fn fpr_at_tpr(s: &ScoreSet, tpr_floor: f64) -> f64 {
    let (n, p) = (s.n_in() as f64, s.n_ood() as f64);
    operating_points(s)
        .into_iter()
        .filter(|c| c.tp as f64 / p >= tpr_floor)
        .map(|c| c.fp as f64 / n)
        .fold(1.0, f64::min)
}

pub const PAIRWISE_ORACLE_LIMIT: usize = 10_000_000;

/// `(#(ood > in) + ½ #(ood = in)) / (|in| · |ood|)` by direct enumeration.
pub fn auroc_pairwise_oracle(s: &ScoreSet) -> Result<f64> {
    let pairs = s.n_in().saturating_mul(s.n_ood());
    if pairs > PAIRWISE_ORACLE_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "pairwise oracle limited to {PAIRWISE_ORACLE_LIMIT} pairs, got {pairs}"
        )));
    }
    let mut twice = 0u64;
    for &o in &s.ood_scores {
        for &i in &s.in_scores {
            if o > i {
                twice += 2;
            } else if o == i {
                twice += 1;
            }
        }
    }
    Ok(twice as f64 / (2 * pairs) as f64)
}

/// The four reported metrics, each a fraction in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub tpr10: f64,
    pub fpr95: f64,
    pub auroc: f64,
    pub aupr: f64,
}

impl MetricRow {
    pub fn evaluate(s: &ScoreSet) -> Self {
        MetricRow {
            tpr10: tpr_at_fpr(s, 0.10),
            fpr95: fpr_at_tpr(s, 0.95),
            auroc: auroc(s),
            aupr: aupr(s),
        }
    }

    /// In table column order: TPR10, FPR95, AUROC, AUPR.
    pub fn values(&self) -> [f64; 4] {
        [self.tpr10, self.fpr95, self.auroc, self.aupr]
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn score_sets() -> impl Strategy<Value = ScoreSet> {
        (
            prop::collection::vec(-20i32..20, 1..40),
            prop::collection::vec(-20i32..20, 1..40),
        )
            .prop_map(|(a, b)| {
                ScoreSet::new(
                    a.into_iter().map(|v| v as f64 * 0.25).collect(),
                    b.into_iter().map(|v| v as f64 * 0.25).collect(),
                )
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn caps_are_monotone(s in score_sets(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(tpr_at_fpr(&s, lo) <= tpr_at_fpr(&s, hi));
            prop_assert!(fpr_at_tpr(&s, lo) <= fpr_at_tpr(&s, hi));
        }

        #[test]
        fn increasing_transform_preserves_metrics(s in score_sets()) {
            let t = s.map(|v| (v * 0.7).exp() + 3.0 * v).unwrap();
            prop_assert_eq!(MetricRow::evaluate(&s), MetricRow::evaluate(&t));
        }

        #[test]
        fn metrics_are_fractions(s in score_sets()) {
            for v in MetricRow::evaluate(&s).values() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
