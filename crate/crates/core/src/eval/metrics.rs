use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Scores (higher = more anomalous) paired with binary labels (1 = anomaly).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Metric(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| s.is_nan()) {
            return Err(Error::Metric(format!("score {i} is NaN")));
        }
        Ok(ScoredSet { scores, labels })
    }

    /// Normal samples labelled 0 followed by anomalies labelled 1.
    pub fn from_groups(normal: &[f64], anomalous: &[f64]) -> Result<Self> {
        let scores = normal.iter().chain(anomalous).copied().collect();
        let labels = std::iter::repeat_n(false, normal.len())
            .chain(std::iter::repeat_n(true, anomalous.len()))
            .collect();
        Self::new(scores, labels)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    /// Fraction of samples labelled anomalous.
    pub fn base_rate(&self) -> f64 {
        self.positives() as f64 / self.len() as f64
    }
}

/// Probability that a random anomaly outranks a random normal sample, ties ½.
///
/// Computed from mid-ranks: `U = Σ rank(positives) − n₁(n₁+1)/2`.
pub fn auroc(s: &ScoredSet) -> Result<f64> {
    let n1 = s.positives();
    let n0 = s.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::Metric("auroc: need both classes".into()));
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));
    // Twice the rank sum keeps mid-ranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && s.scores[order[j + 1]] == s.scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share the mid-rank (i + j + 2)/2.
        let pos = order[i..=j].iter().filter(|&&k| s.labels[k]).count() as u128;
        twice_rank_sum += pos * (i + j + 2) as u128;
        i = j + 1;
    }
    let n1 = n1 as u128;
    let twice_u = twice_rank_sum - n1 * (n1 + 1);
    Ok(twice_u as f64 / (2 * n1 * n0 as u128) as f64)
}

/// Average precision: mean over positives of precision at their rank in
/// descending score order. Equal scores keep their input order.
pub fn auprc(s: &ScoredSet) -> Result<f64> {
    let n1 = s.positives();
    if n1 == 0 {
        return Err(Error::Metric("auprc: need at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]));
    let mut tp = 0usize;
    let mut total = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if s.labels[i] {
            tp += 1;
            total += tp as f64 / (k + 1) as f64;
        }
    }
    Ok(total / n1 as f64)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance over the pooled rows of `a` and `b`.
///
/// Falls back to 1 when every pair coincides.
pub fn median_bandwidth(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair(a, b)?;
    let rows: Vec<&[f64]> = (0..a.rows()).map(|i| a.row(i)).chain((0..b.rows()).map(|i| b.row(i))).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]));
        }
    }
    if d.is_empty() {
        return Ok(1.0);
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, |x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
    let med = m.sqrt();
    Ok(if med > 0.0 { med } else { 1.0 })
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() {
        return Err(Error::Shape(format!("mmd inputs {:?} and {:?}", a.shape(), b.shape())));
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::Shape("mmd needs at least one row in each set".into()));
    }
    Ok(())
}

fn kernel_mean(a: &Tensor, b: &Tensor, gamma: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..a.rows() {
        let ra = a.row(i);
        for j in 0..b.rows() {
            total += (-gamma * sq_dist(ra, b.row(j))).exp();
        }
    }
    total / (a.rows() * b.rows()) as f64
}

/// Biased (V-statistic) MMD² with RBF kernel `exp(−‖u−v‖²/(2h²))`.
///
/// `bandwidth = None` uses [`median_bandwidth`].
pub fn mmd(a: &Tensor, b: &Tensor, bandwidth: Option<f64>) -> Result<f64> {
    check_pair(a, b)?;
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::Metric(format!("bandwidth {h} must be positive"))),
        None => median_bandwidth(a, b)?,
    };
    let gamma = 1.0 / (2.0 * h * h);
    let kab = kernel_mean(a, b, gamma);
    let kba = kernel_mean(b, a, gamma);
    let v = kernel_mean(a, a, gamma) + kernel_mean(b, b, gamma) - kab - kba;
    Ok(v.max(0.0))
}

/// Per-mode sample counts for a mixture with known centres.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeCoverage {
    pub counts: Vec<usize>,
    pub covered: usize,
}

/// A point covers centre `k` if within `radius` of it; a centre counts as
/// covered when at least `min_fraction` of all points cover it.
pub fn mode_coverage(points: &Tensor, centers: &[[f64; 2]], radius: f64, min_fraction: f64) -> Result<ModeCoverage> {
    if points.rank() != 2 || points.cols() != 2 {
        return Err(Error::Shape(format!("mode coverage needs N×2 points, got {:?}", points.shape())));
    }
    let mut counts = vec![0; centers.len()];
    for i in 0..points.rows() {
        let p = points.row(i);
        for (k, c) in centers.iter().enumerate() {
            if sq_dist(p, c) <= radius * radius {
                counts[k] += 1;
            }
        }
    }
    let need = min_fraction * points.rows() as f64;
    let covered = counts.iter().filter(|&&c| c as f64 >= need && c > 0).count();
    Ok(ModeCoverage { counts, covered })
}
