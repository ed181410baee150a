//! Saliency metrics: CC, NSS, AUC-Judd, shuffled AUC and SIM.
//!
//! All scores are computed in f64 regardless of the map element type.

mod report;

use std::collections::BTreeSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use report::{evaluate, format_table, parse_report_csv, ClipMetrics, MetricReport, MetricValues, Predictor, ShufflePool, REPORT_HEADER};

/// Distinct in-bounds fixation coordinates `(row, col)` on an `H×W` map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixationSet {
    points: Vec<(usize, usize)>,
    height: usize,
    width: usize,
}

impl FixationSet {
    pub fn new(points: Vec<(usize, usize)>, height: usize, width: usize) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for &(r, c) in &points {
            if r >= height || c >= width {
                return Err(Error::invalid(format!("fixation ({r},{c}) outside {height}x{width}")));
            }
            if !seen.insert((r, c)) {
                return Err(Error::invalid(format!("duplicate fixation ({r},{c})")));
            }
        }
        Ok(FixationSet { points, height, width })
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>, height: usize, width: usize) -> Result<Self> {
        Self::new(indices.into_iter().map(|i| (i / width, i % width)).collect(), height, width)
    }

    pub fn points(&self) -> &[(usize, usize)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.points.iter().map(|&(r, c)| r * self.width + c)
    }
}

/// A metric value plus whether it was defined by convention on a
/// zero-variance input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    pub value: f64,
    pub degenerate: bool,
}

impl Score {
    fn ok(value: f64) -> Self {
        Score { value, degenerate: false }
    }

    fn degenerate() -> Self {
        Score { value: 0.0, degenerate: true }
    }
}

fn values<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

fn check_map<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::invalid(format!("{op}: map contains non-finite values")));
    }
    Ok(())
}

fn check_pair<T: Real>(op: &'static str, p: &Tensor<T>, g: &Tensor<T>) -> Result<()> {
    if p.shape() != g.shape() {
        return Err(Error::ShapeMismatch {
            op,
            expected: p.shape().to_vec(),
            got: g.shape().to_vec(),
        });
    }
    check_map(op, p)?;
    check_map(op, g)
}

fn check_fixations<T: Real>(op: &'static str, p: &Tensor<T>, fix: &FixationSet) -> Result<()> {
    check_map(op, p)?;
    if fix.is_empty() {
        return Err(Error::invalid(format!("{op}: empty fixation set")));
    }
    let (h, w) = fix.dims();
    if p.shape() != [h, w] {
        return Err(Error::ShapeMismatch {
            op,
            expected: vec![h, w],
            got: p.shape().to_vec(),
        });
    }
    Ok(())
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pearson correlation of the flattened maps.
pub fn cc<T: Real>(p: &Tensor<T>, g: &Tensor<T>) -> Result<Score> {
    check_pair("cc", p, g)?;
    let (p, g) = (values(p), values(g));
    let (mp, sp) = mean_std(&p);
    let (mg, sg) = mean_std(&g);
    if sp == 0.0 || sg == 0.0 {
        return Ok(Score::degenerate());
    }
    let cov = p.iter().zip(&g).map(|(a, b)| (a - mp) * (b - mg)).sum::<f64>() / p.len() as f64;
    Ok(Score::ok((cov / (sp * sg)).clamp(-1.0, 1.0)))
}

/// Mean z-score of `p` at the fixations, using the population std.
pub fn nss<T: Real>(p: &Tensor<T>, fix: &FixationSet) -> Result<Score> {
    check_fixations("nss", p, fix)?;
    let p = values(p);
    let (m, s) = mean_std(&p);
    if s == 0.0 {
        return Ok(Score::degenerate());
    }
    Ok(Score::ok(fix.indices().map(|i| (p[i] - m) / s).sum::<f64>() / fix.len() as f64))
}

/// Area under the ROC curve of `pos` against `neg`, ties counted as one
/// half. Equals the fraction of (positive, negative) pairs ranked correctly.
pub fn auc_from_scores(pos: &[f64], neg: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&v| (v, true)).chain(neg.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut wins = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut np, mut nn) = (0usize, 0usize);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                np += 1;
            } else {
                nn += 1;
            }
            j += 1;
        }
        wins += np as f64 * (neg_below as f64 + 0.5 * nn as f64);
        neg_below += nn;
        i = j;
    }
    wins / (pos.len() as f64 * neg.len() as f64)
}

/// ROC area with fixated pixels as positives and all other pixels as
/// negatives.
pub fn auc_judd<T: Real>(p: &Tensor<T>, fix: &FixationSet) -> Result<f64> {
    check_fixations("auc_judd", p, fix)?;
    let p = values(p);
    let fixated: BTreeSet<usize> = fix.indices().collect();
    if fixated.len() == p.len() {
        return Err(Error::invalid("auc_judd: every pixel is fixated, no negatives"));
    }
    let pos: Vec<f64> = fixated.iter().map(|&i| p[i]).collect();
    let neg: Vec<f64> = (0..p.len()).filter(|i| !fixated.contains(i)).map(|i| p[i]).collect();
    Ok(auc_from_scores(&pos, &neg))
}

/// ROC area with negatives drawn without replacement from the union of
/// `pool` (other clips' fixations), as many as there are positives.
pub fn sauc<T: Real>(p: &Tensor<T>, fix: &FixationSet, pool: &[&FixationSet], seed: u64) -> Result<f64> {
    check_fixations("sauc", p, fix)?;
    let dims = fix.dims();
    let mut union = BTreeSet::new();
    for other in pool {
        if other.dims() != dims {
            return Err(Error::invalid(format!("sauc: shuffle pool map {:?} differs from {dims:?}", other.dims())));
        }
        union.extend(other.indices());
    }
    if union.is_empty() {
        return Err(Error::invalid("sauc: empty shuffle pool"));
    }
    let union: Vec<usize> = union.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = fix.len().min(union.len());
    let mut picks = index::sample(&mut rng, union.len(), k).into_vec();
    picks.sort_unstable();
    let p = values(p);
    let pos: Vec<f64> = fix.indices().map(|i| p[i]).collect();
    let neg: Vec<f64> = picks.iter().map(|&j| p[union[j]]).collect();
    Ok(auc_from_scores(&pos, &neg))
}

/// Histogram intersection of the two sum-normalized maps.
pub fn sim<T: Real>(p: &Tensor<T>, g: &Tensor<T>) -> Result<f64> {
    check_pair("sim", p, g)?;
    let (p, g) = (values(p), values(g));
    for (name, m) in [("prediction", &p), ("ground truth", &g)] {
        if m.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid(format!("sim: {name} map has negative values")));
        }
    }
    let (sp, sg) = (p.iter().sum::<f64>(), g.iter().sum::<f64>());
    if sp == 0.0 || sg == 0.0 {
        return Err(Error::invalid("sim: all-zero map"));
    }
    let s: f64 = p.iter().zip(&g).map(|(a, b)| (a / sp).min(b / sg)).sum();
    Ok(s.min(1.0))
}
