//! Saliency and domain-adversarial objectives.
//!
//! * [`kl_loss`]: `Σ G·log(ε + G / (P̂ + ε))` with `P̂ = P / ΣP`.
//! * [`domain_loss`]: `−log(d_s) − log(1 − d_t)`, source labelled 1.
//! * [`LossWeights::combine`]: weighted sum of the three terms.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Distance kept between domain scores and the ends of (0, 1).
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub saliency: f64,
    pub audio: f64,
    pub fusion: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            saliency: 1.0,
            audio: 1.0,
            fusion: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_s", self.saliency), ("w_a", self.audio), ("w_av", self.fusion)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be >= 0, got {w}")));
            }
        }
        Ok(())
    }

    /// Weighted total over the terms that are active. `None` drops a term
    /// entirely, which is how the domain-adaptation modes switch off the
    /// adversarial losses.
    pub fn combine(&self, saliency: f64, audio: Option<f64>, fusion: Option<f64>) -> f64 {
        let mut total = self.saliency * saliency;
        if let Some(a) = audio {
            total += self.audio * a;
        }
        if let Some(av) = fusion {
            total += self.fusion * av;
        }
        total
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub epsilon: f64,
    pub weights: LossWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            epsilon: 1e-7,
            weights: LossWeights::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        self.weights.validate()
    }
}

/// KL saliency loss of a prediction `p` (any positive map) against a
/// sum-normalized ground truth `gt` of the same shape.
///
/// `epsilon = 0` evaluates the exact divergence with `0·log 0 = 0`.
pub fn kl_loss<T: Real>(g: &mut Graph<T>, p: Var, gt: &Tensor<T>, epsilon: f64) -> Result<Var> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("kl epsilon must be >= 0, got {epsilon}")));
    }
    let shape = g.shape(p).to_vec();
    if gt.shape() != shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "kl_loss",
            expected: shape,
            got: gt.shape().to_vec(),
        });
    }
    let eps = T::from_f64_lossy(epsilon);
    let ones = vec![1; shape.len()];
    let total = g.sum(p)?;
    let total = g.reshape(total, &ones)?;
    let total = g.broadcast_to(total, &shape)?;
    let p_hat = g.div(p, total)?;

    let gt_var = g.constant(gt.clone());
    let denom = g.add_scalar(p_hat, eps)?;
    let ratio = g.div(gt_var, denom)?;
    let mut inner = g.add_scalar(ratio, eps)?;
    if epsilon == 0.0 {
        let guard = Tensor::from_fn(shape.clone(), |i| {
            if gt.data()[i] == T::zero() {
                T::one()
            } else {
                T::zero()
            }
        });
        let guard = g.constant(guard);
        inner = g.add(inner, guard)?;
    }
    let log = g.log(inner)?;
    let terms = g.mul(gt_var, log)?;
    g.sum(terms)
}

/// Adversarial domain loss for one (source, target) pair of discriminator
/// scores, each of shape `[1]`.
pub fn domain_loss<T: Real>(g: &mut Graph<T>, d_source: Var, d_target: Var) -> Result<Var> {
    let (s, t) = (domain_source_term(g, d_source)?, domain_target_term(g, d_target)?);
    g.add(s, t)
}

/// `−log(d)` for a source-domain score.
pub fn domain_source_term<T: Real>(g: &mut Graph<T>, d: Var) -> Result<Var> {
    let lo = T::from_f64_lossy(PROB_CLAMP);
    let c = g.clamp(d, lo, T::one() - lo)?;
    let l = g.log(c)?;
    g.neg(l)
}

/// `−log(1 − d)` for a target-domain score.
pub fn domain_target_term<T: Real>(g: &mut Graph<T>, d: Var) -> Result<Var> {
    let lo = T::from_f64_lossy(PROB_CLAMP);
    let c = g.clamp(d, lo, T::one() - lo)?;
    let nc = g.neg(c)?;
    let one_minus = g.add_scalar(nc, T::one())?;
    let l = g.log(one_minus)?;
    g.neg(l)
}

/// `−log σ(z)`: the source term computed from a discriminator logit.
///
/// Equal to [`domain_source_term`] of `σ(z)` wherever the clamp is
/// inactive, but its gradient never vanishes on the wrong side, so a
/// saturated discriminator can still recover.
pub fn domain_source_term_logit<T: Real>(g: &mut Graph<T>, z: Var) -> Result<Var> {
    let l = g.log_sigmoid(z)?;
    g.neg(l)
}

/// `−log(1 − σ(z)) = −log σ(−z)`: the target term from a logit.
pub fn domain_target_term_logit<T: Real>(g: &mut Graph<T>, z: Var) -> Result<Var> {
    let nz = g.neg(z)?;
    let l = g.log_sigmoid(nz)?;
    g.neg(l)
}

/// Weighted total inside a graph. Terms passed as `None` are dropped.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    saliency: Var,
    audio: Option<Var>,
    fusion: Option<Var>,
    weights: &LossWeights,
) -> Result<Var> {
    let mut total = g.scale(saliency, T::from_f64_lossy(weights.saliency))?;
    for (term, w) in [(audio, weights.audio), (fusion, weights.fusion)] {
        if let Some(v) = term {
            let s = g.scale(v, T::from_f64_lossy(w))?;
            total = g.add(total, s)?;
        }
    }
    Ok(total)
}
