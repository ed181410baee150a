//! Audio-visual fusion heads.

use rand_chacha::ChaCha8Rng;

use super::config::{FusionMode, ModelConfig};
use super::params::{Bound, ConvLayer, LinearLayer, ParamId, ParamSet};
use crate::autodiff::{Graph, Padding, Var};
use crate::error::Result;
use crate::tensor::Real;

#[derive(Clone, Debug)]
pub(crate) struct CrossModal {
    proj_visual: ConvLayer,
    proj_audio: ConvLayer,
    w_query: ParamId,
    w_key: ParamId,
    w_value: ParamId,
    fc: LinearLayer,
    mlp_in: LinearLayer,
    mlp_out: LinearLayer,
    out: LinearLayer,
    dim: usize,
}

/// Intermediate values of the cross-modal attention, exposed for tests.
#[derive(Clone, Copy, Debug)]
pub struct AttentionTrace {
    pub x_visual: Var,
    pub x_audio: Var,
    /// Row-stochastic `[T_V, 3]` attention weights.
    pub weights: Var,
    /// `[T_V, d]` attended audio values.
    pub attended: Var,
}

impl CrossModal {
    fn new<T: Real>(cfg: &ModelConfig, ps: &mut ParamSet<T>, rng: &mut ChaCha8Rng) -> Self {
        let (c, d) = (cfg.channels, cfg.fusion_dim);
        CrossModal {
            proj_visual: ConvLayer::new1d(ps, "fusion.proj_visual", c, d, 1, 1, Padding::Valid, rng),
            proj_audio: ConvLayer::new1d(ps, "fusion.proj_audio", c, d, 1, 1, Padding::Valid, rng),
            w_query: ps.weight("fusion.w_query".into(), vec![d, d], d, rng),
            w_key: ps.weight("fusion.w_key".into(), vec![d, d], d, rng),
            w_value: ps.weight("fusion.w_value".into(), vec![d, d], d, rng),
            fc: LinearLayer::new(ps, "fusion.fc", d, d, rng),
            mlp_in: LinearLayer::new(ps, "fusion.mlp_in", d, 4 * d, rng),
            mlp_out: LinearLayer::new(ps, "fusion.mlp_out", 4 * d, d, rng),
            out: LinearLayer::new(ps, "fusion.out", d, c, rng),
            dim: d,
        }
    }

    /// `softmax(Q·Kᵀ/√d)·V` with visual queries and audio keys/values.
    pub fn attend<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x_visual: Var,
        x_audio: Var,
    ) -> Result<(Var, Var)> {
        let q = g.matmul(x_visual, p.var(self.w_query))?;
        let k = g.matmul(x_audio, p.var(self.w_key))?;
        let v = g.matmul(x_audio, p.var(self.w_value))?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, T::from_f64_lossy(1.0 / (self.dim as f64).sqrt()))?;
        let weights = g.softmax(scores)?;
        let attended = g.matmul(weights, v)?;
        Ok((weights, attended))
    }

    fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        o_v: Var,
        o_a: Var,
    ) -> Result<(Var, AttentionTrace)> {
        let [c, f, h, w]: [usize; 4] = g.shape(o_v).try_into().expect("visual features are 4-D");
        let pooled = g.maxpool_temporal(o_v)?;
        let flat = g.reshape(pooled, &[c, h * w])?;
        let xv = self.proj_visual.forward1d(g, p, flat)?;
        let x_visual = g.transpose(xv)?;
        let xa = self.proj_audio.forward1d(g, p, o_a)?;
        let x_audio = g.transpose(xa)?;

        let (weights, attended) = self.attend(g, p, x_visual, x_audio)?;
        let y = self.fc.forward(g, p, attended)?;
        let hidden = g.add(y, x_visual)?;
        let m = self.mlp_in.forward(g, p, hidden)?;
        let m = g.relu(m)?;
        let m = self.mlp_out.forward(g, p, m)?;
        let enhanced = g.add(hidden, m)?;

        // [T_V, d] -> [c, H, W], broadcast over time and added to O_V
        let z = self.out.forward(g, p, enhanced)?;
        let z = g.transpose(z)?;
        let z = g.reshape(z, &[c, 1, h, w])?;
        let z = g.broadcast_to(z, &[c, f, h, w])?;
        let o_av = g.add(o_v, z)?;
        Ok((
            o_av,
            AttentionTrace {
                x_visual,
                x_audio,
                weights,
                attended,
            },
        ))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConcatFusion {
    mix: ConvLayer,
}

impl ConcatFusion {
    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, o_v: Var, o_a: Var) -> Result<Var> {
        let shape = g.shape(o_v).to_vec();
        let a = g.global_avg_pool(o_a)?;
        let a = g.reshape(a, &[shape[0], 1, 1, 1])?;
        let a = g.broadcast_to(a, &shape)?;
        let cat = g.concat(&[o_v, a], 0)?;
        self.mix.forward3d(g, p, cat)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BilinearFusion {
    visual: ParamId,
    audio: ParamId,
    gate: LinearLayer,
}

impl BilinearFusion {
    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, o_v: Var, o_a: Var) -> Result<Var> {
        let shape = g.shape(o_v).to_vec();
        let c = shape[0];
        let v = g.global_avg_pool(o_v)?;
        let v = g.reshape(v, &[1, c])?;
        let a = g.global_avg_pool(o_a)?;
        let a = g.reshape(a, &[1, c])?;
        let pv = g.matmul(v, p.var(self.visual))?;
        let pa = g.matmul(a, p.var(self.audio))?;
        let joint = g.mul(pv, pa)?;
        let gate = self.gate.forward(g, p, joint)?;
        let gate = g.sigmoid(gate)?;
        let gate = g.reshape(gate, &[c, 1, 1, 1])?;
        let gate = g.broadcast_to(gate, &shape)?;
        g.mul(o_v, gate)
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Fusion {
    CrossModal(CrossModal),
    Concat(ConcatFusion),
    Bilinear(BilinearFusion),
}

impl Fusion {
    pub fn new<T: Real>(cfg: &ModelConfig, ps: &mut ParamSet<T>, rng: &mut ChaCha8Rng) -> Self {
        let (c, d) = (cfg.channels, cfg.fusion_dim);
        match cfg.fusion {
            FusionMode::CrossModal => Fusion::CrossModal(CrossModal::new(cfg, ps, rng)),
            FusionMode::Concat => Fusion::Concat(ConcatFusion {
                mix: ConvLayer::new3d(ps, "fusion.mix", 2 * c, c, [1, 1, 1], [1, 1, 1], Padding::Valid, rng),
            }),
            FusionMode::Bilinear => Fusion::Bilinear(BilinearFusion {
                visual: ps.weight("fusion.bilinear_visual".into(), vec![c, d], c, rng),
                audio: ps.weight("fusion.bilinear_audio".into(), vec![c, d], c, rng),
                gate: LinearLayer::new(ps, "fusion.gate", d, c, rng),
            }),
        }
    }

    /// `O_V: [c,F,H,W]`, `O_A: [c,3]` to `O_AV: [c,F,H,W]`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        o_v: Var,
        o_a: Var,
    ) -> Result<(Var, Option<AttentionTrace>)> {
        match self {
            Fusion::CrossModal(cm) => cm.forward(g, p, o_v, o_a).map(|(o, t)| (o, Some(t))),
            Fusion::Concat(cat) => cat.forward(g, p, o_v, o_a).map(|o| (o, None)),
            Fusion::Bilinear(bl) => bl.forward(g, p, o_v, o_a).map(|o| (o, None)),
        }
    }
}

#[cfg(test)]
impl CrossModal {
    pub fn w_query_id(&self) -> ParamId {
        self.w_query
    }

    pub fn w_value_id(&self) -> ParamId {
        self.w_value
    }
}
