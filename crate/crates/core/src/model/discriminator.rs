//! Domain classifiers behind gradient reversal.
//!
//! Three 1×1 convolutions compress `c -> c/2 -> c/4 -> c/8`, a global
//! average pool follows, then fully-connected layers `-> 64 -> 16 -> 1`
//! and a sigmoid. The score is the probability of the SOURCE domain.

use rand_chacha::ChaCha8Rng;

use super::params::{Bound, ConvLayer, LinearLayer, ParamSet};
use crate::autodiff::{Graph, Padding, Var};
use crate::error::Result;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscriminatorKind {
    /// Sees `O_A: [c, 3]`.
    Audio,
    /// Sees `O_AV: [c, F, H, W]`.
    AudioVisual,
}

#[derive(Clone, Debug)]
pub(crate) struct Discriminator {
    kind: DiscriminatorKind,
    convs: [ConvLayer; 3],
    fcs: [LinearLayer; 3],
}

impl Discriminator {
    pub fn new<T: Real>(kind: DiscriminatorKind, c: usize, ps: &mut ParamSet<T>, rng: &mut ChaCha8Rng) -> Self {
        let prefix = match kind {
            DiscriminatorKind::Audio => "disc_audio",
            DiscriminatorKind::AudioVisual => "disc_fusion",
        };
        let widths = [(c, c / 2), (c / 2, c / 4), (c / 4, c / 8)];
        let convs = std::array::from_fn(|i| {
            let (cin, cout) = widths[i];
            let name = format!("{prefix}.conv{}", i + 1);
            match kind {
                DiscriminatorKind::Audio => ConvLayer::new1d(ps, &name, cin, cout, 1, 1, Padding::Valid, rng),
                DiscriminatorKind::AudioVisual => {
                    ConvLayer::new3d(ps, &name, cin, cout, [1, 1, 1], [1, 1, 1], Padding::Valid, rng)
                }
            }
        });
        let dims = [(c / 8, 64), (64, 16), (16, 1)];
        let fcs = std::array::from_fn(|i| LinearLayer::new(ps, &format!("{prefix}.fc{}", i + 1), dims[i].0, dims[i].1, rng));
        Discriminator { kind, convs, fcs }
    }

    /// Classifies already-reversed features; returns the `[1]` logit and
    /// its sigmoid score.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, features: Var) -> Result<(Var, Var)> {
        let mut x = features;
        for conv in &self.convs {
            let y = match self.kind {
                DiscriminatorKind::Audio => conv.forward1d(g, p, x)?,
                DiscriminatorKind::AudioVisual => conv.forward3d(g, p, x)?,
            };
            x = g.relu(y)?;
        }
        let pooled = g.global_avg_pool(x)?;
        let n = g.shape(pooled)[0];
        let mut h = g.reshape(pooled, &[1, n])?;
        for (i, fc) in self.fcs.iter().enumerate() {
            h = fc.forward(g, p, h)?;
            if i < 2 {
                h = g.relu(h)?;
            }
        }
        let logit = g.reshape(h, &[1])?;
        Ok((logit, g.sigmoid(logit)?))
    }

    pub fn final_layer(&self) -> &LinearLayer {
        &self.fcs[2]
    }
}
