//! Six-layer saliency decoder.
//!
//! Layer 1 convolves and upsamples `O_AV`; layers 2–4 each concatenate a
//! visual tap along the temporal axis (stage 4, then 3, then 2), convolve
//! and upsample; layer 5 convolves and upsamples to full resolution;
//! layer 6 projects channels and then time down to 1 before the sigmoid.

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::params::{Bound, ConvLayer, ParamSet};
use crate::autodiff::{Graph, Padding, Var};
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Debug)]
pub(crate) struct Decoder {
    layers: [ConvLayer; 5],
    project_channels: ConvLayer,
    project_time: ConvLayer,
    /// Upsampling target `(F, H, W)` after each of layers 1–5.
    targets: [[usize; 3]; 5],
}

impl Decoder {
    pub fn new<T: Real>(cfg: &ModelConfig, ps: &mut ParamSet<T>, rng: &mut ChaCha8Rng) -> Self {
        let c = cfg.channels;
        let (f0, h0, w0) = (cfg.frames, cfg.height, cfg.width);
        let widths = [(c, c / 2), (c / 2, c / 4), (c / 4, c / 8), (c / 8, c / 16), (c / 16, c / 16)];
        let k = [3, 3, 3];
        let layers = std::array::from_fn(|i| {
            let (cin, cout) = widths[i];
            ConvLayer::new3d(ps, &format!("decoder.layer{}", i + 1), cin, cout, k, [1, 1, 1], Padding::Same, rng)
        });
        let project_channels =
            ConvLayer::new3d(ps, "decoder.layer6.channels", c / 16, 1, k, [1, 1, 1], Padding::Same, rng);
        let project_time =
            ConvLayer::new3d(ps, "decoder.layer6.time", 1, 1, [f0, 1, 1], [1, 1, 1], Padding::Valid, rng);
        Decoder {
            layers,
            project_channels,
            project_time,
            targets: [
                [f0 / 8, h0 / 16, w0 / 16],
                [f0 / 4, h0 / 8, w0 / 8],
                [f0 / 2, h0 / 4, w0 / 4],
                [f0, h0 / 2, w0 / 2],
                [f0, h0, w0],
            ],
        }
    }

    /// `O_AV` plus the four visual taps to the `[H0, W0]` saliency map.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, o_av: Var, taps: &[Var; 4]) -> Result<Var> {
        let skips = [None, Some(taps[3]), Some(taps[2]), Some(taps[1]), None];
        let mut x = o_av;
        for ((layer, skip), target) in self.layers.iter().zip(skips).zip(self.targets) {
            if let Some(t) = skip {
                x = g.concat(&[x, t], 1).map_err(|e| Error::InvalidShape {
                    op: "decoder",
                    msg: format!("skip connection: {e}"),
                })?;
            }
            let y = layer.forward3d(g, p, x)?;
            let y = g.relu(y)?;
            x = g.trilinear_upsample(y, target)?;
        }
        let x = self.project_channels.forward3d(g, p, x)?;
        let x = self.project_time.forward3d(g, p, x)?;
        let s = g.shape(x).to_vec();
        let x = g.reshape(x, &[s[2], s[3]])?;
        g.sigmoid(x)
    }
}
