//! Stand-in visual (3-D CNN) and audio (1-D CNN) encoders.
//!
//! Both keep the stride budget of the full-size backbones: the visual
//! branch divides time by 8 and space by 32, the audio branch ends with
//! exactly three temporal steps.

use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, AUDIO_KERNEL, AUDIO_STRIDE, AUDIO_STRIDED_LAYERS};
use super::params::{Bound, ConvLayer, ParamSet};
use crate::autodiff::{Graph, Padding, Var};
use crate::error::{Error, Result};
use crate::tensor::Real;

const VISUAL_STRIDES: [[usize; 3]; 5] = [[1, 2, 2], [2, 2, 2], [2, 2, 2], [2, 2, 2], [1, 2, 2]];

#[derive(Clone, Debug)]
pub(crate) struct VisualEncoder {
    stages: Vec<ConvLayer>,
}

impl VisualEncoder {
    pub fn new<T: Real>(cfg: &ModelConfig, ps: &mut ParamSet<T>, rng: &mut ChaCha8Rng) -> Self {
        let c = cfg.channels;
        let widths = [c / 16, c / 8, c / 4, c / 2, c];
        let mut cin = 3;
        let stages = widths
            .iter()
            .zip(VISUAL_STRIDES)
            .enumerate()
            .map(|(i, (&cout, stride))| {
                let l = ConvLayer::new3d(ps, &format!("visual.stage{}", i + 1), cin, cout, [3, 3, 3], stride, Padding::Same, rng);
                cin = cout;
                l
            })
            .collect();
        VisualEncoder { stages }
    }

    /// Returns `O_V` and the outputs of stages 1–4.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, video: Var) -> Result<(Var, [Var; 4])> {
        let mut x = video;
        let mut taps = Vec::with_capacity(4);
        for (i, stage) in self.stages.iter().enumerate() {
            let y = stage.forward3d(g, p, x)?;
            x = g.relu(y)?;
            if i < 4 {
                taps.push(x);
            }
        }
        Ok((x, [taps[0], taps[1], taps[2], taps[3]]))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct AudioEncoder {
    layers: Vec<ConvLayer>,
}

impl AudioEncoder {
    pub fn new<T: Real>(cfg: &ModelConfig, ps: &mut ParamSet<T>, rng: &mut ChaCha8Rng) -> Result<Self> {
        let c = cfg.channels;
        let final_kernel = cfg.audio_final_kernel()?;
        let widths = [c / 8, c / 4, c / 2, c];
        let mut layers = Vec::with_capacity(AUDIO_STRIDED_LAYERS + 1);
        let mut cin = 1;
        for (i, &cout) in widths.iter().enumerate().take(AUDIO_STRIDED_LAYERS) {
            layers.push(ConvLayer::new1d(
                ps,
                &format!("audio.layer{}", i + 1),
                cin,
                cout,
                AUDIO_KERNEL,
                AUDIO_STRIDE,
                Padding::Same,
                rng,
            ));
            cin = cout;
        }
        layers.push(ConvLayer::new1d(
            ps,
            &format!("audio.layer{}", AUDIO_STRIDED_LAYERS + 1),
            cin,
            c,
            final_kernel,
            1,
            Padding::Valid,
            rng,
        ));
        Ok(AudioEncoder { layers })
    }

    /// `[1, T_a] -> [c, 3]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, audio: Var) -> Result<Var> {
        let mut x = audio;
        for layer in &self.layers {
            let y = layer.forward1d(g, p, x)?;
            x = g.relu(y)?;
        }
        if g.shape(x)[1] != super::AUDIO_TOKENS {
            return Err(Error::InvalidShape {
                op: "audio_encoder",
                msg: format!("output length {} != {}", g.shape(x)[1], super::AUDIO_TOKENS),
            });
        }
        Ok(x)
    }
}
