//! The two-branch audio-visual saliency network.
//!
//! ```text
//! video [3,F0,H0,W0] ─ visual encoder ─ O_V [c,F0/8,H0/32,W0/32] ─┐
//!                                  └─ taps (stages 1–4) ──────┐   ├─ fusion ─ O_AV ─ decoder ─ P [H0,W0]
//! audio [1,T_a] ───── audio encoder ── O_A [c,3] ─────────────┼───┘             │
//!                                          │                  │                  └─ GRL ─ D_AV ─ d_AV
//!                                          └─ GRL ─ D_A ─ d_A └───────────────────────────┘
//! ```

mod checkpoint;
mod config;
mod decoder;
mod discriminator;
mod encoders;
mod fusion;
mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) use checkpoint::write_atomic;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{FusionMode, ModelConfig, AUDIO_TOKENS};
pub use discriminator::DiscriminatorKind;
pub use fusion::AttentionTrace;
pub use params::{Bound, Param, ParamId, ParamSet};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use decoder::Decoder;
use discriminator::Discriminator;
use encoders::{AudioEncoder, VisualEncoder};
use fusion::Fusion;

/// Which parts of the network a forward pass evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads {
    pub saliency: bool,
    pub audio_domain: bool,
    pub fusion_domain: bool,
    /// Route discriminator inputs through gradient reversal. Off gives the
    /// plain (non-adversarial) gradient, used to check the reversal contract.
    pub reversal: bool,
}

impl Heads {
    pub const SALIENCY: Heads = Heads {
        saliency: true,
        audio_domain: false,
        fusion_domain: false,
        reversal: true,
    };

    pub const ALL: Heads = Heads {
        saliency: true,
        audio_domain: true,
        fusion_domain: true,
        reversal: true,
    };

    fn needs_visual(&self) -> bool {
        self.saliency || self.fusion_domain
    }
}

/// Graph handles produced by [`SaliencyModel::forward`].
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `[H0, W0]` saliency map in (0, 1).
    pub saliency: Option<Var>,
    pub visual: Option<Var>,
    pub taps: Option<[Var; 4]>,
    pub audio: Var,
    pub fused: Option<Var>,
    pub attention: Option<AttentionTrace>,
    /// `[1]` source-domain probability from the audio discriminator.
    pub d_audio: Option<Var>,
    /// `[1]` source-domain probability from the audio-visual discriminator.
    pub d_fusion: Option<Var>,
    /// Pre-sigmoid logits of the two scores.
    pub d_audio_logit: Option<Var>,
    pub d_fusion_logit: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct SaliencyModel<T: Real = f32> {
    config: ModelConfig,
    params: ParamSet<T>,
    visual: VisualEncoder,
    audio: AudioEncoder,
    fusion: Fusion,
    decoder: Decoder,
    disc_audio: Discriminator,
    disc_fusion: Discriminator,
}

impl<T: Real> SaliencyModel<T> {
    /// Builds a freshly initialized model. Parameter layout depends only on
    /// `config`; values depend on `(config, seed)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let visual = VisualEncoder::new(&config, &mut ps, &mut rng);
        let audio = AudioEncoder::new(&config, &mut ps, &mut rng)?;
        let fusion = Fusion::new(&config, &mut ps, &mut rng);
        let decoder = Decoder::new(&config, &mut ps, &mut rng);
        let c = config.channels;
        let disc_audio = Discriminator::new(DiscriminatorKind::Audio, c, &mut ps, &mut rng);
        let disc_fusion = Discriminator::new(DiscriminatorKind::AudioVisual, c, &mut ps, &mut rng);
        Ok(SaliencyModel {
            config,
            params: ps,
            visual,
            audio,
            fusion,
            decoder,
            disc_audio,
            disc_fusion,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Sets the reversal coefficient used by subsequent forward passes.
    pub fn set_grl_lambda(&mut self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("grl_lambda must be >= 0, got {lambda}")));
        }
        self.config.grl_lambda = lambda;
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        self.params.bind(g, trainable)
    }

    /// Whether parameter `name` belongs to a domain discriminator.
    pub fn is_discriminator_param(name: &str) -> bool {
        name.starts_with("disc_")
    }

    /// Whether parameter `name` belongs to the shared feature extractor
    /// (encoders and fusion), i.e. upstream of the gradient reversal.
    pub fn is_feature_param(name: &str) -> bool {
        name.starts_with("visual.") || name.starts_with("audio.") || name.starts_with("fusion.")
    }

    pub fn check_inputs(&self, video: &[usize], audio: &[usize]) -> Result<()> {
        let c = &self.config;
        let want_v = [3, c.frames, c.height, c.width];
        if video != want_v {
            return Err(Error::ShapeMismatch {
                op: "visual_encoder",
                expected: want_v.to_vec(),
                got: video.to_vec(),
            });
        }
        if audio != [1, c.audio_len] {
            return Err(Error::ShapeMismatch {
                op: "audio_encoder",
                expected: vec![1, c.audio_len],
                got: audio.to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, video: Var, audio: Var, heads: Heads) -> Result<Forward> {
        self.check_inputs(g.shape(video), g.shape(audio))?;
        let lambda = T::from_f64_lossy(self.config.grl_lambda);
        // the plain path keeps a node in the same slot (an exact x1 scale) so
        // both variants accumulate gradients in the same order
        let reverse = |g: &mut Graph<T>, x: Var| {
            if heads.reversal {
                g.grad_reversal(x, lambda)
            } else {
                g.scale(x, T::one())
            }
        };

        let o_a = self.audio.forward(g, p, audio)?;
        let mut out = Forward {
            saliency: None,
            visual: None,
            taps: None,
            audio: o_a,
            fused: None,
            attention: None,
            d_audio: None,
            d_fusion: None,
            d_audio_logit: None,
            d_fusion_logit: None,
        };
        if heads.audio_domain {
            let r = reverse(g, o_a)?;
            let (z, d) = self.disc_audio.forward(g, p, r)?;
            out.d_audio = Some(d);
            out.d_audio_logit = Some(z);
        }
        if !heads.needs_visual() {
            return Ok(out);
        }
        let (o_v, taps) = self.visual.forward(g, p, video)?;
        let (o_av, attention) = self.fusion.forward(g, p, o_v, o_a)?;
        out.visual = Some(o_v);
        out.taps = Some(taps);
        out.fused = Some(o_av);
        out.attention = attention;
        if heads.fusion_domain {
            let r = reverse(g, o_av)?;
            let (z, d) = self.disc_fusion.forward(g, p, r)?;
            out.d_fusion = Some(d);
            out.d_fusion_logit = Some(z);
        }
        if heads.saliency {
            out.saliency = Some(self.decoder.forward(g, p, o_av, &taps)?);
        }
        Ok(out)
    }

    /// Saliency map for one clip, evaluated without gradient bookkeeping.
    pub fn predict(&self, video: &Tensor<T>, audio: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let v = g.constant(video.clone());
        let a = g.constant(audio.clone());
        let out = self.forward(&mut g, &p, v, a, Heads::SALIENCY)?;
        Ok(g.value(out.saliency.expect("saliency head requested")).clone())
    }

    /// The same network with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> SaliencyModel<U> {
        SaliencyModel {
            config: self.config.clone(),
            params: self.params.cast(),
            visual: self.visual.clone(),
            audio: self.audio.clone(),
            fusion: self.fusion.clone(),
            decoder: self.decoder.clone(),
            disc_audio: self.disc_audio.clone(),
            disc_fusion: self.disc_fusion.clone(),
        }
    }

    /// Parameter id of the final fully-connected layer of a discriminator
    /// as `(weight, bias)`.
    pub fn discriminator_output_layer(&self, kind: DiscriminatorKind) -> (ParamId, ParamId) {
        let d = match kind {
            DiscriminatorKind::Audio => &self.disc_audio,
            DiscriminatorKind::AudioVisual => &self.disc_fusion,
        };
        (d.final_layer().weight, d.final_layer().bias)
    }
}
