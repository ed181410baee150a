use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How audio features are merged into the visual stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionMode {
    /// Visual queries attend over audio keys/values, followed by an FC
    /// layer, the visual residual and a residual MLP.
    CrossModal,
    /// Channel concatenation with the time-pooled audio vector, then a
    /// 1×1×1 convolution back to `c` channels.
    Concat,
    /// Low-rank bilinear interaction of pooled visual and audio vectors,
    /// applied to the visual features as a per-channel sigmoid gate.
    Bilinear,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::CrossModal, FusionMode::Concat, FusionMode::Bilinear];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::CrossModal => "cm",
            FusionMode::Concat => "concat",
            FusionMode::Bilinear => "bilinear",
        }
    }

    /// Row label used in fusion comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            FusionMode::CrossModal => "CM",
            FusionMode::Concat => "C",
            FusionMode::Bilinear => "B",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            FusionMode::CrossModal => 0,
            FusionMode::Concat => 1,
            FusionMode::Bilinear => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(FusionMode::CrossModal),
            1 => Ok(FusionMode::Concat),
            2 => Ok(FusionMode::Bilinear),
            _ => Err(Error::Codec(format!("unknown fusion mode code {c}"))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cm" | "cross-modal" => Ok(FusionMode::CrossModal),
            "concat" | "c" => Ok(FusionMode::Concat),
            "bilinear" | "b" => Ok(FusionMode::Bilinear),
            _ => Err(Error::Config(format!("unknown fusion mode {s:?} (expected cm|concat|bilinear)"))),
        }
    }
}

/// Number of stride-4 layers in the audio encoder before the final
/// length-fixing convolution.
pub(crate) const AUDIO_STRIDED_LAYERS: usize = 4;
pub(crate) const AUDIO_KERNEL: usize = 9;
pub(crate) const AUDIO_STRIDE: usize = 4;
/// Temporal length of the audio embedding.
pub const AUDIO_TOKENS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Channel width `c` of the encoder outputs.
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Audio waveform length in samples.
    pub audio_len: usize,
    /// Token width `d` of the fusion module (`d_k = d_v = d`).
    pub fusion_dim: usize,
    pub fusion: FusionMode,
    /// Gradient reversal coefficient of both discriminator branches.
    pub grl_lambda: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 64,
            frames: 16,
            height: 64,
            width: 64,
            audio_len: 1024,
            fusion_dim: 32,
            fusion: FusionMode::CrossModal,
            grl_lambda: 1.0,
        }
    }
}

impl ModelConfig {
    /// Smallest valid geometry, used for full-model gradient checks.
    pub fn micro() -> Self {
        ModelConfig {
            channels: 16,
            frames: 8,
            height: 32,
            width: 32,
            audio_len: 768,
            fusion_dim: 8,
            fusion: FusionMode::CrossModal,
            grl_lambda: 1.0,
        }
    }

    /// Compact geometry used by the bundled experiments.
    pub fn small() -> Self {
        ModelConfig {
            channels: 32,
            frames: 8,
            height: 32,
            width: 32,
            audio_len: 1024,
            fusion_dim: 16,
            fusion: FusionMode::CrossModal,
            grl_lambda: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels < 16 || !self.channels.is_multiple_of(16) {
            return bad(format!("channels must be a positive multiple of 16, got {}", self.channels));
        }
        if self.frames < 8 || !self.frames.is_multiple_of(8) {
            return bad(format!("frames must be a positive multiple of 8, got {}", self.frames));
        }
        for (name, v) in [("height", self.height), ("width", self.width)] {
            if v < 32 || v % 32 != 0 {
                return bad(format!("{name} must be a positive multiple of 32, got {v}"));
            }
        }
        if self.fusion_dim == 0 {
            return bad("fusion_dim must be >= 1".into());
        }
        if !(self.grl_lambda >= 0.0 && self.grl_lambda.is_finite()) {
            return bad(format!("grl_lambda must be >= 0, got {}", self.grl_lambda));
        }
        self.audio_final_kernel().map(|_| ())
    }

    /// Temporal length after the strided audio layers.
    pub(crate) fn audio_strided_len(&self) -> usize {
        (0..AUDIO_STRIDED_LAYERS).fold(self.audio_len, |t, _| t.div_ceil(AUDIO_STRIDE))
    }

    /// Kernel of the last (valid, stride 1) audio conv that brings the
    /// sequence to exactly [`AUDIO_TOKENS`] steps.
    pub(crate) fn audio_final_kernel(&self) -> Result<usize> {
        let t = self.audio_strided_len();
        if t < AUDIO_TOKENS {
            return Err(Error::Config(format!(
                "audio_len {} reduces to {t} steps, fewer than {AUDIO_TOKENS}; need at least {}",
                self.audio_len,
                2 * AUDIO_STRIDE.pow(AUDIO_STRIDED_LAYERS as u32) + 1
            )));
        }
        Ok(t - AUDIO_TOKENS + 1)
    }

    /// `(c, F, H, W)` of the visual encoder output.
    pub fn visual_output_shape(&self) -> [usize; 4] {
        [self.channels, self.frames / 8, self.height / 32, self.width / 32]
    }

    /// Number of visual tokens `T_V = H·W` seen by the fusion module.
    pub fn visual_tokens(&self) -> usize {
        (self.height / 32) * (self.width / 32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::micro().validate().unwrap();
        ModelConfig::small().validate().unwrap();
        assert_eq!(ModelConfig::default().visual_output_shape(), [64, 2, 2, 2]);
    }

    #[test]
    fn full_scale_shape_arithmetic() {
        let cfg = ModelConfig {
            channels: 1024,
            frames: 32,
            height: 224,
            width: 384,
            ..ModelConfig::default()
        };
        assert_eq!(cfg.visual_output_shape(), [1024, 4, 7, 12]);
    }

    #[test]
    fn invalid_geometry_rejected() {
        let base = ModelConfig::default();
        for cfg in [
            ModelConfig { frames: 12, ..base.clone() },
            ModelConfig { height: 48, ..base.clone() },
            ModelConfig { channels: 24, ..base.clone() },
            ModelConfig { audio_len: 300, ..base.clone() },
            ModelConfig { grl_lambda: -1.0, ..base.clone() },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn fusion_mode_parse() {
        for m in FusionMode::ALL {
            assert_eq!(m.as_str().parse::<FusionMode>().unwrap(), m);
            assert_eq!(FusionMode::from_code(m.code()).unwrap(), m);
        }
        assert!("sum".parse::<FusionMode>().is_err());
    }
}
