use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossConfig;

/// Where domain discriminators are attached.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DaMode {
    None,
    Audio,
    AudioFusion,
}

impl DaMode {
    pub const ALL: [DaMode; 3] = [DaMode::None, DaMode::Audio, DaMode::AudioFusion];

    pub fn as_str(self) -> &'static str {
        match self {
            DaMode::None => "none",
            DaMode::Audio => "audio",
            DaMode::AudioFusion => "audio+fusion",
        }
    }

    /// Row label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            DaMode::None => "w/o DA",
            DaMode::Audio => "DA(audio)",
            DaMode::AudioFusion => "DA(audio + fusion)",
        }
    }

    pub fn uses_audio_domain(self) -> bool {
        self != DaMode::None
    }

    pub fn uses_fusion_domain(self) -> bool {
        self == DaMode::AudioFusion
    }
}

impl fmt::Display for DaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DaMode::None),
            "audio" => Ok(DaMode::Audio),
            "audio+fusion" => Ok(DaMode::AudioFusion),
            _ => Err(Error::invalid(format!("unknown DA mode {s:?}, expected none|audio|audio+fusion"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub da: DaMode,
    pub lr: f64,
    /// Source batch size; the target batch has the same size.
    pub batch: usize,
    pub steps: usize,
    /// Final reversal coefficient.
    pub lambda: f64,
    /// Ramp the reversal coefficient linearly from 0 over the first half of
    /// training instead of holding it constant.
    pub lambda_ramp: bool,
    pub seed: u64,
    pub loss: LossConfig,
    /// Write an intermediate checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    /// Rescale gradients whose global norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    /// Defaults for a mode: lr 1e-4 and batch 8 without adaptation, lr 1e-5
    /// and batch 6 with it.
    pub fn for_mode(da: DaMode) -> Self {
        let (lr, batch) = match da {
            DaMode::None => (1e-4, 8),
            _ => (1e-5, 6),
        };
        TrainConfig {
            da,
            lr,
            batch,
            steps: 500,
            lambda: 1.0,
            lambda_ramp: false,
            seed: 0,
            loss: LossConfig::default(),
            checkpoint_every: 0,
            clip_norm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("clip_norm must be > 0, got {c}")));
            }
        }
        self.loss.validate()
    }

    /// Reversal coefficient in effect at 0-based `step`.
    pub fn lambda_at(&self, step: usize) -> f64 {
        if !self.lambda_ramp {
            return self.lambda;
        }
        let half = (self.steps / 2).max(1) as f64;
        self.lambda * (step as f64 / half).min(1.0)
    }

    fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
        value
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
    }

    /// Sets one field from its key. `da` is rejected here because it also
    /// changes the defaults; pick it with [`TrainConfig::for_mode`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lr" => self.lr = Self::parse(key, value)?,
            "batch" => self.batch = Self::parse(key, value)?,
            "steps" => self.steps = Self::parse(key, value)?,
            "lambda" => self.lambda = Self::parse(key, value)?,
            "lambda_ramp" => self.lambda_ramp = Self::parse(key, value)?,
            "seed" => self.seed = Self::parse(key, value)?,
            "epsilon" => self.loss.epsilon = Self::parse(key, value)?,
            "w_s" => self.loss.weights.saliency = Self::parse(key, value)?,
            "w_a" => self.loss.weights.audio = Self::parse(key, value)?,
            "w_av" => self.loss.weights.fusion = Self::parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = Self::parse(key, value)?,
            "clip_norm" => {
                self.clip_norm = match value.trim() {
                    "none" | "off" => None,
                    v => Some(Self::parse(key, v)?),
                }
            }
            _ => return Err(Error::Config(format!("unknown training key {key:?}"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)`, in a fixed order.
    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        vec![
            ("da", self.da.to_string()),
            ("lr", format!("{:e}", self.lr)),
            ("batch", self.batch.to_string()),
            ("steps", self.steps.to_string()),
            ("lambda", self.lambda.to_string()),
            ("lambda_ramp", self.lambda_ramp.to_string()),
            ("seed", self.seed.to_string()),
            ("epsilon", format!("{:e}", self.loss.epsilon)),
            ("w_s", self.loss.weights.saliency.to_string()),
            ("w_a", self.loss.weights.audio.to_string()),
            ("w_av", self.loss.weights.fusion.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("clip_norm", self.clip_norm.map_or("none".into(), |c| c.to_string())),
        ]
    }
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped;
/// repeated keys are an error.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
        }
    }
    Ok(out)
}
