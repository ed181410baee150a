//! Synthetic audio-visual clips with a controllable domain shift.
//!
//! Each clip shows one salient Gaussian blob drifting over a textured
//! background, optionally with equally bright distractor blobs. The audio
//! is a tone whose instantaneous frequency tracks the salient blob's
//! horizontal position; with probability `1 - coupling` it tracks a decoy
//! trajectory instead. Ground truth is the frame-averaged Gaussian around
//! the salient blob.

mod codec;
mod io;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::metrics::FixationSet;
use crate::tensor::Tensor;

pub use codec::{decode_tensor, encode_tensor, load_tensor, save_tensor, TENSOR_MAGIC, TENSOR_VERSION};
pub use io::{read_dataset, read_manifest, write_dataset, MANIFEST_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            _ => Err(Error::invalid(format!("unknown domain {s:?}, expected source|target"))),
        }
    }
}

/// Appearance and audio statistics of one domain.
///
/// `pitch` is the tone frequency range in cycles per clip; the left image
/// border maps to `pitch.0` and the right border to `pitch.1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub contrast: f64,
    pub texture: f64,
    pub pitch: (f64, f64),
    pub coupling: f64,
    pub noise: f64,
}

impl DomainSpec {
    pub fn source() -> Self {
        DomainSpec {
            contrast: 0.6,
            texture: 0.15,
            pitch: (24.0, 72.0),
            coupling: 0.9,
            noise: 0.05,
        }
    }

    pub fn target() -> Self {
        DomainSpec {
            contrast: 0.3,
            texture: 0.35,
            pitch: (96.0, 160.0),
            coupling: 0.6,
            noise: 0.1,
        }
    }

    pub fn for_domain(domain: Domain) -> Self {
        match domain {
            Domain::Source => Self::source(),
            Domain::Target => Self::target(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.contrast, self.texture, self.pitch.0, self.pitch.1, self.coupling, self.noise]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("domain spec values must be finite".into()));
        }
        if self.contrast <= 0.0 {
            return Err(Error::Config(format!("contrast must be > 0, got {}", self.contrast)));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::Config(format!("coupling must be in [0,1], got {}", self.coupling)));
        }
        if self.texture < 0.0 || self.noise < 0.0 {
            return Err(Error::Config("texture and noise must be >= 0".into()));
        }
        if !(self.pitch.0 > 0.0 && self.pitch.0 < self.pitch.1) {
            return Err(Error::Config(format!("pitch range must satisfy 0 < lo < hi, got {:?}", self.pitch)));
        }
        Ok(())
    }
}

/// Clip geometry and motion, shared by both domains of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub audio_len: usize,
    /// Blob radius in pixels (Gaussian sigma).
    pub blob_sigma: f64,
    /// Ground-truth Gaussian sigma in pixels.
    pub gt_sigma: f64,
    /// Random-walk step scale in pixels per frame.
    pub speed: f64,
    pub distractors: usize,
    pub fixations: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            frames: 8,
            height: 32,
            width: 32,
            audio_len: 1024,
            blob_sigma: 2.5,
            gt_sigma: 3.0,
            speed: 1.0,
            distractors: 0,
            fixations: 20,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height < 4 || self.width < 4 {
            return Err(Error::Config("clip needs >= 1 frame and >= 4x4 pixels".into()));
        }
        if self.audio_len < 2 * self.frames {
            return Err(Error::Config("audio_len must be >= 2 * frames".into()));
        }
        if !(self.blob_sigma > 0.0 && self.gt_sigma > 0.0 && self.speed >= 0.0) {
            return Err(Error::Config("blob_sigma, gt_sigma must be > 0 and speed >= 0".into()));
        }
        if self.fixations == 0 || self.fixations > self.height * self.width {
            return Err(Error::Config("fixations must be in 1..=H*W".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipSample {
    pub id: String,
    pub domain: Domain,
    pub video: Tensor<f32>,
    pub audio: Tensor<f32>,
    pub gt: Tensor<f32>,
    pub fixations: FixationSet,
    /// Salient blob centre (row, col) per frame.
    pub trajectory: Vec<(f64, f64)>,
    /// Whether the audio tracks the salient blob rather than a decoy.
    pub coupled: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub clips: Vec<ClipSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn manifest(&self) -> String {
        self.clips
            .iter()
            .map(|c| format!("{}\t{}\n", c.id, c.domain))
            .collect()
    }
}

/// Smooth random walk with velocity damping, reflected at a margin.
fn random_walk(rng: &mut ChaCha8Rng, scene: &SceneSpec) -> Vec<(f64, f64)> {
    let margin = 2.0 * scene.blob_sigma;
    let span = |n: usize| (margin.min(n as f64 / 4.0), n as f64 - 1.0 - margin.min(n as f64 / 4.0));
    let (r_lo, r_hi) = span(scene.height);
    let (c_lo, c_hi) = span(scene.width);
    let mut pos = (rng.random_range(r_lo..=r_hi), rng.random_range(c_lo..=c_hi));
    let mut vel = (0.0, 0.0);
    let reflect = |x: f64, v: &mut f64, lo: f64, hi: f64| {
        if x < lo {
            *v = -*v;
            2.0 * lo - x
        } else if x > hi {
            *v = -*v;
            2.0 * hi - x
        } else {
            x
        }
    };
    let mut out = Vec::with_capacity(scene.frames);
    for _ in 0..scene.frames {
        out.push(pos);
        let nr: f64 = StandardNormal.sample(rng);
        let nc: f64 = StandardNormal.sample(rng);
        vel = (0.7 * vel.0 + scene.speed * nr, 0.7 * vel.1 + scene.speed * nc);
        let r = reflect(pos.0 + vel.0, &mut vel.0, r_lo, r_hi).clamp(r_lo, r_hi);
        let c = reflect(pos.1 + vel.1, &mut vel.1, c_lo, c_hi).clamp(c_lo, c_hi);
        pos = (r, c);
    }
    out
}

/// Tone frequency (cycles per clip) for horizontal position `col`.
pub fn pitch_for_column(spec: &DomainSpec, col: f64, width: usize) -> f64 {
    let x = col / (width as f64 - 1.0);
    spec.pitch.0 + (spec.pitch.1 - spec.pitch.0) * x
}

/// Frame index that audio sample `t` belongs to.
pub fn frame_of_sample(t: usize, frames: usize, audio_len: usize) -> usize {
    (t * frames / audio_len).min(frames - 1)
}

fn gaussian(r: f64, c: f64, centre: (f64, f64), sigma: f64) -> f64 {
    let d2 = (r - centre.0).powi(2) + (c - centre.1).powi(2);
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Frame-averaged Gaussian around `trajectory`, normalized to sum 1.
pub fn ground_truth(trajectory: &[(f64, f64)], height: usize, width: usize, sigma: f64) -> Tensor<f32> {
    let mut acc = vec![0.0f64; height * width];
    for &centre in trajectory {
        for r in 0..height {
            for c in 0..width {
                acc[r * width + c] += gaussian(r as f64, c as f64, centre, sigma);
            }
        }
    }
    let total: f64 = acc.iter().sum();
    let data = acc.iter().map(|v| (v / total) as f32).collect();
    Tensor::new(vec![height, width], data).expect("non-empty map")
}

/// Draws `n` pixel indices with replacement, with probability proportional to `map`.
pub fn sample_pixels(map: &Tensor<f32>, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(map.len());
    let mut acc = 0.0f64;
    for &v in map.data() {
        acc += v.max(0.0) as f64;
        cdf.push(acc);
    }
    (0..n)
        .map(|_| {
            let u = rng.random_range(0.0..acc);
            cdf.partition_point(|&x| x <= u).min(map.len() - 1)
        })
        .collect()
}

/// Draws `n` distinct fixations from `gt`.
pub fn sample_fixations(gt: &Tensor<f32>, n: usize, rng: &mut impl Rng) -> Result<FixationSet> {
    let (h, w) = (gt.shape()[0], gt.shape()[1]);
    let support = gt.data().iter().filter(|&&v| v > 0.0).count();
    let n = n.min(support);
    let mut seen = std::collections::BTreeSet::new();
    let mut points = Vec::with_capacity(n);
    while points.len() < n {
        let idx = sample_pixels(gt, 1, rng)[0];
        if seen.insert(idx) {
            points.push((idx / w, idx % w));
        }
    }
    FixationSet::new(points, h, w)
}

fn texture_field(rng: &mut ChaCha8Rng, scene: &SceneSpec) -> Vec<[f64; 3]> {
    // a few random plane waves per channel, fixed over time
    let waves: Vec<[(f64, f64, f64); 4]> = (0..3)
        .map(|_| {
            std::array::from_fn(|_| {
                let angle = rng.random_range(0.0..PI);
                let freq = rng.random_range(0.15..0.6);
                (angle.cos() * freq, angle.sin() * freq, rng.random_range(0.0..2.0 * PI))
            })
        })
        .collect();
    let mut out = Vec::with_capacity(scene.height * scene.width);
    for r in 0..scene.height {
        for c in 0..scene.width {
            out.push(std::array::from_fn(|ch| {
                waves[ch].iter().map(|&(kr, kc, ph)| (kr * r as f64 + kc * c as f64 + ph).sin()).sum::<f64>() / 4.0
            }));
        }
    }
    out
}

/// Generates one clip. A pure function of its arguments.
pub fn generate_clip(spec: &DomainSpec, scene: &SceneSpec, domain: Domain, id: &str, seed: u64) -> Result<ClipSample> {
    spec.validate()?;
    scene.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (f0, h0, w0) = (scene.frames, scene.height, scene.width);

    let trajectory = random_walk(&mut rng, scene);
    let distractors: Vec<_> = (0..scene.distractors).map(|_| random_walk(&mut rng, scene)).collect();
    let coupled = rng.random_bool(spec.coupling);
    let decoy = random_walk(&mut rng, scene);
    let heard = if coupled { &trajectory } else { &decoy };

    let texture = texture_field(&mut rng, scene);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.6..1.0));
    let mut video = vec![0.0f32; 3 * f0 * h0 * w0];
    for f in 0..f0 {
        for r in 0..h0 {
            for c in 0..w0 {
                let (rf, cf) = (r as f64, c as f64);
                let mut blob = gaussian(rf, cf, trajectory[f], scene.blob_sigma);
                for d in &distractors {
                    blob = blob.max(gaussian(rf, cf, d[f], scene.blob_sigma));
                }
                for ch in 0..3 {
                    let bg = 0.35 + spec.texture * texture[r * w0 + c][ch];
                    let n: f64 = StandardNormal.sample(&mut rng);
                    let v = bg + spec.contrast * tint[ch] * blob + spec.noise * n;
                    video[((ch * f0 + f) * h0 + r) * w0 + c] = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
    }

    let mut audio = Vec::with_capacity(scene.audio_len);
    let mut phase = rng.random_range(0.0..2.0 * PI);
    for t in 0..scene.audio_len {
        let f = frame_of_sample(t, f0, scene.audio_len);
        let n: f64 = StandardNormal.sample(&mut rng);
        audio.push((0.8 * phase.sin() + spec.noise * n).clamp(-1.0, 1.0) as f32);
        phase += 2.0 * PI * pitch_for_column(spec, heard[f].1, w0) / scene.audio_len as f64;
    }

    let gt = ground_truth(&trajectory, h0, w0, scene.gt_sigma);
    let fixations = sample_fixations(&gt, scene.fixations, &mut rng)?;
    Ok(ClipSample {
        id: id.to_string(),
        domain,
        video: Tensor::new(vec![3, f0, h0, w0], video)?,
        audio: Tensor::new(vec![1, scene.audio_len], audio)?,
        gt,
        fixations,
        trajectory,
        coupled,
    })
}

/// Generates `n` clips with per-clip seeds derived from `seed`.
pub fn generate_dataset(spec: &DomainSpec, scene: &SceneSpec, domain: Domain, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("dataset needs at least one clip"));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let clips = (0..n)
        .map(|i| {
            let clip_seed = master.next_u64();
            let id = format!("{}-{seed}-{i:04}", domain.as_str());
            generate_clip(spec, scene, domain, &id, clip_seed)
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { clips })
}

#[cfg(test)]
mod tests;
