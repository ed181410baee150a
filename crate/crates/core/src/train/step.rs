use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::config::{DaMode, TrainConfig};
use crate::autodiff::{Graph, Var};
use crate::data::{ClipSample, Dataset};
use crate::error::{Error, Result};
use crate::losses::{domain_source_term_logit, domain_target_term_logit, kl_loss, total_loss, LossConfig};
use crate::model::{save_checkpoint, write_atomic, Heads, SaliencyModel};

pub const LOSS_LOG_HEADER: &str = "step,l_s,l_a,l_av,total";

/// Batch-mean loss terms of one step. Terms switched off by the DA mode
/// are `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub saliency: f64,
    pub audio: Option<f64>,
    pub fusion: Option<f64>,
    pub total: f64,
}

fn mean(g: &mut Graph<f32>, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    g.scale(acc, 1.0 / terms.len() as f32)
}

fn scalar(g: &Graph<f32>, v: Var) -> f64 {
    g.value(v).data()[0] as f64
}

/// Loss terms and parameter gradients for one source batch and, in DA
/// modes, one target batch, from a single backward pass.
pub fn compute_gradients(
    model: &SaliencyModel<f32>,
    source: &[&ClipSample],
    target: Option<&[&ClipSample]>,
    da: DaMode,
    loss: &LossConfig,
) -> Result<(LossBreakdown, Vec<Vec<f32>>)> {
    compute_gradients_with(model, source, target, da, loss, true)
}

pub(crate) fn compute_gradients_with(
    model: &SaliencyModel<f32>,
    source: &[&ClipSample],
    target: Option<&[&ClipSample]>,
    da: DaMode,
    loss: &LossConfig,
    reversal: bool,
) -> Result<(LossBreakdown, Vec<Vec<f32>>)> {
    if source.is_empty() {
        return Err(Error::invalid("empty source batch"));
    }
    let target = match (da, target) {
        (DaMode::None, _) => &[][..],
        (_, Some(t)) if !t.is_empty() => t,
        _ => return Err(Error::invalid(format!("DA mode {da} needs a target batch"))),
    };

    let mut g = Graph::new();
    let p = model.bind(&mut g, true);
    let heads = |saliency| Heads {
        saliency,
        audio_domain: da.uses_audio_domain(),
        fusion_domain: da.uses_fusion_domain(),
        reversal,
    };
    let (mut kl, mut a_src, mut a_tgt, mut av_src, mut av_tgt) = (vec![], vec![], vec![], vec![], vec![]);
    for (clips, is_source) in [(source, true), (target, false)] {
        for clip in clips {
            let v = g.constant(clip.video.clone());
            let a = g.constant(clip.audio.clone());
            let out = model.forward(&mut g, &p, v, a, heads(is_source))?;
            if let Some(s) = out.saliency {
                kl.push(kl_loss(&mut g, s, &clip.gt, loss.epsilon)?);
            }
            let term = if is_source { domain_source_term_logit } else { domain_target_term_logit };
            if let Some(d) = out.d_audio_logit {
                let t = term(&mut g, d)?;
                if is_source { a_src.push(t) } else { a_tgt.push(t) }
            }
            if let Some(d) = out.d_fusion_logit {
                let t = term(&mut g, d)?;
                if is_source { av_src.push(t) } else { av_tgt.push(t) }
            }
        }
    }

    let l_s = mean(&mut g, &kl)?;
    let mut pair = |s: &[Var], t: &[Var]| -> Result<Option<Var>> {
        if s.is_empty() {
            return Ok(None);
        }
        let (ms, mt) = (mean(&mut g, s)?, mean(&mut g, t)?);
        Ok(Some(g.add(ms, mt)?))
    };
    let l_a = pair(&a_src, &a_tgt)?;
    let l_av = pair(&av_src, &av_tgt)?;
    let total = total_loss(&mut g, l_s, l_a, l_av, &loss.weights)?;
    g.backward(total)?;

    let saliency = scalar(&g, l_s);
    let audio = l_a.map(|v| scalar(&g, v));
    let fusion = l_av.map(|v| scalar(&g, v));
    let breakdown = LossBreakdown {
        saliency,
        audio,
        fusion,
        total: loss.weights.combine(saliency, audio, fusion),
    };
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite { op: "train_step" });
    }
    Ok((breakdown, p.grads(&g)))
}

/// Global L2 norm over all gradient buffers.
pub fn gradient_norm(grads: &[Vec<f32>]) -> f64 {
    grads
        .iter()
        .flatten()
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt()
}

/// Computes gradients, optionally clips them, and applies one Adam update.
pub fn train_step(
    model: &mut SaliencyModel<f32>,
    state: &mut AdamState,
    source: &[&ClipSample],
    target: Option<&[&ClipSample]>,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let (breakdown, mut grads) = compute_gradients(model, source, target, cfg.da, &cfg.loss)?;
    if let Some(max) = cfg.clip_norm {
        let norm = gradient_norm(&grads);
        if norm > max {
            let s = (max / norm) as f32;
            grads.iter_mut().flatten().for_each(|v| *v *= s);
        }
    }
    adam_step(model.params_mut(), &grads, state, cfg.lr)?;
    Ok(breakdown)
}

/// Endless sequence of shuffled epochs over `n` indices.
struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    fn new(n: usize, seed: u64) -> Self {
        BatchStream {
            order: (0..n).collect(),
            pos: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn next(&mut self, k: usize) -> Vec<usize> {
        (0..k)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    pub rows: Vec<(usize, LossBreakdown)>,
}

impl LossLog {
    /// CSV with dropped terms written as 0. Values use the shortest
    /// representation that parses back to the same f64.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{LOSS_LOG_HEADER}\n");
        for (step, b) in &self.rows {
            writeln!(
                out,
                "{step},{:?},{:?},{:?},{:?}",
                b.saliency,
                b.audio.unwrap_or(0.0),
                b.fusion.unwrap_or(0.0),
                b.total
            )
            .unwrap();
        }
        out
    }
}

/// Optional files written by [`fit`].
#[derive(Clone, Debug, Default)]
pub struct FitOutputs {
    /// Final checkpoint; intermediate ones go to `<path>.step<N>`.
    pub checkpoint: Option<PathBuf>,
    pub loss_log: Option<PathBuf>,
}

fn periodic_path(base: &std::path::Path, step: usize) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(format!(".step{step}"));
    PathBuf::from(s)
}

/// Runs `cfg.steps` training steps with seeded batch shuffling. `on_step`
/// sees every step's losses (1-based step numbers).
pub fn fit(
    model: &mut SaliencyModel<f32>,
    source: &Dataset,
    target: Option<&Dataset>,
    cfg: &TrainConfig,
    outputs: &FitOutputs,
    mut on_step: impl FnMut(usize, &LossBreakdown),
) -> Result<LossLog> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::invalid("empty source dataset"));
    }
    let target = match (cfg.da, target) {
        (DaMode::None, _) => None,
        (_, Some(t)) if !t.is_empty() => Some(t),
        _ => return Err(Error::invalid(format!("DA mode {} needs a target dataset", cfg.da))),
    };
    let mut state = AdamState::new(model.params());
    let mut src_stream = BatchStream::new(source.len(), cfg.seed);
    let mut tgt_stream = target.map(|t| BatchStream::new(t.len(), cfg.seed ^ 0x5EED_7A61));
    let mut log = LossLog::default();
    for step in 0..cfg.steps {
        model.set_grl_lambda(cfg.lambda_at(step))?;
        let src: Vec<&ClipSample> = src_stream.next(cfg.batch).into_iter().map(|i| &source.clips[i]).collect();
        let tgt: Option<Vec<&ClipSample>> = match (&mut tgt_stream, target) {
            (Some(s), Some(t)) => Some(s.next(cfg.batch).into_iter().map(|i| &t.clips[i]).collect()),
            _ => None,
        };
        let b = train_step(model, &mut state, &src, tgt.as_deref(), cfg)?;
        log.rows.push((step + 1, b));
        on_step(step + 1, &b);
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps {
            if let Some(path) = &outputs.checkpoint {
                save_checkpoint(model, periodic_path(path, step + 1))?;
            }
            if let Some(path) = &outputs.loss_log {
                write_atomic(path, log.to_csv().as_bytes())?;
            }
        }
    }
    if let Some(path) = &outputs.checkpoint {
        save_checkpoint(model, path)?;
    }
    if let Some(path) = &outputs.loss_log {
        write_atomic(path, log.to_csv().as_bytes())?;
    }
    Ok(log)
}
