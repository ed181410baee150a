use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use avsal_core::data::{generate_dataset, read_dataset, write_dataset, Domain, DomainSpec, SceneSpec};
use avsal_core::gradcheck;
use avsal_core::losses::LossConfig;
use avsal_core::metrics::{evaluate, format_table, parse_report_csv, FixationSet, ShufflePool};
use avsal_core::model::{load_checkpoint, FusionMode, ModelConfig, SaliencyModel};
use avsal_core::train::{fit, DaMode, FitOutputs, TrainConfig};

use crate::settings::Settings;
use crate::{EvalArgs, Failure, GenDataArgs, GradcheckArgs, ReportArgs, TrainArgs};

/// `LO:HI` tone range in cycles per clip.
#[derive(Clone, Copy, Debug)]
pub struct PitchRange(pub f64, pub f64);

impl FromStr for PitchRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("bad number {v:?} in pitch range"));
        Ok(PitchRange(num(lo)?, num(hi)?))
    }
}

impl fmt::Display for PitchRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.0, self.1)
    }
}

fn display_path(p: &Path) -> String {
    p.display().to_string()
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

pub fn gen_data(a: GenDataArgs) -> Result<(), Failure> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let out: PathBuf = s.require("out", a.out)?;
    let domain = s.get("domain", a.domain, Domain::Source)?;
    let clips = s.get("clips", a.clips, 8usize)?;
    let seed = s.get("seed", a.seed, 0u64)?;
    let base = DomainSpec::for_domain(domain);
    let pitch = s.get("pitch", a.pitch, PitchRange(base.pitch.0, base.pitch.1))?;
    let spec = DomainSpec {
        contrast: s.get("contrast", a.contrast, base.contrast)?,
        texture: s.get("texture", a.texture, base.texture)?,
        pitch: (pitch.0, pitch.1),
        coupling: s.get("coupling", a.coupling, base.coupling)?,
        noise: s.get("noise", a.noise, base.noise)?,
    };
    let d = SceneSpec::default();
    let scene = SceneSpec {
        frames: s.get("frames", a.frames, d.frames)?,
        height: s.get("height", a.height, d.height)?,
        width: s.get("width", a.width, d.width)?,
        audio_len: s.get("audio_len", a.audio_len, d.audio_len)?,
        blob_sigma: s.get("blob_sigma", None, d.blob_sigma)?,
        gt_sigma: s.get("gt_sigma", None, d.gt_sigma)?,
        speed: s.get("speed", None, d.speed)?,
        distractors: s.get("distractors", a.distractors, d.distractors)?,
        fixations: s.get("fixations", a.fixations, d.fixations)?,
    };
    s.finish("gen-data")?;
    if clips == 0 {
        return Err(Failure::Usage("--clips must be >= 1".into()));
    }
    spec.validate()?;
    scene.validate()?;
    s.echo("gen-data");

    let data = generate_dataset(&spec, &scene, domain, clips, seed)?;
    write_dataset(&out, &data)?;
    println!("wrote {} {domain} clips to {}", data.len(), display_path(&out));
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let source_dir: PathBuf = s.require("source", a.source)?;
    let target_dir: Option<PathBuf> = s.optional("target", a.target)?;
    let da = s.get("da", a.da, DaMode::None)?;
    let fusion = s.get("fusion", a.fusion, FusionMode::CrossModal)?;
    let out: PathBuf = s.require("out", a.out)?;
    let defaults = TrainConfig::for_mode(da);
    let loss_defaults = LossConfig::default();
    let cfg = TrainConfig {
        da,
        lr: s.get("lr", a.lr, defaults.lr)?,
        batch: s.get("batch", a.batch, defaults.batch)?,
        steps: s.get("steps", a.steps, defaults.steps)?,
        lambda: s.get("lambda", a.lambda, defaults.lambda)?,
        lambda_ramp: s.get("lambda_ramp", a.lambda_ramp, defaults.lambda_ramp)?,
        seed: s.get("seed", a.seed, defaults.seed)?,
        loss: LossConfig {
            epsilon: s.get("epsilon", a.epsilon, loss_defaults.epsilon)?,
            weights: avsal_core::losses::LossWeights {
                saliency: s.get("w_s", a.w_s, loss_defaults.weights.saliency)?,
                audio: s.get("w_a", a.w_a, loss_defaults.weights.audio)?,
                fusion: s.get("w_av", a.w_av, loss_defaults.weights.fusion)?,
            },
        },
        checkpoint_every: s.get("checkpoint_every", a.checkpoint_every, defaults.checkpoint_every)?,
        clip_norm: s.optional("clip_norm", a.clip_norm)?,
    };
    let mut default_log = out.clone().into_os_string();
    default_log.push(".loss.csv");
    let loss_log: PathBuf = s.get("loss_log", a.loss_log, PathBuf::from(default_log))?;
    let small = ModelConfig::small();
    let channels = s.get("channels", a.channels, small.channels)?;
    let fusion_dim = s.get("fusion_dim", a.fusion_dim, small.fusion_dim)?;
    s.finish("train")?;
    if da != DaMode::None && target_dir.is_none() {
        return Err(Failure::Usage(format!("--da {da} needs --target")));
    }
    cfg.validate()?;

    let source = read_dataset(&source_dir)?;
    let target = match (da, &target_dir) {
        (DaMode::None, _) | (_, None) => None,
        (_, Some(dir)) => Some(read_dataset(dir)?),
    };
    let first = &source.clips[0];
    let (vs, as_) = (first.video.shape(), first.audio.shape());
    let model_cfg = ModelConfig {
        channels,
        frames: vs[1],
        height: vs[2],
        width: vs[3],
        audio_len: as_[1],
        fusion_dim,
        fusion,
        grl_lambda: cfg.lambda,
    };
    model_cfg.validate()?;
    s.derived("frames", model_cfg.frames);
    s.derived("height", model_cfg.height);
    s.derived("width", model_cfg.width);
    s.derived("audio_len", model_cfg.audio_len);
    s.echo("train");

    let mut model = SaliencyModel::<f32>::new(model_cfg, cfg.seed)?;
    let outputs = FitOutputs {
        checkpoint: Some(out.clone()),
        loss_log: Some(loss_log.clone()),
    };
    let every = (cfg.steps / 10).max(1);
    let started = Instant::now();
    fit(&mut model, &source, target.as_ref(), &cfg, &outputs, |step, l| {
        if step % every == 0 || step == cfg.steps {
            let mut line = format!("step {step:>6}  total {:.5}  kl {:.5}", l.total, l.saliency);
            if let Some(v) = l.audio {
                line.push_str(&format!("  l_a {v:.5}"));
            }
            if let Some(v) = l.fusion {
                line.push_str(&format!("  l_av {v:.5}"));
            }
            println!("{line}");
        }
    })?;
    println!(
        "trained {} steps in {:.1}s; checkpoint {}, loss log {}",
        cfg.steps,
        started.elapsed().as_secs_f64(),
        display_path(&out),
        display_path(&loss_log)
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let ckpt: PathBuf = s.require("ckpt", a.ckpt)?;
    let data_dir: PathBuf = s.require("data", a.data)?;
    let report: PathBuf = s.require("report", a.report)?;
    let pool = s.get("sauc_pool", a.sauc_pool, "self".to_string())?;
    let seed = s.get("seed", a.seed, 0u64)?;
    let stem = ckpt.file_stem().map_or_else(|| "model".into(), |x| x.to_string_lossy().into_owned());
    let label = s.get("label", a.label, stem)?;
    s.finish("eval")?;
    s.echo("eval");

    let model = load_checkpoint(&ckpt)?;
    let data = read_dataset(&data_dir)?;
    let external: Vec<FixationSet>;
    let pool = if pool == "self" {
        ShufflePool::WithinDataset
    } else {
        external = read_dataset(&pool)?.clips.into_iter().map(|c| c.fixations).collect();
        ShufflePool::External(&external)
    };
    let result = evaluate(&model, &data, pool, seed)?;
    write_file(&report, &result.to_csv())?;
    print!("{}", result.summary_table(&label));
    if result.degenerate_count() > 0 {
        println!("{} clip(s) had a degenerate metric", result.degenerate_count());
    }
    Ok(())
}

/// Table label for a report file: known mode names map to their table labels.
fn infer_label(path: &Path) -> String {
    let stem = path.file_stem().map_or_else(String::new, |x| x.to_string_lossy().into_owned());
    if let Ok(da) = stem.parse::<DaMode>() {
        return da.label().to_string();
    }
    if let Ok(f) = stem.parse::<FusionMode>() {
        return f.label().to_string();
    }
    stem
}

pub fn report(a: ReportArgs) -> Result<(), Failure> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let out: PathBuf = s.require("out", a.out)?;
    let labels: Option<String> = s.optional("labels", a.labels)?;
    let runs = if a.runs.is_empty() {
        let joined: String = s.require("runs", None)?;
        joined.split(',').map(|r| PathBuf::from(r.trim())).collect()
    } else {
        s.derived("runs", a.runs.iter().map(|p| display_path(p)).collect::<Vec<_>>().join(","));
        a.runs
    };
    s.finish("report")?;
    let labels: Vec<String> = match labels {
        Some(l) => l.split(',').map(|x| x.trim().to_string()).collect(),
        None => runs.iter().map(|p| infer_label(p)).collect(),
    };
    if labels.len() != runs.len() {
        return Err(Failure::Usage(format!("{} labels given for {} runs", labels.len(), runs.len())));
    }
    s.echo("report");

    let mut header: Option<(String, &Path)> = None;
    let mut rows = Vec::with_capacity(runs.len());
    for (run, label) in runs.iter().zip(labels) {
        let text = std::fs::read_to_string(run).map_err(|e| Failure::Runtime(format!("{}: {e}", run.display())))?;
        let first = text.lines().next().unwrap_or("").trim().to_string();
        match &header {
            None => header = Some((first, run)),
            Some((h, p)) if *h != first => {
                return Err(Failure::Usage(format!(
                    "{} has columns {first:?}, but {} has {h:?}",
                    run.display(),
                    p.display()
                )))
            }
            Some(_) => {}
        }
        let report = parse_report_csv(&text).map_err(|e| Failure::Usage(format!("{}: {e}", run.display())))?;
        rows.push((label, report.mean));
    }
    let table = format_table(&rows);
    write_file(&out, &table)?;
    print!("{table}");
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let ops = s.get("ops", a.ops, "all".to_string())?;
    let trials = s.get("trials", a.trials, 20usize)?;
    let seed = s.get("seed", a.seed, 0u64)?;
    s.finish("gradcheck")?;
    if trials == 0 {
        return Err(Failure::Usage("--trials must be >= 1".into()));
    }
    let only = (ops != "all").then_some(ops.as_str());
    if let Some(name) = only {
        let known = gradcheck::ops().iter().any(|o| o.name == name) || name == gradcheck::perturbed_fixture().name;
        if !known {
            let names: Vec<_> = gradcheck::ops().iter().map(|o| o.name).collect();
            return Err(Failure::Usage(format!("unknown op {name:?}; known: {}", names.join(", "))));
        }
    }
    s.echo("gradcheck");

    let results = gradcheck::run(only, trials, seed)?;
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &results {
        println!(
            "{:<width$}  max_rel_err {:.3e}  {}",
            r.name,
            r.max_rel_error,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    if failed.is_empty() {
        println!("{} op(s) within tolerance {:e}", results.len(), gradcheck::TOLERANCE);
        Ok(())
    } else {
        Err(Failure::Runtime(format!("gradient check failed for: {}", failed.join(", "))))
    }
}
