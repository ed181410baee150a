use super::step::compute_gradients_with;
use super::*;
use crate::data::{generate_dataset, ClipSample, Dataset, Domain, DomainSpec, SceneSpec};
use crate::losses::{LossConfig, LossWeights};
use crate::model::{ModelConfig, ParamSet, SaliencyModel};
use crate::tensor::Tensor;

fn micro_scene() -> SceneSpec {
    let m = ModelConfig::micro();
    SceneSpec {
        frames: m.frames,
        height: m.height,
        width: m.width,
        audio_len: m.audio_len,
        ..SceneSpec::default()
    }
}

fn datasets() -> (Dataset, Dataset) {
    let scene = micro_scene();
    (
        generate_dataset(&DomainSpec::source(), &scene, Domain::Source, 3, 1).unwrap(),
        generate_dataset(&DomainSpec::target(), &scene, Domain::Target, 3, 2).unwrap(),
    )
}

fn refs(d: &Dataset) -> Vec<&ClipSample> {
    d.clips.iter().collect()
}

fn model() -> SaliencyModel<f32> {
    SaliencyModel::new(ModelConfig::micro(), 5).unwrap()
}

fn scalar_params(w: f64) -> ParamSet<f64> {
    let mut ps = ParamSet::new();
    ps.zeros("w".into(), vec![1]);
    ps.iter_mut().next().unwrap().value = Tensor::new(vec![1], vec![w]).unwrap();
    ps
}

fn value(ps: &ParamSet<f64>) -> f64 {
    ps.iter().next().unwrap().value.data()[0]
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut ps = scalar_params(0.7);
    let mut st = AdamState::new(&ps);
    adam_step(&mut ps, &[vec![0.0]], &mut st, 0.1).unwrap();
    assert_eq!(value(&ps), 0.7);
    assert_eq!(st.step, 1);
}

#[test]
fn adam_first_step_is_unit_direction() {
    // f(w) = w²/2, gradient w; after bias correction m̂ = v̂ = 1
    let mut ps = scalar_params(1.0);
    let mut st = AdamState::new(&ps);
    adam_step(&mut ps, &[vec![1.0]], &mut st, 0.1).unwrap();
    assert!((value(&ps) - 0.9).abs() < 1e-7);
}

#[test]
fn adam_matches_scalar_reference() {
    let (mut w_ref, mut m, mut v) = (1.0f64, 0.0, 0.0);
    let mut ps = scalar_params(1.0);
    let mut st = AdamState::new(&ps);
    for t in 1..=200 {
        let g = 2.0 * w_ref;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        w_ref -= 0.1 * mh / (vh.sqrt() + 1e-8);
        let g = 2.0 * value(&ps);
        adam_step(&mut ps, &[vec![g]], &mut st, 0.1).unwrap();
        assert!((value(&ps) - w_ref).abs() < 1e-12, "step {t}");
    }
    assert!(w_ref.abs() < 1e-2, "{w_ref}");
}

#[test]
fn adam_rejects_mismatched_gradients() {
    let mut ps = scalar_params(1.0);
    let mut st = AdamState::new(&ps);
    assert!(adam_step(&mut ps, &[vec![1.0, 2.0]], &mut st, 0.1).is_err());
    assert!(adam_step(&mut ps, &[], &mut st, 0.1).is_err());
}

#[test]
fn mode_defaults() {
    let none = TrainConfig::for_mode(DaMode::None);
    assert_eq!((none.lr, none.batch), (1e-4, 8));
    for da in [DaMode::Audio, DaMode::AudioFusion] {
        let c = TrainConfig::for_mode(da);
        assert_eq!((c.lr, c.batch, c.lambda), (1e-5, 6, 1.0));
    }
    assert_eq!("audio+fusion".parse::<DaMode>().unwrap(), DaMode::AudioFusion);
    assert!("fusion".parse::<DaMode>().is_err());
    assert_eq!(DaMode::ALL.map(DaMode::label), ["w/o DA", "DA(audio)", "DA(audio + fusion)"]);
}

#[test]
fn lambda_ramp_schedule() {
    let mut c = TrainConfig::for_mode(DaMode::Audio);
    c.steps = 10;
    assert_eq!(c.lambda_at(3), 1.0);
    c.lambda_ramp = true;
    assert_eq!(c.lambda_at(0), 0.0);
    assert_eq!(c.lambda_at(2), 0.4);
    assert_eq!(c.lambda_at(5), 1.0);
    assert_eq!(c.lambda_at(9), 1.0);
}

#[test]
fn key_value_config() {
    let kv = parse_key_values("# run\nlr = 3e-4\nsteps=20 # short\n\nclip_norm = 10\n").unwrap();
    let mut c = TrainConfig::for_mode(DaMode::None);
    for (k, v) in &kv {
        c.set(k, v).unwrap();
    }
    assert_eq!((c.lr, c.steps, c.clip_norm), (3e-4, 20, Some(10.0)));
    assert!(parse_key_values("lr 3").is_err());
    assert!(parse_key_values("lr=1\nlr=2").is_err());
    assert!(c.set("momentum", "0.9").is_err());
    assert!(c.set("batch", "-1").is_err());
    c.lr = -1.0;
    assert!(c.validate().is_err());
}

#[test]
fn no_da_breakdown_is_saliency_only() {
    let (src, _) = datasets();
    let (b, _) = compute_gradients(&model(), &refs(&src), None, DaMode::None, &LossConfig::default()).unwrap();
    assert_eq!((b.audio, b.fusion), (None, None));
    assert_eq!(b.total, b.saliency);
}

#[test]
fn da_requires_target_batch() {
    let (src, _) = datasets();
    for da in [DaMode::Audio, DaMode::AudioFusion] {
        assert!(compute_gradients(&model(), &refs(&src), None, da, &LossConfig::default()).is_err());
        assert!(compute_gradients(&model(), &refs(&src), Some(&[]), da, &LossConfig::default()).is_err());
    }
}

#[test]
fn zero_lambda_annihilates_adversarial_gradient() {
    let (src, tgt) = datasets();
    let loss = LossConfig::default();
    let mut m = model();
    let (_, plain) = compute_gradients(&m, &refs(&src), None, DaMode::None, &loss).unwrap();
    let (_, full) = compute_gradients(&m, &refs(&src), Some(&refs(&tgt)), DaMode::AudioFusion, &loss).unwrap();
    m.set_grl_lambda(0.0).unwrap();
    let (_, zero) = compute_gradients(&m, &refs(&src), Some(&refs(&tgt)), DaMode::AudioFusion, &loss).unwrap();
    for (i, p) in m.params().iter().enumerate() {
        if SaliencyModel::<f32>::is_discriminator_param(&p.name) {
            assert_eq!(zero[i], full[i], "{}", p.name);
        } else {
            assert_eq!(zero[i], plain[i], "{}", p.name);
        }
    }
}

#[test]
fn reversal_flips_encoder_gradient_of_domain_terms() {
    let (src, tgt) = datasets();
    let loss = LossConfig {
        weights: LossWeights {
            saliency: 0.0,
            ..LossWeights::default()
        },
        ..LossConfig::default()
    };
    let m = model();
    let run = |rev| compute_gradients_with(&m, &refs(&src), Some(&refs(&tgt)), DaMode::AudioFusion, &loss, rev).unwrap().1;
    let (adv, plain) = (run(true), run(false));
    let mut moved = 0;
    for (i, p) in m.params().iter().enumerate() {
        if SaliencyModel::<f32>::is_feature_param(&p.name) {
            for (a, b) in adv[i].iter().zip(&plain[i]) {
                assert_eq!(*a, -*b, "{}", p.name);
                moved += (*b != 0.0) as usize;
            }
        } else if SaliencyModel::<f32>::is_discriminator_param(&p.name) {
            assert_eq!(adv[i], plain[i], "{}", p.name);
        }
    }
    assert!(moved > 0);

    // a descent step on the reversed gradient raises the domain loss
    let cfg = TrainConfig {
        lr: 1e-3,
        loss,
        ..TrainConfig::for_mode(DaMode::AudioFusion)
    };
    let domain_loss = |m: &SaliencyModel<f32>| {
        compute_gradients_with(m, &refs(&src), Some(&refs(&tgt)), DaMode::AudioFusion, &loss, true).unwrap().0.total
    };
    let before = domain_loss(&m);
    let mut stepped = m.clone();
    let mut state = AdamState::new(stepped.params());
    let mut grads = adv.clone();
    for (i, p) in stepped.params().iter().enumerate() {
        if !SaliencyModel::<f32>::is_feature_param(&p.name) {
            grads[i].fill(0.0);
        }
    }
    adam_step(stepped.params_mut(), &grads, &mut state, cfg.lr).unwrap();
    assert!(domain_loss(&stepped) > before);
}

#[test]
fn fit_is_deterministic_and_conserves_total() {
    let (src, tgt) = datasets();
    let cfg = TrainConfig {
        steps: 3,
        batch: 2,
        seed: 4,
        loss: LossConfig {
            weights: LossWeights {
                saliency: 1.0,
                audio: 0.5,
                fusion: 0.25,
            },
            ..LossConfig::default()
        },
        ..TrainConfig::for_mode(DaMode::AudioFusion)
    };
    let run = || {
        let mut m = model();
        let log = fit(&mut m, &src, Some(&tgt), &cfg, &FitOutputs::default(), |_, _| {}).unwrap();
        (m, log)
    };
    let (m1, l1) = run();
    let (m2, l2) = run();
    assert_eq!(l1.to_csv(), l2.to_csv());
    assert_eq!(m1.params(), m2.params());

    let csv = l1.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(LOSS_LOG_HEADER));
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(f[1] > 0.0 && f[2] > 0.0 && f[3] > 0.0, "{line}");
        assert!((f[4] - (f[1] + 0.5 * f[2] + 0.25 * f[3])).abs() < 1e-6);
    }
}

#[test]
fn target_data_is_ignored_without_da() {
    let (src, tgt) = datasets();
    let cfg = TrainConfig {
        steps: 2,
        batch: 2,
        ..TrainConfig::for_mode(DaMode::None)
    };
    let mut a = model();
    let mut b = model();
    let la = fit(&mut a, &src, None, &cfg, &FitOutputs::default(), |_, _| {}).unwrap();
    let lb = fit(&mut b, &src, Some(&tgt), &cfg, &FitOutputs::default(), |_, _| {}).unwrap();
    assert_eq!(la, lb);
    assert_eq!(crate::model::encode_checkpoint(&a), crate::model::encode_checkpoint(&b));
}

#[test]
fn fit_writes_periodic_checkpoints_and_log() {
    let (src, _) = datasets();
    let dir = tempfile::tempdir().unwrap();
    let outputs = FitOutputs {
        checkpoint: Some(dir.path().join("model.avsm")),
        loss_log: Some(dir.path().join("loss.csv")),
    };
    let cfg = TrainConfig {
        steps: 5,
        batch: 1,
        checkpoint_every: 2,
        ..TrainConfig::for_mode(DaMode::None)
    };
    let mut m = model();
    let mut seen = vec![];
    fit(&mut m, &src, None, &cfg, &outputs, |s, _| seen.push(s)).unwrap();
    assert_eq!(seen, [1, 2, 3, 4, 5]);
    for name in ["model.avsm", "model.avsm.step2", "model.avsm.step4", "loss.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert!(!dir.path().join("model.avsm.step5").exists());
    let loaded = crate::model::load_checkpoint(dir.path().join("model.avsm")).unwrap();
    assert_eq!(loaded.params(), m.params());
    assert_eq!(std::fs::read_to_string(dir.path().join("loss.csv")).unwrap().lines().count(), 6);
}

#[test]
fn gradient_clipping_bounds_the_update() {
    let (src, _) = datasets();
    let (_, grads) = compute_gradients(&model(), &refs(&src), None, DaMode::None, &LossConfig::default()).unwrap();
    let norm = gradient_norm(&grads);
    assert!(norm > 0.0);
    let cfg = TrainConfig {
        clip_norm: Some(norm / 4.0),
        ..TrainConfig::for_mode(DaMode::None)
    };
    let moment_norm = |cfg: &TrainConfig| {
        let mut m = model();
        let mut st = AdamState::new(m.params());
        train_step(&mut m, &mut st, &refs(&src), None, cfg).unwrap();
        st.m.iter().flatten().map(|m| (m / 0.1).powi(2)).sum::<f64>().sqrt()
    };
    let unclipped = moment_norm(&TrainConfig { clip_norm: None, ..cfg.clone() });
    assert!((unclipped - norm).abs() < 1e-3 * norm);
    let clipped = moment_norm(&cfg);
    assert!((clipped - norm / 4.0).abs() < 1e-3 * norm);
}
