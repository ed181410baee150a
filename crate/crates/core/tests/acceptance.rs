//! One pass/fail line per acceptance criterion.
//!
//! `AVSAL_ACCEPT=1,7` runs a subset. A failed criterion is reported but only
//! fails the process when `AVSAL_ACCEPT_STRICT=1` is set.

use std::time::Instant;

use avsal_core::data::{decode_tensor, encode_tensor, generate_dataset, Domain, DomainSpec, SceneSpec};
use avsal_core::experiment::{results_table, Experiment};
use avsal_core::gradcheck;
use avsal_core::losses::{domain_loss, domain_source_term, domain_target_term, kl_loss, total_loss, LossWeights};
use avsal_core::metrics::{auc_from_scores, auc_judd, cc, evaluate, nss, sim, FixationSet, ShufflePool};
use avsal_core::model::{decode_checkpoint, encode_checkpoint, FusionMode, Heads, ModelConfig, SaliencyModel, AUDIO_TOKENS};
use avsal_core::train::{fit, DaMode, FitOutputs, TrainConfig};
use avsal_core::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (usize, &'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e(err: avsal_core::Error) -> String {
    err.to_string()
}

fn random_inputs(cfg: &ModelConfig, seed: u64) -> (Tensor<f32>, Tensor<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = Tensor::from_fn(vec![3, cfg.frames, cfg.height, cfg.width], |_| rng.random_range(0.0..1.0));
    let a = Tensor::from_fn(vec![1, cfg.audio_len], |_| rng.random_range(-1.0..1.0));
    (v, a)
}

fn criterion_1() -> Outcome {
    const REQUIRED: [&str; 13] = [
        "add", "mul", "exp", "log", "matmul", "conv1d", "conv3d", "maxpool_temporal", "trilinear_upsample", "softmax", "sigmoid",
        "linear", "kl_loss",
    ];
    let start = Instant::now();
    let results = gradcheck::run(None, 20, 0).map_err(e)?;
    let secs = start.elapsed().as_secs_f64();
    for name in REQUIRED.iter().chain(&["domain_loss"]) {
        check(results.iter().any(|r| r.name == *name), format!("op {name} not covered"))?;
    }
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<_> = results.iter().filter(|r| !r.passed() || r.trials < 20).map(|r| r.name).collect();
    check(failed.is_empty(), format!("failed ops: {failed:?}"))?;
    check(worst <= 1e-4, format!("max rel error {worst:e} > 1e-4"))?;
    check(secs < 60.0, format!("suite took {secs:.1}s >= 60s"))?;
    Ok(format!("{} ops x 20 trials, max rel error {worst:.2e}, {secs:.2}s", results.len()))
}

fn criterion_2() -> Outcome {
    let cfg = ModelConfig::micro();
    let (v, a) = random_inputs(&cfg, 2);
    let mut compared = 0usize;
    for lambda in [1.0, 0.5, 0.125] {
        let mut model = SaliencyModel::<f32>::new(cfg.clone(), 3).map_err(e)?;
        model.set_grl_lambda(lambda).map_err(e)?;
        let pass = |reversal: bool| -> Result<(Vec<f32>, Vec<Vec<f32>>), String> {
            let heads = Heads {
                saliency: false,
                audio_domain: true,
                fusion_domain: true,
                reversal,
            };
            let mut g = Graph::new();
            let p = model.bind(&mut g, true);
            let vv = g.constant(v.clone());
            let av = g.constant(a.clone());
            let out = model.forward(&mut g, &p, vv, av, heads).map_err(e)?;
            let (da, df) = (out.d_audio.unwrap(), out.d_fusion.unwrap());
            let scores = vec![g.value(da).data()[0], g.value(df).data()[0]];
            let la = domain_source_term(&mut g, da).map_err(e)?;
            let lav = domain_target_term(&mut g, df).map_err(e)?;
            let l = g.add(la, lav).map_err(e)?;
            g.backward(l).map_err(e)?;
            Ok((scores, p.grads(&g)))
        };
        let (s_rev, g_rev) = pass(true)?;
        let (s_plain, g_plain) = pass(false)?;
        check(
            s_rev.iter().zip(&s_plain).all(|(x, y)| x.to_bits() == y.to_bits()),
            "forward differs with reversal",
        )?;
        for ((param, gr), gp) in model.params().iter().zip(&g_rev).zip(&g_plain) {
            let feature = SaliencyModel::<f32>::is_feature_param(&param.name);
            for (x, y) in gr.iter().zip(gp) {
                let want = if feature { -(lambda as f32) * y } else { *y };
                check(*x == want, format!("{} at lambda {lambda}: {x} vs {want}", param.name))?;
                compared += 1;
            }
        }
    }
    Ok(format!("{compared} gradient entries bit-exact over lambda in {{1, 0.5, 0.125}}"))
}

fn pairwise_auc(p: &[f64], fixated: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (_, &pi) in p.iter().enumerate().filter(|(i, _)| fixated[*i]) {
        for (_, &pj) in p.iter().enumerate().filter(|(j, _)| !fixated[*j]) {
            pairs += 1.0;
            if pi > pj {
                wins += 1.0;
            } else if pi == pj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn map(t: &Tensor<f64>, f: impl Fn(f64) -> f64) -> Tensor<f64> {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect()).unwrap()
}

fn criterion_3() -> Outcome {
    let mut worst_auc = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ties = seed % 2 == 1;
        let p = Tensor::from_fn(vec![16, 16], |_| {
            if ties {
                rng.random_range(0..5) as f64
            } else {
                rng.random_range(0.0..1.0)
            }
        });
        let n = rng.random_range(1..40);
        let idx = rand::seq::index::sample(&mut rng, 256, n).into_vec();
        let fix = FixationSet::from_indices(idx.iter().copied(), 16, 16).map_err(e)?;
        let mut mask = vec![false; 256];
        for &i in &idx {
            mask[i] = true;
        }
        let diff = (auc_judd(&p, &fix).map_err(e)? - pairwise_auc(p.data(), &mask)).abs();
        worst_auc = worst_auc.max(diff);

        let g = Tensor::from_fn(vec![16, 16], |_| rng.random_range(0.0..1.0));
        let c = cc(&p, &p).map_err(e)?.value;
        check((c - 1.0).abs() < 1e-9, format!("CC(P,P) = {c}"))?;
        let s = sim(&map(&p, |x| x + 0.01), &map(&p, |x| x + 0.01)).map_err(e)?;
        check((s - 1.0).abs() < 1e-9, format!("SIM(P,P) = {s}"))?;

        let (a, b) = (rng.random_range(0.1..5.0), rng.random_range(-3.0..3.0));
        let affine = map(&p, |x| a * x + b);
        let c0 = cc(&p, &g).map_err(e)?.value;
        let c1 = cc(&affine, &g).map_err(e)?.value;
        check((c0 - c1).abs() < 1e-9, format!("CC affine: {c0} vs {c1}"))?;
        let n0 = nss(&p, &fix).map_err(e)?.value;
        let n1 = nss(&affine, &fix).map_err(e)?.value;
        check((n0 - n1).abs() < 1e-9, format!("NSS affine: {n0} vs {n1}"))?;
        let mono = map(&p, |x| (2.0 * x).exp() + x * x * x);
        let a0 = auc_judd(&p, &fix).map_err(e)?;
        let a1 = auc_judd(&mono, &fix).map_err(e)?;
        check((a0 - a1).abs() < 1e-12, format!("AUC monotone: {a0} vs {a1}"))?;
    }
    check(worst_auc <= 1e-9, format!("AUC-Judd deviates from pairwise oracle by {worst_auc:e}"))?;

    let p = Tensor::new(vec![1, 4], vec![0.0f64, 0.0, 10.0, 0.0]).map_err(e)?;
    let fix = FixationSet::new(vec![(0, 2)], 1, 4).map_err(e)?;
    let v = nss(&p, &fix).map_err(e)?.value;
    check((v - 3f64.sqrt()).abs() < 1e-4, format!("NSS hand case {v}"))?;
    check((auc_from_scores(&[1.0], &[0.0, 1.0]) - 0.75).abs() < 1e-15, "tie handling")?;
    Ok(format!("100 cases, AUC-Judd vs pairwise max |diff| {worst_auc:.1e}, NSS hand case {v:.4}"))
}

fn scalar(g: &Graph<f64>, v: avsal_core::Var) -> f64 {
    g.value(v).data()[0]
}

fn criterion_4() -> Outcome {
    let mut g = Graph::<f64>::new();
    let s = g.constant(Tensor::scalar(0.5));
    let t = g.constant(Tensor::scalar(0.5));
    let l = domain_loss(&mut g, s, t).map_err(e)?;
    let dl = scalar(&g, l);
    check((dl - 2.0 * 2f64.ln()).abs() <= 1e-9, format!("domain_loss(0.5,0.5) = {dl}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut min_kl = f64::INFINITY;
    for _ in 0..100 {
        let n = rng.random_range(2..64);
        let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let mut q: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let (sp, sq) = (p.iter().sum::<f64>(), q.iter().sum::<f64>());
        p.iter_mut().for_each(|x| *x /= sp);
        q.iter_mut().for_each(|x| *x /= sq);
        let mut g = Graph::<f64>::new();
        let pv = g.constant(Tensor::new(vec![n], p.clone()).map_err(e)?);
        let k = kl_loss(&mut g, pv, &Tensor::new(vec![n], q).map_err(e)?, 0.0).map_err(e)?;
        let kv = scalar(&g, k);
        check(kv > 0.0, format!("KL(G||P) = {kv} for P != G"))?;
        min_kl = min_kl.min(kv);
        let k0 = kl_loss(&mut g, pv, &Tensor::new(vec![n], p).map_err(e)?, 0.0).map_err(e)?;
        let k0 = scalar(&g, k0);
        check(k0.abs() < 1e-12, format!("KL(P||P) = {k0}"))?;
    }

    let w = LossWeights {
        saliency: 1.5,
        audio: 0.25,
        fusion: 2.0,
    };
    let (ls, la, lav) = (0.375, 1.25, 0.5);
    let mut g = Graph::<f64>::new();
    let (s, a, f) = (g.constant(Tensor::scalar(ls)), g.constant(Tensor::scalar(la)), g.constant(Tensor::scalar(lav)));
    let tv = total_loss(&mut g, s, Some(a), Some(f), &w).map_err(e)?;
    let want = 1.5 * ls + 0.25 * la + 2.0 * lav;
    check(scalar(&g, tv) == want, "total_loss not exactly linear")?;
    check(w.combine(ls, Some(la), Some(lav)) == want, "combine not exactly linear")?;
    Ok(format!("2ln2 exact to {:.0e}, min KL over 100 unequal pairs {min_kl:.2e}, linearity exact", (dl - 2.0 * 2f64.ln()).abs().max(1e-16)))
}

fn criterion_5() -> Outcome {
    let mut n = 0;
    for frames in [8, 16, 32] {
        for side in [32, 64] {
            let cfg = ModelConfig {
                frames,
                height: side,
                width: side,
                ..ModelConfig::micro()
            };
            let model = SaliencyModel::<f32>::new(cfg.clone(), 5).map_err(e)?;
            let (v, a) = random_inputs(&cfg, 6);
            let mut g = Graph::new();
            let p = model.bind(&mut g, false);
            let (vv, av) = (g.constant(v), g.constant(a));
            let out = model.forward(&mut g, &p, vv, av, Heads::SALIENCY).map_err(e)?;
            let vs = g.shape(out.visual.unwrap()).to_vec();
            let want = vec![cfg.channels, frames / 8, side / 32, side / 32];
            check(vs == want, format!("F0={frames} H0=W0={side}: visual {vs:?}, want {want:?}"))?;
            let asz = g.shape(out.audio).to_vec();
            check(asz == vec![cfg.channels, AUDIO_TOKENS] && AUDIO_TOKENS == 3, format!("audio {asz:?}"))?;
            let sal = g.shape(out.saliency.unwrap()).to_vec();
            check(sal == vec![side, side], format!("saliency {sal:?}"))?;
            n += 1;
        }
    }
    Ok(format!("{n} geometries: visual [c, F0/8, H0/32, W0/32], audio [c, 3]"))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let scene = SceneSpec::default();
    let data = generate_dataset(&DomainSpec::source(), &scene, Domain::Source, 4, 6).map_err(e)?;
    let mut model = SaliencyModel::<f32>::new(ModelConfig::small(), 6).map_err(e)?;
    let cfg = TrainConfig {
        lr: 1e-4,
        batch: 4,
        steps: 500,
        seed: 6,
        ..TrainConfig::for_mode(DaMode::None)
    };
    let log = fit(&mut model, &data, None, &cfg, &FitOutputs::default(), |_, _| {}).map_err(e)?;
    let kl = log.rows.last().unwrap().1.saliency;
    let report = evaluate(&model, &data, ShufflePool::WithinDataset, 0).map_err(e)?;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("final mean KL {kl:.4}, CC {:.4}, {secs:.1}s", report.mean.cc);
    check(kl < 0.05, format!("{detail}: KL not below 0.05"))?;
    check(report.mean.cc > 0.9, format!("{detail}: CC not above 0.9"))?;
    check(secs < 300.0, format!("{detail}: over 5 min"))?;
    Ok(detail)
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let exp = Experiment::default();
    let mut rows = Vec::new();
    for seed in 0..5u64 {
        let arms = exp.run_da_ablation(seed).map_err(e)?;
        let ccs: Vec<f64> = arms.iter().map(|a| a.report.mean.cc).collect();
        println!("    seed {seed}: w/o DA {:.4}  DA(audio) {:.4}  DA(audio + fusion) {:.4}", ccs[0], ccs[1], ccs[2]);
        rows.push(ccs);
    }
    let secs = start.elapsed().as_secs_f64();
    let median = |k: usize| {
        let mut v: Vec<f64> = rows.iter().map(|r| r[k]).collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (m_none, m_af) = (median(0), median(2));
    let wins = rows.iter().filter(|r| r[2] >= r[1]).count();
    let detail = format!("median CC w/o DA {m_none:.4}, DA(audio + fusion) {m_af:.4}; a+f >= audio on {wins}/5 seeds; {secs:.0}s");
    check(m_af >= m_none, format!("{detail}: median not improved"))?;
    check(wins >= 3, format!("{detail}: fewer than 3 wins over DA(audio)"))?;
    check(secs < 1800.0, format!("{detail}: over 30 min"))?;
    Ok(detail)
}

fn criterion_8() -> Outcome {
    let tmp = std::env::temp_dir().join(format!("avsal-accept-{}", std::process::id()));
    std::fs::create_dir_all(&tmp).map_err(|x| x.to_string())?;
    let scene = SceneSpec::default();
    let src = generate_dataset(&DomainSpec::source(), &scene, Domain::Source, 3, 8).map_err(e)?;
    let tgt = generate_dataset(&DomainSpec::target(), &scene, Domain::Target, 3, 9).map_err(e)?;
    let cfg = TrainConfig {
        steps: 12,
        batch: 2,
        seed: 8,
        ..TrainConfig::for_mode(DaMode::AudioFusion)
    };
    let mut runs = Vec::new();
    for k in 0..2 {
        let mut model = SaliencyModel::<f32>::new(ModelConfig::small(), 8).map_err(e)?;
        let outputs = FitOutputs {
            checkpoint: Some(tmp.join(format!("m{k}.ckpt"))),
            loss_log: Some(tmp.join(format!("m{k}.loss.csv"))),
        };
        let log = fit(&mut model, &src, Some(&tgt), &cfg, &outputs, |_, _| {}).map_err(e)?;
        let report = evaluate(&model, &tgt, ShufflePool::WithinDataset, 3).map_err(e)?;
        runs.push((log.to_csv(), report.to_csv(), model));
    }
    check(runs[0].0 == runs[1].0, "loss logs differ")?;
    check(runs[0].1 == runs[1].1, "eval CSVs differ")?;
    let read = |n: &str| std::fs::read(tmp.join(n)).map_err(|x| x.to_string());
    check(read("m0.loss.csv")? == read("m1.loss.csv")?, "loss log files differ")?;
    check(read("m0.ckpt")? == read("m1.ckpt")?, "checkpoint files differ")?;

    let model = &runs[0].2;
    let back = decode_checkpoint(&encode_checkpoint(model)).map_err(e)?;
    for clip in &tgt.clips {
        let a = model.predict(&clip.video, &clip.audio).map_err(e)?;
        let b = back.predict(&clip.video, &clip.audio).map_err(e)?;
        check(
            a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()),
            "checkpoint round trip changed predictions",
        )?;
    }
    for clip in &src.clips {
        for t in [&clip.video, &clip.audio, &clip.gt] {
            let d = decode_tensor(&encode_tensor(t)).map_err(e)?;
            check(d.shape() == t.shape(), "codec changed shape")?;
            check(d.data().iter().zip(t.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "codec changed values")?;
        }
    }
    let _ = std::fs::remove_dir_all(&tmp);
    Ok("loss logs, eval CSVs and checkpoint bytes identical across runs; checkpoint and codec round trips bit-exact".into())
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let exp = Experiment {
        steps: 200,
        ..Experiment::default()
    };
    let arms = exp.run_fusion_ablation(0).map_err(e)?;
    let table = results_table(&arms);
    for line in table.lines() {
        println!("    {line}");
    }
    let lines: Vec<&str> = table.lines().collect();
    check(lines.len() == 4, format!("expected header plus 3 rows, got {}", lines.len()))?;
    for col in ["CC", "NSS", "sAUC", "AUC-J", "SIM"] {
        check(lines[0].contains(col), format!("missing column {col}"))?;
    }
    for (line, mode) in lines[1..].iter().zip(FusionMode::ALL) {
        check(line.split_whitespace().next() == Some(mode.label()), format!("row {line:?} is not {}", mode.label()))?;
    }
    for a in &arms {
        let m = a.report.mean;
        check([m.cc, m.nss, m.auc_j, m.sauc, m.sim].iter().all(|v| v.is_finite()), format!("{}: non-finite metric", a.label))?;
    }
    Ok(format!("CM/C/B rows with CC, NSS, sAUC, AUC-J, SIM in {:.0}s", start.elapsed().as_secs_f64()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "gradient checks", criterion_1),
        (2, "gradient reversal contract", criterion_2),
        (3, "metric oracles", criterion_3),
        (4, "loss identities", criterion_4),
        (5, "shape budget", criterion_5),
        (6, "overfit", criterion_6),
        (7, "domain adaptation direction", criterion_7),
        (8, "determinism and serialization", criterion_8),
        (9, "fusion ablation report", criterion_9),
    ];
    let only: Option<Vec<usize>> = std::env::var("AVSAL_ACCEPT")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failures = 0;
    for (n, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        match run() {
            Ok(detail) => println!("criterion {n} ({name}): PASS: {detail}"),
            Err(why) => {
                failures += 1;
                println!("criterion {n} ({name}): FAIL: {why}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criterion/criteria failed");
        if std::env::var("AVSAL_ACCEPT_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
