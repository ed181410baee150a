//! Central finite-difference checks of every differentiable primitive.
//!
//! Each trial draws random inputs, contracts the op output with a random
//! tensor `R` and compares `∂ Σ op(x)⊙R / ∂x` from backward against
//! `(f(x+h) − f(x−h)) / 2h` in f64. The error of one coordinate is
//! `|a − n| / max(|a|, |n|, REL_FLOOR)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Padding, Var};
use crate::error::{Error, Result};
use crate::model::{Heads, ModelConfig, SaliencyModel};
use crate::losses::{domain_loss, domain_source_term_logit, domain_target_term_logit, kl_loss};
use crate::tensor::Tensor;

pub const TOLERANCE: f64 = 1e-4;
pub const REL_FLOOR: f64 = 1e-3;
const STEP: f64 = 1e-6;

pub type Build = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;
pub type Inputs = fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>;

#[derive(Clone, Copy)]
pub struct OpSpec {
    pub name: &'static str,
    pub inputs: Inputs,
    pub build: Build,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpResult {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
}

impl OpResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero, for ops with a kink at 0.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn dims(rng: &mut ChaCha8Rng, n: usize, lo: usize, hi: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(lo..=hi)).collect()
}

fn pair(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let s = dims(rng, 2, 1, 4);
    vec![uniform(rng, &s, -1.0, 1.0), uniform(rng, &s, -1.0, 1.0)]
}

fn single(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let s = dims(rng, 2, 1, 5);
    vec![uniform(rng, &s, -2.0, 2.0)]
}

fn conv3d_case(g: &mut Graph<f64>, v: &[Var], stride: [usize; 3], padding: Padding) -> Result<Var> {
    g.conv3d(v[0], v[1], stride, padding)
}

fn conv3d_inputs(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let (c, co) = (rng.random_range(1..=2), rng.random_range(1..=3));
    let k: Vec<usize> = (0..3).map(|_| rng.random_range(1..=3)).collect();
    let x = dims(rng, 3, 3, 5);
    vec![
        uniform(rng, &[c, x[0], x[1], x[2]], -1.0, 1.0),
        uniform(rng, &[co, c, k[0], k[1], k[2]], -1.0, 1.0),
    ]
}

/// The registry checked by [`run`].
pub fn ops() -> Vec<OpSpec> {
    vec![
        OpSpec { name: "add", inputs: pair, build: |g, v| g.add(v[0], v[1]) },
        OpSpec { name: "sub", inputs: pair, build: |g, v| g.sub(v[0], v[1]) },
        OpSpec { name: "mul", inputs: pair, build: |g, v| g.mul(v[0], v[1]) },
        OpSpec {
            name: "div",
            inputs: |r| {
                let s = dims(r, 2, 1, 4);
                vec![uniform(r, &s, -1.0, 1.0), uniform(r, &s, 0.5, 2.0)]
            },
            build: |g, v| g.div(v[0], v[1]),
        },
        OpSpec { name: "scale", inputs: single, build: |g, v| g.scale(v[0], -1.7) },
        OpSpec { name: "add_scalar", inputs: single, build: |g, v| g.add_scalar(v[0], 0.3) },
        OpSpec {
            name: "log",
            inputs: |r| {
                let s = dims(r, 2, 1, 5);
                vec![uniform(r, &s, 0.1, 3.0)]
            },
            build: |g, v| g.log(v[0]),
        },
        OpSpec { name: "exp", inputs: single, build: |g, v| g.exp(v[0]) },
        OpSpec {
            name: "relu",
            inputs: |r| {
                let s = dims(r, 2, 1, 5);
                vec![off_zero(r, &s)]
            },
            build: |g, v| g.relu(v[0]),
        },
        OpSpec { name: "sigmoid", inputs: single, build: |g, v| g.sigmoid(v[0]) },
        OpSpec {
            name: "log_sigmoid",
            inputs: |r| {
                let s = dims(r, 2, 1, 5);
                vec![uniform(r, &s, -20.0, 20.0)]
            },
            build: |g, v| g.log_sigmoid(v[0]),
        },
        OpSpec {
            name: "clamp",
            inputs: |r| {
                // keep every value away from the bounds ±0.5
                let s = dims(r, 2, 1, 5);
                vec![Tensor::from_fn(s, |_| {
                    let v: f64 = r.random_range(0.05..0.45);
                    match r.random_range(0..3) {
                        0 => v,
                        1 => -v,
                        _ => v.signum() * (0.55 + v),
                    }
                })]
            },
            build: |g, v| g.clamp(v[0], -0.5, 0.5),
        },
        OpSpec {
            name: "matmul",
            inputs: |r| {
                let d = dims(r, 3, 1, 5);
                vec![uniform(r, &[d[0], d[1]], -1.0, 1.0), uniform(r, &[d[1], d[2]], -1.0, 1.0)]
            },
            build: |g, v| g.matmul(v[0], v[1]),
        },
        OpSpec {
            name: "linear",
            inputs: |r| {
                let d = dims(r, 3, 1, 5);
                vec![
                    uniform(r, &[d[0], d[1]], -1.0, 1.0),
                    uniform(r, &[d[1], d[2]], -1.0, 1.0),
                    uniform(r, &[d[2]], -1.0, 1.0),
                ]
            },
            build: |g, v| g.linear(v[0], v[1], v[2]),
        },
        OpSpec {
            name: "softmax",
            inputs: |r| {
                let s = dims(r, 2, 1, 6);
                vec![uniform(r, &s, -3.0, 3.0)]
            },
            build: |g, v| g.softmax(v[0]),
        },
        OpSpec {
            name: "conv1d",
            inputs: |r| {
                let (c, co, k, t) = (r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=5), r.random_range(5..=12));
                vec![uniform(r, &[c, t], -1.0, 1.0), uniform(r, &[co, c, k], -1.0, 1.0)]
            },
            build: |g, v| g.conv1d(v[0], v[1], 2, Padding::Same),
        },
        OpSpec {
            name: "conv1d_valid",
            inputs: |r| {
                let (c, co, k) = (r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=4));
                let t = r.random_range(k..=10);
                vec![uniform(r, &[c, t], -1.0, 1.0), uniform(r, &[co, c, k], -1.0, 1.0)]
            },
            build: |g, v| g.conv1d(v[0], v[1], 1, Padding::Valid),
        },
        OpSpec { name: "conv3d", inputs: conv3d_inputs, build: |g, v| conv3d_case(g, v, [1, 2, 2], Padding::Same) },
        OpSpec { name: "conv3d_strided", inputs: conv3d_inputs, build: |g, v| conv3d_case(g, v, [2, 2, 2], Padding::Same) },
        OpSpec { name: "conv3d_valid", inputs: conv3d_inputs, build: |g, v| conv3d_case(g, v, [1, 1, 1], Padding::Valid) },
        OpSpec {
            name: "bias_add",
            inputs: |r| {
                let d = dims(r, 3, 1, 4);
                vec![uniform(r, &d, -1.0, 1.0), uniform(r, &d[..1], -1.0, 1.0)]
            },
            build: |g, v| g.bias_add(v[0], v[1]),
        },
        OpSpec {
            name: "maxpool_temporal",
            inputs: |r| {
                // a random permutation of well-separated levels, so no near ties
                let d = dims(r, 4, 1, 4);
                let n: usize = d.iter().product();
                let mut levels: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
                rand::seq::SliceRandom::shuffle(levels.as_mut_slice(), r);
                vec![Tensor::new(d, levels).unwrap()]
            },
            build: |g, v| g.maxpool_temporal(v[0]),
        },
        OpSpec {
            name: "trilinear_upsample",
            inputs: |r| {
                let d = dims(r, 4, 1, 3);
                vec![uniform(r, &d, -1.0, 1.0)]
            },
            build: |g, v| {
                let s = g.shape(v[0]).to_vec();
                g.trilinear_upsample(v[0], [s[1] * 2, s[2] + 1, s[3] * 3])
            },
        },
        OpSpec { name: "transpose", inputs: single, build: |g, v| g.transpose(v[0]) },
        OpSpec {
            name: "reshape",
            inputs: single,
            build: |g, v| {
                let n = g.value(v[0]).len();
                g.reshape(v[0], &[1, n])
            },
        },
        OpSpec {
            name: "concat",
            inputs: |r| {
                let (a, b, w) = (r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=3));
                vec![uniform(r, &[w, a], -1.0, 1.0), uniform(r, &[w, b], -1.0, 1.0)]
            },
            build: |g, v| g.concat(&[v[0], v[1]], 1),
        },
        OpSpec {
            name: "broadcast_to",
            inputs: |r| {
                let c = r.random_range(1..=4);
                vec![uniform(r, &[c, 1, 1], -1.0, 1.0)]
            },
            build: |g, v| {
                let c = g.shape(v[0])[0];
                g.broadcast_to(v[0], &[c, 3, 2])
            },
        },
        OpSpec {
            name: "global_avg_pool",
            inputs: |r| {
                let d = dims(r, 3, 1, 4);
                vec![uniform(r, &d, -1.0, 1.0)]
            },
            build: |g, v| g.global_avg_pool(v[0]),
        },
        OpSpec { name: "sum", inputs: single, build: |g, v| g.sum(v[0]) },
        OpSpec { name: "mean", inputs: single, build: |g, v| g.mean(v[0]) },
        OpSpec {
            name: "attention",
            inputs: |r| {
                let (n, m, d) = (r.random_range(1..=4), r.random_range(1..=3), r.random_range(1..=3));
                vec![
                    uniform(r, &[n, d], -1.0, 1.0),
                    uniform(r, &[m, d], -1.0, 1.0),
                    uniform(r, &[d, d], -1.0, 1.0),
                    uniform(r, &[d, d], -1.0, 1.0),
                    uniform(r, &[d, d], -1.0, 1.0),
                ]
            },
            build: |g, v| {
                let d = g.shape(v[0])[1];
                let q = g.matmul(v[0], v[2])?;
                let k = g.matmul(v[1], v[3])?;
                let val = g.matmul(v[1], v[4])?;
                let kt = g.transpose(k)?;
                let s = g.matmul(q, kt)?;
                let s = g.scale(s, 1.0 / (d as f64).sqrt())?;
                let w = g.softmax(s)?;
                g.matmul(w, val)
            },
        },
        OpSpec {
            name: "kl_loss",
            inputs: |r| {
                let s = dims(r, 2, 2, 5);
                vec![uniform(r, &s, 0.05, 0.95)]
            },
            build: |g, v| {
                // fixed ground truth with one zero cell, normalized
                let shape = g.shape(v[0]).to_vec();
                let raw = Tensor::from_fn(shape, |i| if i == 1 { 0.0 } else { 1.5 + (i as f64 * 1.3).sin() });
                let total = raw.sum();
                let gt = Tensor::from_fn(raw.shape().to_vec(), |i| raw.data()[i] / total);
                kl_loss(g, v[0], &gt, 1e-7)
            },
        },
        OpSpec {
            name: "domain_loss",
            inputs: |r| vec![uniform(r, &[1], 0.05, 0.95), uniform(r, &[1], 0.05, 0.95)],
            build: |g, v| domain_loss(g, v[0], v[1]),
        },
        OpSpec {
            name: "domain_loss_logit",
            inputs: |r| vec![uniform(r, &[1], -8.0, 8.0), uniform(r, &[1], -8.0, 8.0)],
            build: |g, v| {
                let s = domain_source_term_logit(g, v[0])?;
                let t = domain_target_term_logit(g, v[1])?;
                g.add(s, t)
            },
        },
    ]
}

/// A deliberately wrong backward (`d/dx x² = 2.02·x`), used to show the
/// harness catches a broken gradient. Not part of [`ops`].
pub fn perturbed_fixture() -> OpSpec {
    OpSpec {
        name: "fixture.perturbed",
        inputs: single,
        build: |g, v| {
            let x = g.value(v[0]).clone();
            let out = Tensor::from_fn(x.shape().to_vec(), |i| x.data()[i] * x.data()[i]);
            g.custom(
                "perturbed_square",
                &[v[0]],
                out,
                Box::new(|inputs, _, gout| vec![gout.iter().zip(inputs[0].data()).map(|(g, x)| 2.02 * x * g).collect()]),
            )
        },
    }
}

fn output_shape(spec: &OpSpec, inputs: &[Tensor<f64>]) -> Result<Vec<usize>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let y = (spec.build)(&mut g, &vars)?;
    Ok(g.shape(y).to_vec())
}

/// `Σ op(x) ⊙ r`, with `want_grad` marking the inputs as differentiable.
fn contracted(spec: &OpSpec, inputs: &[Tensor<f64>], r: &Tensor<f64>, want_grad: bool) -> Result<(Graph<f64>, Vec<Var>, Var)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), want_grad)).collect();
    let y = (spec.build)(&mut g, &vars)?;
    let rv = g.constant(r.clone());
    let prod = g.mul(y, rv)?;
    let loss = g.sum(prod)?;
    Ok((g, vars, loss))
}

/// Largest coordinate error over `trials` random draws of one op.
pub fn check_op(spec: &OpSpec, trials: usize, seed: u64) -> Result<OpResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let inputs = (spec.inputs)(&mut rng);
        let r = uniform(&mut rng, &output_shape(spec, &inputs)?, -1.0, 1.0);
        let (mut g, vars, loss) = contracted(spec, &inputs, &r, true)?;
        g.backward(loss)?;
        let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_default()).collect();

        let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
            let (g, _, loss) = contracted(spec, inputs, &r, false)?;
            Ok(g.value(loss).data()[0])
        };
        let mut probe = inputs.clone();
        for (k, t) in inputs.iter().enumerate() {
            for j in 0..t.len() {
                let x = t.data()[j];
                probe[k].data_mut()[j] = x + STEP;
                let up = eval(&probe)?;
                probe[k].data_mut()[j] = x - STEP;
                let down = eval(&probe)?;
                probe[k].data_mut()[j] = x;
                let numeric = (up - down) / (2.0 * STEP);
                let a = analytic[k].get(j).copied().unwrap_or(0.0);
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
                worst = worst.max(err);
            }
        }
    }
    Ok(OpResult {
        name: spec.name,
        trials,
        max_rel_error: worst,
    })
}

/// Checks every registered op, or only the one named `only`.
pub fn run(only: Option<&str>, trials: usize, seed: u64) -> Result<Vec<OpResult>> {
    let mut specs = ops();
    if let Some(name) = only {
        if name == perturbed_fixture().name {
            specs = vec![perturbed_fixture()];
        } else {
            specs.retain(|s| s.name == name);
            if specs.is_empty() {
                let known: Vec<_> = ops().iter().map(|s| s.name).collect();
                return Err(Error::invalid(format!("unknown op {name:?}; known ops: {}", known.join(", "))));
            }
        }
    }
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| check_op(s, trials, seed.wrapping_add(i as u64)))
        .collect()
}

/// Outcome of [`check_model`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheck {
    pub coordinates: usize,
    /// `‖a − n‖ / max(‖a‖, ‖n‖)` over all sampled coordinates.
    pub rel_error: f64,
}

fn model_loss(model: &SaliencyModel<f64>, g: &mut Graph<f64>, p: &crate::model::Bound, clip: &(Tensor<f64>, Tensor<f64>, Tensor<f64>)) -> Result<Var> {
    let heads = Heads {
        reversal: false,
        ..Heads::ALL
    };
    let v = g.constant(clip.0.clone());
    let a = g.constant(clip.1.clone());
    let out = model.forward(g, p, v, a, heads)?;
    let kl = kl_loss(g, out.saliency.expect("saliency head"), &clip.2, 1e-7)?;
    let la = domain_source_term_logit(g, out.d_audio_logit.expect("audio head"))?;
    let lav = domain_target_term_logit(g, out.d_fusion_logit.expect("fusion head"))?;
    let s = g.add(kl, la)?;
    g.add(s, lav)
}

/// Finite-difference check of the whole network (reversal disabled, all
/// heads active) on `per_param` random coordinates of every parameter.
pub fn check_model(config: ModelConfig, seed: u64, per_param: usize) -> Result<ModelCheck> {
    let mut model = SaliencyModel::<f32>::new(config.clone(), seed)?.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    // non-zero biases so every relu sees a spread of pre-activations
    for p in model.params_mut().iter_mut() {
        if p.name.ends_with("bias") {
            p.value.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }
    let video = uniform(&mut rng, &[3, config.frames, config.height, config.width], 0.0, 1.0);
    let audio = uniform(&mut rng, &[1, config.audio_len], -1.0, 1.0);
    let gt = uniform(&mut rng, &[config.height, config.width], 0.0, 1.0);
    let total = gt.sum();
    let gt = Tensor::from_fn(gt.shape().to_vec(), |i| gt.data()[i] / total);
    let clip = (video, audio, gt);

    let mut g = Graph::new();
    let p = model.bind(&mut g, true);
    let loss = model_loss(&model, &mut g, &p, &clip)?;
    g.backward(loss)?;
    let grads = p.grads(&g);

    let eval = |m: &SaliencyModel<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let p = m.bind(&mut g, false);
        let l = model_loss(m, &mut g, &p, &clip)?;
        Ok(g.value(l).data()[0])
    };
    let (mut diff, mut na, mut nn, mut coords) = (0.0, 0.0, 0.0, 0);
    for k in 0..model.params().len() {
        let len = grads[k].len();
        for j in rand::seq::index::sample(&mut rng, len, per_param.min(len)) {
            let x = model.params().iter().nth(k).unwrap().value.data()[j];
            let set = |m: &mut SaliencyModel<f64>, v: f64| m.params_mut().iter_mut().nth(k).unwrap().value.data_mut()[j] = v;
            set(&mut model, x + STEP);
            let up = eval(&model)?;
            set(&mut model, x - STEP);
            let down = eval(&model)?;
            set(&mut model, x);
            let numeric = (up - down) / (2.0 * STEP);
            let a = grads[k][j];
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
            coords += 1;
        }
    }
    let denom = na.sqrt().max(nn.sqrt());
    Ok(ModelCheck {
        coordinates: coords,
        rel_error: if denom == 0.0 { 0.0 } else { diff.sqrt() / denom },
    })
}
