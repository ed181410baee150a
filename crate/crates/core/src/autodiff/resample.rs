use super::{Adjoints, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Per-axis linear interpolation table with half-pixel centers
/// (align-corners = false): `(lower index, upper index, upper weight)`.
#[derive(Clone, Debug)]
pub(crate) struct UpsamplePlan {
    channels: usize,
    input: [usize; 3],
    output: [usize; 3],
    taps: [Vec<(usize, usize, f64)>; 3],
}

fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let w = if i1 == i0 { 0.0 } else { pos - i0 as f64 };
            (i0, i1, w)
        })
        .collect()
}

impl UpsamplePlan {
    /// Visits every output element with its 8 corner contributions.
    fn for_each<T: Real>(&self, mut f: impl FnMut(usize, usize, T)) {
        let [fi, hi, wi] = self.input;
        let [fo, ho, wo] = self.output;
        let one = 1.0f64;
        let mut oidx = 0;
        for c in 0..self.channels {
            for &(f0, f1, wf) in &self.taps[0] {
                for &(h0, h1, wh) in &self.taps[1] {
                    for &(w0, w1, ww) in &self.taps[2] {
                        for (fj, af) in [(f0, one - wf), (f1, wf)] {
                            if af == 0.0 {
                                continue;
                            }
                            for (hj, ah) in [(h0, one - wh), (h1, wh)] {
                                if ah == 0.0 {
                                    continue;
                                }
                                for (wj, aw) in [(w0, one - ww), (w1, ww)] {
                                    if aw == 0.0 {
                                        continue;
                                    }
                                    let iidx = ((c * fi + fj) * hi + hj) * wi + wj;
                                    f(oidx, iidx, T::from_f64_lossy(af * ah * aw));
                                }
                            }
                        }
                        oidx += 1;
                    }
                }
            }
        }
        debug_assert_eq!(oidx, self.channels * fo * ho * wo);
    }
}

impl<T: Real> Graph<T> {
    /// Max over the temporal axis: `[C, F, H, W] -> [C, H, W]`.
    /// Ties resolve to the lowest frame index.
    pub fn maxpool_temporal(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let [c, f, h, w]: [usize; 4] = xv.shape().try_into().map_err(|_| Error::InvalidShape {
            op: "maxpool_temporal",
            msg: format!("expected [C, F, H, W], got {:?}", xv.shape()),
        })?;
        let hw = h * w;
        let mut out = Vec::with_capacity(c * hw);
        let mut argmax = Vec::with_capacity(c * hw);
        let d = xv.data();
        for ch in 0..c {
            for p in 0..hw {
                let mut best = ch * f * hw + p;
                for fr in 1..f {
                    let i = (ch * f + fr) * hw + p;
                    if d[i] > d[best] {
                        best = i;
                    }
                }
                out.push(d[best]);
                argmax.push(best);
            }
        }
        let out = Tensor::new(vec![c, h, w], out)?;
        self.push("maxpool_temporal", out, Op::MaxPoolTemporal(x, argmax))
    }

    /// Trilinear interpolation of `[C, F, H, W]` up to `[C, F2, H2, W2]`.
    pub fn trilinear_upsample(&mut self, x: Var, target: [usize; 3]) -> Result<Var> {
        let xv = self.value(x);
        let [c, f, h, w]: [usize; 4] = xv.shape().try_into().map_err(|_| Error::InvalidShape {
            op: "trilinear_upsample",
            msg: format!("expected [C, F, H, W], got {:?}", xv.shape()),
        })?;
        let input = [f, h, w];
        if (0..3).any(|a| target[a] < input[a]) {
            return Err(Error::InvalidShape {
                op: "trilinear_upsample",
                msg: format!("target {target:?} smaller than source {input:?}"),
            });
        }
        let plan = UpsamplePlan {
            channels: c,
            input,
            output: target,
            taps: [
                axis_taps(f, target[0]),
                axis_taps(h, target[1]),
                axis_taps(w, target[2]),
            ],
        };
        let mut out = vec![T::zero(); c * target.iter().product::<usize>()];
        let d = xv.data();
        plan.for_each(|o, i, wgt: T| out[o] = out[o] + wgt * d[i]);
        let out = Tensor::new(vec![c, target[0], target[1], target[2]], out)?;
        self.push("trilinear_upsample", out, Op::Upsample(x, Box::new(plan)))
    }
}

pub(super) fn maxpool_backward<T: Real>(x: Var, argmax: &[usize], gout: &[T], adj: &mut Adjoints<'_, T>) {
    if let Some(dx) = adj.get(x) {
        for (&i, &g) in argmax.iter().zip(gout) {
            dx[i] = dx[i] + g;
        }
    }
}

pub(super) fn upsample_backward<T: Real>(
    x: Var,
    plan: &UpsamplePlan,
    gout: &[T],
    adj: &mut Adjoints<'_, T>,
) {
    if let Some(dx) = adj.get(x) {
        plan.for_each(|o, i, wgt: T| dx[i] = dx[i] + wgt * gout[o]);
    }
}
