//! Strided convolutions (cross-correlation, no kernel flip).
//!
//! `conv1d` is lowered onto the same kernel as `conv3d` by viewing
//! `[C, T]` as `[C, 1, 1, T]`.

use super::{Adjoints, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Symmetric zero padding of `(k - 1) / 2` per side; with an odd kernel
    /// the output length is `ceil(len / stride)`.
    Same,
    Valid,
}

impl Padding {
    fn amount(self, k: usize) -> usize {
        match self {
            Padding::Same => (k - 1) / 2,
            Padding::Valid => 0,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConvGeom {
    /// (C, F, H, W) of the input.
    input: [usize; 4],
    /// (C', C, kf, kh, kw).
    kernel: [usize; 5],
    stride: [usize; 3],
    pad: [usize; 3],
    /// (F', H', W').
    output: [usize; 3],
}

impl ConvGeom {
    fn new(
        op: &'static str,
        input: [usize; 4],
        kernel: [usize; 5],
        stride: [usize; 3],
        padding: Padding,
    ) -> Result<Self> {
        if kernel[1] != input[0] {
            return Err(Error::ShapeMismatch {
                op,
                expected: vec![input[0]],
                got: vec![kernel[1]],
            });
        }
        if stride.contains(&0) {
            return Err(Error::invalid(format!("{op}: strides must be >= 1")));
        }
        let mut pad = [0; 3];
        let mut output = [0; 3];
        for a in 0..3 {
            let (d, k, s) = (input[a + 1], kernel[a + 2], stride[a]);
            pad[a] = padding.amount(k);
            if d + 2 * pad[a] < k {
                return Err(Error::InvalidShape {
                    op,
                    msg: format!("kernel {k} larger than padded input {}", d + 2 * pad[a]),
                });
            }
            output[a] = (d + 2 * pad[a] - k) / s + 1;
        }
        Ok(ConvGeom {
            input,
            kernel,
            stride,
            pad,
            output,
        })
    }

    /// Visits every contiguous output row segment touched by one kernel tap:
    /// `f(kernel_index, x_offset, out_offset, len)`, where consecutive
    /// output elements read input elements `stride_w` apart.
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [co_n, ci_n, kf_n, kh_n, kw_n] = self.kernel;
        let [_, fi, hi, wi] = self.input;
        let [fo, ho, wo] = self.output;
        let [sf, sh, sw] = self.stride;
        let [pf, ph, pw] = self.pad;

        // valid output-column range for each kw
        let cols: Vec<(usize, usize, usize)> = (0..kw_n)
            .map(|kw| {
                let lo = if pw > kw { (pw - kw).div_ceil(sw) } else { 0 };
                let hi_excl = if wi + pw > kw {
                    ((wi + pw - kw - 1) / sw + 1).min(wo)
                } else {
                    0
                };
                let len = hi_excl.saturating_sub(lo);
                let iw0 = (lo * sw + kw).saturating_sub(pw);
                (lo, len, iw0)
            })
            .collect();

        for co in 0..co_n {
            for ci in 0..ci_n {
                for kf in 0..kf_n {
                    for kh in 0..kh_n {
                        for (kw, &(ow0, len, iw0)) in cols.iter().enumerate() {
                            if len == 0 {
                                continue;
                            }
                            let kidx = (((co * ci_n + ci) * kf_n + kf) * kh_n + kh) * kw_n + kw;
                            for of in 0..fo {
                                let iff = (of * sf + kf) as isize - pf as isize;
                                if iff < 0 || iff >= fi as isize {
                                    continue;
                                }
                                for oh in 0..ho {
                                    let ih = (oh * sh + kh) as isize - ph as isize;
                                    if ih < 0 || ih >= hi as isize {
                                        continue;
                                    }
                                    let xo = ((ci * fi + iff as usize) * hi + ih as usize) * wi + iw0;
                                    let oo = ((co * fo + of) * ho + oh) * wo + ow0;
                                    f(kidx, xo, oo, len);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn out_len(&self) -> usize {
        self.kernel[0] * self.output.iter().product::<usize>()
    }
}

fn dims<const N: usize>(op: &'static str, s: &[usize]) -> Result<[usize; N]> {
    s.try_into().map_err(|_| Error::InvalidShape {
        op,
        msg: format!("expected {N} dimensions, got shape {s:?}"),
    })
}

impl<T: Real> Graph<T> {
    /// 3-D convolution of `x: [C, F, H, W]` with `kernel: [C', C, kf, kh, kw]`.
    pub fn conv3d(&mut self, x: Var, kernel: Var, stride: [usize; 3], padding: Padding) -> Result<Var> {
        let input = dims::<4>("conv3d", self.shape(x))?;
        let k = dims::<5>("conv3d", self.shape(kernel))?;
        let geom = ConvGeom::new("conv3d", input, k, stride, padding)?;
        let out_shape = vec![k[0], geom.output[0], geom.output[1], geom.output[2]];
        self.conv_forward("conv3d", x, kernel, geom, out_shape)
    }

    /// 1-D convolution of `x: [C, T]` with `kernel: [C', C, k]`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        let [c, t] = dims::<2>("conv1d", self.shape(x))?;
        let [co, ci, kw] = dims::<3>("conv1d", self.shape(kernel))?;
        let geom = ConvGeom::new("conv1d", [c, 1, 1, t], [co, ci, 1, 1, kw], [1, 1, stride], padding)?;
        let out_shape = vec![co, geom.output[2]];
        self.conv_forward("conv1d", x, kernel, geom, out_shape)
    }

    fn conv_forward(
        &mut self,
        name: &'static str,
        x: Var,
        kernel: Var,
        geom: ConvGeom,
        out_shape: Vec<usize>,
    ) -> Result<Var> {
        let mut out = vec![T::zero(); geom.out_len()];
        {
            let xd = self.value(x).data();
            let kd = self.value(kernel).data();
            let sw = geom.stride[2];
            geom.for_each_row(|ki, xo, oo, len| {
                let w = kd[ki];
                let orow = &mut out[oo..oo + len];
                if sw == 1 {
                    for (o, &xv) in orow.iter_mut().zip(&xd[xo..xo + len]) {
                        *o = *o + w * xv;
                    }
                } else {
                    for (j, o) in orow.iter_mut().enumerate() {
                        *o = *o + w * xd[xo + j * sw];
                    }
                }
            });
        }
        let out = Tensor::new(out_shape, out)?;
        self.push(name, out, Op::Conv(x, kernel, Box::new(geom)))
    }

    /// Adds a per-channel bias `b: [C]` to `x: [C, ...]`.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.shape(x)[0];
        if self.shape(b) != [c] {
            return Err(Error::ShapeMismatch {
                op: "bias_add",
                expected: vec![c],
                got: self.shape(b).to_vec(),
            });
        }
        let xv = self.value(x);
        let per = xv.len() / c;
        let bd = self.value(b).data();
        let out = Tensor::from_fn(xv.shape().to_vec(), |i| xv.data()[i] + bd[i / per]);
        self.push("bias_add", out, Op::BiasAdd(x, b))
    }
}

pub(super) fn conv_backward<T: Real>(
    x: Var,
    kernel: Var,
    vx: &Tensor<T>,
    vk: &Tensor<T>,
    geom: &ConvGeom,
    gout: &[T],
    adj: &mut Adjoints<'_, T>,
) {
    let sw = geom.stride[2];
    if let Some(dx) = adj.get(x) {
        let kd = vk.data();
        geom.for_each_row(|ki, xo, oo, len| {
            let w = kd[ki];
            let grow = &gout[oo..oo + len];
            if sw == 1 {
                for (d, &g) in dx[xo..xo + len].iter_mut().zip(grow) {
                    *d = *d + w * g;
                }
            } else {
                for (j, &g) in grow.iter().enumerate() {
                    dx[xo + j * sw] = dx[xo + j * sw] + w * g;
                }
            }
        });
    }
    if let Some(dk) = adj.get(kernel) {
        let xd = vx.data();
        geom.for_each_row(|ki, xo, oo, len| {
            let grow = &gout[oo..oo + len];
            let s: T = if sw == 1 {
                xd[xo..xo + len].iter().zip(grow).map(|(&a, &b)| a * b).sum()
            } else {
                grow.iter().enumerate().map(|(j, &g)| xd[xo + j * sw] * g).sum()
            };
            dk[ki] = dk[ki] + s;
        });
    }
}

pub(super) fn bias_add_backward<T: Real>(
    x: Var,
    b: Var,
    vx: &Tensor<T>,
    gout: &[T],
    adj: &mut Adjoints<'_, T>,
) {
    adj.add(x, gout);
    let c = vx.shape()[0];
    let per = vx.len() / c;
    if let Some(db) = adj.get(b) {
        for (ch, chunk) in gout.chunks(per).enumerate() {
            db[ch] = db[ch] + chunk.iter().copied().sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-sum oracle for a single-channel 3-D correlation.
    fn direct3d(x: &[f64], dims: [usize; 3], k: &[f64], kd: [usize; 3], s: [usize; 3], p: [usize; 3]) -> Vec<f64> {
        let out: Vec<usize> = (0..3).map(|a| (dims[a] + 2 * p[a] - kd[a]) / s[a] + 1).collect();
        let mut res = vec![0.0; out.iter().product()];
        for of in 0..out[0] {
            for oh in 0..out[1] {
                for ow in 0..out[2] {
                    let mut acc = 0.0;
                    for a in 0..kd[0] {
                        for b in 0..kd[1] {
                            for c in 0..kd[2] {
                                let i = (of * s[0] + a) as isize - p[0] as isize;
                                let j = (oh * s[1] + b) as isize - p[1] as isize;
                                let l = (ow * s[2] + c) as isize - p[2] as isize;
                                if i < 0 || j < 0 || l < 0 {
                                    continue;
                                }
                                let (i, j, l) = (i as usize, j as usize, l as usize);
                                if i >= dims[0] || j >= dims[1] || l >= dims[2] {
                                    continue;
                                }
                                acc += x[(i * dims[1] + j) * dims[2] + l] * k[(a * kd[1] + b) * kd[2] + c];
                            }
                        }
                    }
                    res[(of * out[1] + oh) * out[2] + ow] = acc;
                }
            }
        }
        res
    }

    #[test]
    fn identity_kernel() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(vec![1, 2, 3, 4], |i| i as f64));
        let k = g.constant(Tensor::full(vec![1, 1, 1, 1, 1], 1.0));
        let y = g.conv3d(x, k, [1, 1, 1], Padding::Same).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn ones_kernel_on_constant_input() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(vec![1, 4, 5, 5], 2.0));
        let k = g.constant(Tensor::full(vec![1, 1, 3, 3, 3], 1.0));
        let y = g.conv3d(x, k, [1, 1, 1], Padding::Valid).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 3, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 54.0));
    }

    #[test]
    fn strided_padded_matches_direct_sum() {
        let dims = [5, 6, 7];
        let xv: Vec<f64> = (0..210).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let kv: Vec<f64> = (0..27).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        for (stride, padding, p) in [
            ([1, 2, 2], Padding::Same, [1, 1, 1]),
            ([2, 1, 3], Padding::Valid, [0, 0, 0]),
            ([2, 2, 2], Padding::Same, [1, 1, 1]),
        ] {
            let mut g = Graph::<f64>::new();
            let x = g.constant(Tensor::new(vec![1, 5, 6, 7], xv.clone()).unwrap());
            let k = g.constant(Tensor::new(vec![1, 1, 3, 3, 3], kv.clone()).unwrap());
            let y = g.conv3d(x, k, stride, padding).unwrap();
            let oracle = direct3d(&xv, dims, &kv, [3, 3, 3], stride, p);
            assert_eq!(g.value(y).data(), oracle.as_slice(), "stride {stride:?}");
        }
    }

    #[test]
    fn conv1d_cases() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let k = g.constant(Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap());
        let y = g.conv1d(x, k, 1, Padding::Valid).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 5.0]);

        let id = g.constant(Tensor::full(vec![1, 1, 1], 1.0));
        let y = g.conv1d(x, id, 1, Padding::Same).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);

        for t in [7usize, 8, 9, 1024] {
            let x = g.constant(Tensor::zeros(vec![1, t]));
            let k = g.constant(Tensor::zeros(vec![1, 1, 3]));
            let y = g.conv1d(x, k, 2, Padding::Same).unwrap();
            assert_eq!(g.shape(y), &[1, t.div_ceil(2)]);
        }
    }

    #[test]
    fn kernel_larger_than_input() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![1, 2]));
        let k = g.constant(Tensor::zeros(vec![1, 1, 3]));
        assert!(g.conv1d(x, k, 1, Padding::Valid).is_err());
        let k = g.constant(Tensor::zeros(vec![1, 2, 1]));
        assert!(g.conv1d(x, k, 1, Padding::Valid).is_err());
    }
}
