use super::{Adjoints, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{strides, Real, Tensor};

impl<T: Real> Graph<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape.to_vec())?;
        self.push("reshape", out, Op::Reshape(x))
    }

    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        self.reshape(x, &[n])
    }

    /// Transpose of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let [m, n]: [usize; 2] = xv.shape().try_into().map_err(|_| Error::InvalidShape {
            op: "transpose",
            msg: format!("expected a matrix, got {:?}", xv.shape()),
        })?;
        let d = xv.data();
        let out = Tensor::from_fn(vec![n, m], |i| d[(i % m) * n + i / m]);
        self.push("transpose", out, Op::Transpose(x))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::invalid(format!("concat axis {axis} out of range for {first:?}")));
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(a, (x, y))| a == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    expected: first,
                    got: s.to_vec(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let block = v.len() / outer;
                out.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let out = Tensor::new(out_shape, out)?;
        self.push("concat", out, Op::Concat(parts.to_vec(), axis))
    }

    /// Broadcasts size-1 dimensions of `x` up to `shape` (same rank).
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(x).to_vec();
        let ok = src.len() == shape.len() && src.iter().zip(shape).all(|(&s, &t)| s == t || s == 1);
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "broadcast_to",
                expected: shape.to_vec(),
                got: src,
            });
        }
        let map = broadcast_index(&src, shape);
        let d = self.value(x).data();
        let out = Tensor::new(shape.to_vec(), map.iter().map(|&i| d[i]).collect())?;
        self.push("broadcast_to", out, Op::BroadcastTo(x))
    }

    /// Mean over every axis but the first: `[C, ...] -> [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.shape()[0];
        let per = xv.len() / c;
        let denom = T::from_usize(per).unwrap();
        let out: Vec<T> = xv
            .data()
            .chunks(per)
            .map(|ch| ch.iter().copied().sum::<T>() / denom)
            .collect();
        self.push("global_avg_pool", Tensor::new(vec![c], out)?, Op::GlobalAvgPool(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.sum() / T::from_usize(v.len()).unwrap();
        self.push("mean", Tensor::scalar(s), Op::Mean(x))
    }
}

/// Source flat index for every destination element of a broadcast.
fn broadcast_index(src: &[usize], dst: &[usize]) -> Vec<usize> {
    let ss = strides(src);
    let ds = strides(dst);
    let n: usize = dst.iter().product();
    (0..n)
        .map(|i| {
            let mut rem = i;
            let mut j = 0;
            for a in 0..dst.len() {
                let coord = rem / ds[a];
                rem %= ds[a];
                if src[a] != 1 {
                    j += coord * ss[a];
                }
            }
            j
        })
        .collect()
}

pub(super) fn transpose_backward<T: Real>(x: Var, vx: &Tensor<T>, gout: &[T], adj: &mut Adjoints<'_, T>) {
    let (m, n) = (vx.shape()[0], vx.shape()[1]);
    if let Some(dx) = adj.get(x) {
        for i in 0..m {
            for j in 0..n {
                dx[i * n + j] = dx[i * n + j] + gout[j * m + i];
            }
        }
    }
}

pub(super) fn concat_backward<T: Real>(
    parts: &[Var],
    shapes: &[&[usize]],
    axis: usize,
    out_shape: &[usize],
    gout: &[T],
    adj: &mut Adjoints<'_, T>,
) {
    let outer: usize = out_shape[..axis].iter().product();
    let blocks: Vec<usize> = shapes.iter().map(|s| s.iter().product::<usize>() / outer).collect();
    let row: usize = blocks.iter().sum();
    let mut offset = 0;
    for (p, &block) in parts.iter().zip(&blocks) {
        if let Some(dp) = adj.get(*p) {
            for o in 0..outer {
                let src = &gout[o * row + offset..o * row + offset + block];
                for (d, &g) in dp[o * block..(o + 1) * block].iter_mut().zip(src) {
                    *d = *d + g;
                }
            }
        }
        offset += block;
    }
}

pub(super) fn broadcast_backward<T: Real>(
    x: Var,
    src: &[usize],
    dst: &[usize],
    gout: &[T],
    adj: &mut Adjoints<'_, T>,
) {
    if let Some(dx) = adj.get(x) {
        for (o, i) in broadcast_index(src, dst).into_iter().enumerate() {
            dx[i] = dx[i] + gout[o];
        }
    }
}

pub(super) fn gap_backward<T: Real>(x: Var, shape: &[usize], gout: &[T], adj: &mut Adjoints<'_, T>) {
    let c = shape[0];
    let per = shape.iter().product::<usize>() / c;
    let denom = T::from_usize(per).unwrap();
    if let Some(dx) = adj.get(x) {
        for (ch, chunk) in dx.chunks_mut(per).enumerate() {
            let g = gout[ch] / denom;
            chunk.iter_mut().for_each(|d| *d = *d + g);
        }
    }
}
