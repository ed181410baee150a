use super::{Adjoints, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn dims2(op: &'static str, s: &[usize]) -> Result<(usize, usize)> {
    match s {
        [m, n] => Ok((*m, *n)),
        _ => Err(Error::InvalidShape {
            op,
            msg: format!("expected a matrix, got shape {s:?}"),
        }),
    }
}

/// `out[m,n] += a[m,k] * b[k,n]`
fn gemm_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
}

/// `da[m,k] += dy[m,n] * b[k,n]^T`
fn gemm_nt_acc<T: Real>(dy: &[T], b: &[T], da: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dyrow = &dy[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let s: T = dyrow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            da[i * k + p] = da[i * k + p] + s;
        }
    }
}

/// `db[k,n] += a[m,k]^T * dy[m,n]`
fn gemm_tn_acc<T: Real>(a: &[T], dy: &[T], db: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dyrow = &dy[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (d, &g) in dbrow.iter_mut().zip(dyrow) {
                *d = *d + aip * g;
            }
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul", self.shape(a))?;
        let (k2, n) = dims2("matmul", self.shape(b))?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                expected: vec![k, n],
                got: vec![k2, n],
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b))
    }

    /// `x·w + b` for `x: [N, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("linear", self.shape(x))?;
        let (k2, n) = dims2("linear", self.shape(w))?;
        if k != k2 || self.shape(b) != [n] {
            return Err(Error::ShapeMismatch {
                op: "linear",
                expected: vec![k, n],
                got: self.shape(w).to_vec(),
            });
        }
        let bias = self.value(b).data();
        let mut out: Vec<T> = (0..m).flat_map(|_| bias.iter().copied()).collect();
        gemm_acc(self.value(x).data(), self.value(w).data(), &mut out, m, k, n);
        self.push("linear", Tensor::new(vec![m, n], out)?, Op::Linear(x, w, b))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = *xv.shape().last().unwrap();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z = z + *v;
            }
            for v in row.iter_mut() {
                *v = *v / z;
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        self.push("softmax", out, Op::Softmax(x))
    }
}

pub(super) fn matmul_backward<T: Real>(
    a: Var,
    b: Var,
    va: &Tensor<T>,
    vb: &Tensor<T>,
    gout: &[T],
    adj: &mut Adjoints<'_, T>,
) {
    let (m, k) = (va.shape()[0], va.shape()[1]);
    let n = vb.shape()[1];
    if let Some(da) = adj.get(a) {
        gemm_nt_acc(gout, vb.data(), da, m, k, n);
    }
    if let Some(db) = adj.get(b) {
        gemm_tn_acc(va.data(), gout, db, m, k, n);
    }
}

pub(super) fn linear_backward<T: Real>(
    x: Var,
    w: Var,
    b: Var,
    vx: &Tensor<T>,
    vw: &Tensor<T>,
    gout: &[T],
    adj: &mut Adjoints<'_, T>,
) {
    matmul_backward(x, w, vx, vw, gout, adj);
    let n = vw.shape()[1];
    if let Some(db) = adj.get(b) {
        for row in gout.chunks(n) {
            db.iter_mut().zip(row).for_each(|(d, &g)| *d = *d + g);
        }
    }
}

pub(super) fn softmax_backward<T: Real>(x: Var, y: &Tensor<T>, gout: &[T], adj: &mut Adjoints<'_, T>) {
    let n = *y.shape().last().unwrap();
    if let Some(dx) = adj.get(x) {
        for ((yr, gr), dr) in y.data().chunks(n).zip(gout.chunks(n)).zip(dx.chunks_mut(n)) {
            let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            for j in 0..n {
                dr[j] = dr[j] + yr[j] * (gr[j] - dot);
            }
        }
    }
}
