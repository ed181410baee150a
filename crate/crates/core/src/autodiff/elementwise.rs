use super::{Adjoints, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn map<T: Real>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::from_fn(x.shape().to_vec(), |i| f(x.data()[i]))
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_fn(a.shape().to_vec(), |i| f(a.data()[i], b.data()[i]))
}

pub(crate) fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x / y);
        self.push("div", out, Op::Div(a, b))
    }

    /// Multiplies by a constant scalar.
    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let out = map(self.value(x), |v| v * s);
        self.push("scale", out, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Result<Var> {
        let out = map(self.value(x), |v| v + s);
        self.push("add_scalar", out, Op::AddScalar(x))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -T::one())
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(&bad) = self.value(x).data().iter().find(|&&v| v <= T::zero()) {
            return Err(Error::NonPositiveLog(bad.as_f64()));
        }
        let out = map(self.value(x), |v| v.ln());
        self.push("log", out, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), |v| v.exp());
        self.push("exp", out, Op::Exp(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), |v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), sigmoid_scalar);
        self.push("sigmoid", out, Op::Sigmoid(x))
    }

    /// `log σ(x)`, computed without overflow for large `|x|`.
    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), |v| v.min(T::zero()) - (-v.abs()).exp().ln_1p());
        self.push("log_sigmoid", out, Op::LogSigmoid(x))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        if lo > hi {
            return Err(Error::invalid(format!("clamp bounds {lo:?} > {hi:?}")));
        }
        let out = map(self.value(x), |v| v.max(lo).min(hi));
        self.push("clamp", out, Op::Clamp(x, lo, hi))
    }

    /// Identity in the forward pass; scales the incoming gradient by
    /// `-lambda` in the backward pass.
    pub fn grad_reversal(&mut self, x: Var, lambda: T) -> Result<Var> {
        if lambda < T::zero() || !lambda.is_finite() {
            return Err(Error::invalid(format!(
                "gradient reversal coefficient must be non-negative, got {lambda:?}"
            )));
        }
        let out = self.value(x).clone();
        self.push("grad_reversal", out, Op::GradReversal(x, lambda))
    }
}

pub(super) fn backward<'n, T: Real>(
    op: &Op<T>,
    val: &impl Fn(&Var) -> &'n Tensor<T>,
    out: &Tensor<T>,
    gout: &[T],
    adj: &mut Adjoints<'_, T>,
) {
    let unary = |adj: &mut Adjoints<'_, T>, x: Var, d: &dyn Fn(usize) -> T| {
        if let Some(buf) = adj.get(x) {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = *b + d(i);
            }
        }
    };
    match op {
        Op::Add(a, b) => {
            adj.add(*a, gout);
            adj.add(*b, gout);
        }
        Op::Sub(a, b) => {
            adj.add(*a, gout);
            unary(adj, *b, &|i| -gout[i]);
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(a).data(), val(b).data());
            unary(adj, *a, &|i| gout[i] * vb[i]);
            unary(adj, *b, &|i| gout[i] * va[i]);
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(a).data(), val(b).data());
            unary(adj, *a, &|i| gout[i] / vb[i]);
            unary(adj, *b, &|i| -gout[i] * va[i] / (vb[i] * vb[i]));
        }
        Op::Scale(x, s) => unary(adj, *x, &|i| gout[i] * *s),
        Op::AddScalar(x) => adj.add(*x, gout),
        Op::Log(x) => {
            let vx = val(x).data();
            unary(adj, *x, &|i| gout[i] / vx[i]);
        }
        Op::Exp(x) => unary(adj, *x, &|i| gout[i] * out.data()[i]),
        Op::Relu(x) => {
            let vx = val(x).data();
            unary(adj, *x, &|i| if vx[i] > T::zero() { gout[i] } else { T::zero() });
        }
        Op::Sigmoid(x) => {
            let y = out.data();
            unary(adj, *x, &|i| gout[i] * y[i] * (T::one() - y[i]));
        }
        Op::LogSigmoid(x) => {
            let vx = val(x).data();
            unary(adj, *x, &|i| gout[i] * sigmoid_scalar(-vx[i]));
        }
        Op::Clamp(x, lo, hi) => {
            let vx = val(x).data();
            unary(adj, *x, &|i| {
                if vx[i] < *lo || vx[i] > *hi {
                    T::zero()
                } else {
                    gout[i]
                }
            });
        }
        Op::GradReversal(x, lambda) => {
            let s = -*lambda;
            unary(adj, *x, &|i| gout[i] * s);
        }
        _ => unreachable!("not an elementwise op"),
    }
}
