use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Padding, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Parameters in declaration order. The order is part of the checkpoint
/// format.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T: Real> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamSet<T> {
    pub(crate) fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    /// Fan-in scaled uniform weights, `U(−√(6/fan_in), √(6/fan_in))`.
    pub(crate) fn weight(&mut self, name: String, shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt();
        let value = Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-bound..bound)));
        self.push(name, value)
    }

    pub(crate) fn zeros(&mut self, name: String, shape: Vec<usize>) -> ParamId {
        self.push(name, Tensor::zeros(shape))
    }

    fn push(&mut self, name: String, value: Tensor<T>) -> ParamId {
        self.params.push(Param { name, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Inserts every parameter into `g` as a leaf.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| g.leaf(p.value.clone(), trainable)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    pub(crate) fn replace_values(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Codec(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::Codec(format!(
                    "parameter {} has shape {:?}, checkpoint holds {:?}",
                    p.name,
                    p.value.shape(),
                    v.shape()
                )));
            }
            p.value = v;
        }
        Ok(())
    }
}

/// Graph handles for a [`ParamSet`], valid for the graph they were bound into.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradient of every parameter, zero-filled where backward did not reach.
    pub fn grads<T: Real>(&self, g: &Graph<T>) -> Vec<Vec<T>> {
        self.vars
            .iter()
            .map(|&v| match g.grad(v) {
                Some(gr) => gr.to_vec(),
                None => vec![T::zero(); g.value(v).len()],
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: [usize; 3],
    pub padding: Padding,
}

impl ConvLayer {
    /// 3-D conv layer `cin -> cout` with kernel `k`.
    pub fn new3d<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: [usize; 3],
        stride: [usize; 3],
        padding: Padding,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = cin * k.iter().product::<usize>();
        ConvLayer {
            weight: ps.weight(format!("{name}.weight"), vec![cout, cin, k[0], k[1], k[2]], fan_in, rng),
            bias: ps.zeros(format!("{name}.bias"), vec![cout]),
            stride,
            padding,
        }
    }

    pub fn new1d<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: Padding,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        ConvLayer {
            weight: ps.weight(format!("{name}.weight"), vec![cout, cin, k], cin * k, rng),
            bias: ps.zeros(format!("{name}.bias"), vec![cout]),
            stride: [1, 1, stride],
            padding,
        }
    }

    pub fn forward3d<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = g.conv3d(x, p.var(self.weight), self.stride, self.padding)?;
        g.bias_add(y, p.var(self.bias))
    }

    pub fn forward1d<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = g.conv1d(x, p.var(self.weight), self.stride[2], self.padding)?;
        g.bias_add(y, p.var(self.bias))
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearLayer {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, din: usize, dout: usize, rng: &mut ChaCha8Rng) -> Self {
        LinearLayer {
            weight: ps.weight(format!("{name}.weight"), vec![din, dout], din, rng),
            bias: ps.zeros(format!("{name}.bias"), vec![dout]),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p.var(self.weight), p.var(self.bias))
    }
}
