//! Named parameter collections and the handful of layers the networks use.

use std::fmt;
use std::ops::Index;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Kind tag recorded for every layer a network registers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
    },
    PRelu,
    ConvLstm,
    Upsample,
}

impl LayerKind {
    /// Batch/instance/layer normalisation of any kind. The networks use none.
    pub fn is_normalization(&self) -> bool {
        false
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerKind::Conv2d {
                c_in,
                c_out,
                kernel,
                stride,
            } => write!(f, "conv{kernel}x{kernel}/{stride} {c_in}->{c_out}"),
            LayerKind::PRelu => f.write_str("prelu"),
            LayerKind::ConvLstm => f.write_str("conv-lstm"),
            LayerKind::Upsample => f.write_str("upsample2x"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerEntry {
    pub name: String,
    pub kind: LayerKind,
}

/// Ordered, named parameter tensors plus the registry of layers that own them.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    layers: Vec<LayerEntry>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            layers: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn register_layer(&mut self, name: impl Into<String>, kind: LayerKind) {
        self.layers.push(LayerEntry {
            name: name.into(),
            kind,
        });
    }

    pub fn layers(&self) -> &[LayerEntry] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Sets every tensor whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (n, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            if n.starts_with(prefix) {
                t.data_mut().fill(T::zero());
            }
        }
    }

    /// Replace a tensor by name, keeping its shape.
    pub fn assign(&mut self, name: &str, value: Tensor<T>) -> crate::Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| crate::Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        self.tensors[id.0].expect_shape(value.shape())?;
        self.tensors[id.0] = value;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            layers: self.layers.clone(),
        }
    }

    /// Leaves for every parameter; trainable ones receive gradients.
    pub fn bind(&self, g: &Graph<T>) -> Bound {
        Bound(self.tensors.iter().map(|t| g.param(t.clone())).collect())
    }

    /// Leaves for every parameter, none of which receive gradients.
    pub fn bind_frozen(&self, g: &Graph<T>) -> Bound {
        Bound(self.tensors.iter().map(|t| g.constant(t.clone())).collect())
    }
}

/// Parameters attached to one graph, indexable by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Binding from explicit variables, in parameter order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Seeded parameter initialisation.
pub struct Init<'a> {
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    /// He-uniform for a rectifier with negative slope 0.25.
    fn he_uniform<T: Scalar>(&mut self, shape: Shape, fan_in: usize) -> Tensor<T> {
        let bound = (6.0 / ((1.0 + 0.25f64 * 0.25) * fan_in as f64)).sqrt();
        Tensor::from_fn(shape, |_, _, _, _| {
            T::from_f64_lossy(self.rng.random_range(-bound..bound))
        })
    }

    fn scaled_uniform<T: Scalar>(&mut self, shape: Shape, bound: f64) -> Tensor<T> {
        Tensor::from_fn(shape, |_, _, _, _| {
            T::from_f64_lossy(self.rng.random_range(-bound..bound))
        })
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init<'_>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let shape = Shape::new(c_out, c_in, kernel, kernel);
        let weight = store.add(format!("{name}.weight"), init.he_uniform(shape, c_in * kernel * kernel));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, c_out, 1, 1)));
        store.register_layer(
            name,
            LayerKind::Conv2d {
                c_in,
                c_out,
                kernel,
                stride,
            },
        );
        Self {
            weight,
            bias,
            stride,
            pad: kernel / 2,
        }
    }

    /// Like [`Conv2d::new`] but with weights drawn from `±scale`, for output heads.
    #[allow(clippy::too_many_arguments)]
    pub fn with_scale<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init<'_>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        scale: f64,
    ) -> Self {
        let conv = Self::new(store, init, name, c_in, c_out, kernel, stride);
        let shape = store.get(conv.weight).shape();
        *store.get_mut(conv.weight) = init.scaled_uniform(shape, scale);
        conv
    }

    pub fn bias_id(&self) -> ParamId {
        self.bias
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, p: &Bound, x: Var) -> Var {
        g.conv2d(x, p[self.weight], Some(p[self.bias]), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct PRelu {
    slope: ParamId,
}

impl PRelu {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let slope = store.add(
            format!("{name}.slope"),
            Tensor::full(Shape::new(1, channels, 1, 1), T::from_f64_lossy(0.25)),
        );
        store.register_layer(name, LayerKind::PRelu);
        Self { slope }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, p: &Bound, x: Var) -> Var {
        g.prelu(x, p[self.slope])
    }
}

/// Convolution followed by a parametric rectifier.
#[derive(Clone, Debug)]
pub struct ConvPRelu {
    conv: Conv2d,
    act: PRelu,
}

impl ConvPRelu {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init<'_>,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
    ) -> Self {
        Self {
            conv: Conv2d::new(store, init, &format!("{name}.conv"), c_in, c_out, 3, stride),
            act: PRelu::new(store, &format!("{name}.act"), c_out),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, p: &Bound, x: Var) -> Var {
        self.act.forward(g, p, self.conv.forward(g, p, x))
    }

    /// Convolution output and the activated result.
    pub fn forward_with_pre<T: Scalar>(&self, g: &Graph<T>, p: &Bound, x: Var) -> (Var, Var) {
        let pre = self.conv.forward(g, p, x);
        (pre, self.act.forward(g, p, pre))
    }
}

/// Convolutional LSTM cell: input, forget and output gates plus a candidate,
/// all produced by one 3×3 convolution over `[x, h]`.
#[derive(Clone, Debug)]
pub struct ConvLstmCell {
    gates: Conv2d,
    hidden: usize,
}

impl ConvLstmCell {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init<'_>,
        name: &str,
        c_in: usize,
        hidden: usize,
    ) -> Self {
        let fan_in = (c_in + hidden) * 9;
        let gates = Conv2d::with_scale(
            store,
            init,
            &format!("{name}.gates"),
            c_in + hidden,
            4 * hidden,
            3,
            1,
            (3.0 / fan_in as f64).sqrt(),
        );
        // forget-gate bias starts at 1 so the cell initially keeps its memory
        let bias = store.get_mut(gates.bias_id());
        for c in hidden..2 * hidden {
            bias.set(0, c, 0, 0, T::one());
        }
        store.register_layer(name, LayerKind::ConvLstm);
        Self { gates, hidden }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// One recurrence; returns the new `(hidden, cell)`.
    pub fn forward<T: Scalar>(&self, g: &Graph<T>, p: &Bound, x: Var, h: Var, c: Var) -> (Var, Var) {
        let z = self.gates.forward(g, p, g.concat(&[x, h]));
        let k = self.hidden;
        let input = g.sigmoid(g.slice_channels(z, 0, k));
        let forget = g.sigmoid(g.slice_channels(z, k, k));
        let output = g.sigmoid(g.slice_channels(z, 2 * k, k));
        let candidate = g.tanh(g.slice_channels(z, 3 * k, k));
        let c_next = g.add(g.mul(forget, c), g.mul(input, candidate));
        let h_next = g.mul(output, g.tanh(c_next));
        (h_next, c_next)
    }
}
