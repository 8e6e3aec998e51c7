//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s; calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! the gradient of every leaf created with [`Graph::param`]. Graphs are built
//! fresh for each forward pass and dropped afterwards.
//!
//! Shape errors inside a graph are programming errors and panic; validated
//! entry points live in the domain modules.

pub mod check;
pub mod conv;

use std::cell::RefCell;
use std::rc::Rc;

use crate::tensor::{Scalar, Shape, Tensor};

use self::conv::ConvGeometry;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `x * scale + shift`
    Affine(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    Clamp(Var, T, T),
    /// `sign(x) * max(|x|, eps)`, sign(0) = +1
    GuardMagnitude(Var, T),
    PRelu(Var, Var),
    Conv2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    Concat(Vec<Var>),
    SliceChannels(Var, usize),
    Upsample2x(Var),
    MeanAll(Var),
    MeanChannels(Var),
    MeanSpatial(Var),
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn broadcast_zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_vec(sa, data).unwrap();
    }
    let out = sa
        .broadcast(&sb)
        .unwrap_or_else(|| panic!("cannot broadcast {sa} with {sb}"));
    let ta = sa.broadcast_strides(&out);
    let tb = sb.broadcast_strides(&out);
    let (da, db) = (a.data(), b.data());
    let mut data = Vec::with_capacity(out.numel());
    for n in 0..out.n {
        for c in 0..out.c {
            for y in 0..out.h {
                let ra = n * ta[0] + c * ta[1] + y * ta[2];
                let rb = n * tb[0] + c * tb[1] + y * tb[2];
                for x in 0..out.w {
                    data.push(f(da[ra + x * ta[3]], db[rb + x * tb[3]]));
                }
            }
        }
    }
    Tensor::from_vec(out, data).unwrap()
}

/// Sums `grad` over the axes on which `target` was broadcast.
fn reduce_to<T: Scalar>(grad: Tensor<T>, target: Shape) -> Tensor<T> {
    let gs = grad.shape();
    if gs == target {
        return grad;
    }
    let ts = target.broadcast_strides(&gs);
    let mut out = Tensor::zeros(target);
    let dst = out.data_mut();
    let src = grad.data();
    let mut i = 0;
    for n in 0..gs.n {
        for c in 0..gs.c {
            for y in 0..gs.h {
                let r = n * ts[0] + c * ts[1] + y * ts[2];
                for x in 0..gs.w {
                    dst[r + x * ts[3]] += src[i];
                    i += 1;
                }
            }
        }
    }
    out
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            debug_assert_eq!(acc.shape(), g.shape());
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: T) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Same value as `v`, cut from the tape.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes.borrow()[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn unary(&self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let (out, rg) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.0];
            (n.value.map(f), n.requires_grad)
        };
        self.push(out, op, rg)
    }

    fn binary(&self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let (out, rg) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            (
                broadcast_zip(&na.value, &nb.value, f),
                na.requires_grad || nb.requires_grad,
            )
        };
        self.push(out, op, rg)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// `x * scale + shift`.
    pub fn affine(&self, x: Var, scale: T, shift: T) -> Var {
        self.unary(x, Op::Affine(x, scale), |v| v * scale + shift)
    }

    pub fn neg(&self, x: Var) -> Var {
        self.affine(x, -T::one(), T::zero())
    }

    pub fn scale(&self, x: Var, s: T) -> Var {
        self.affine(x, s, T::zero())
    }

    /// `1 - x`.
    pub fn one_minus(&self, x: Var) -> Var {
        self.affine(x, -T::one(), T::one())
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| T::one() / (T::one() + (-v).exp()))
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), T::tanh)
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), T::exp)
    }

    pub fn log(&self, x: Var) -> Var {
        self.unary(x, Op::Log(x), T::ln)
    }

    pub fn abs(&self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), T::abs)
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// Hard clamp; the gradient passes only where `lo <= x <= hi`.
    pub fn clamp(&self, x: Var, lo: T, hi: T) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.max(lo).min(hi))
    }

    /// Pushes magnitudes below `eps` out to `±eps`, keeping the sign.
    pub fn guard_magnitude(&self, x: Var, eps: T) -> Var {
        self.unary(x, Op::GuardMagnitude(x, eps), |v| {
            if v.abs() >= eps {
                v
            } else if v >= T::zero() {
                eps
            } else {
                -eps
            }
        })
    }

    /// Parametric rectifier with one slope per channel (`slope` is `[1, C, 1, 1]`).
    pub fn prelu(&self, x: Var, slope: Var) -> Var {
        let (out, rg) = {
            let nodes = self.nodes.borrow();
            let (xv, av) = (&nodes[x.0].value, &nodes[slope.0].value);
            let s = xv.shape();
            assert_eq!(av.shape(), Shape::new(1, s.c, 1, 1), "prelu slope shape");
            let plane = s.plane();
            let mut out = Tensor::zeros(s);
            for (i, (o, &v)) in out.data_mut().iter_mut().zip(xv.data()).enumerate() {
                let c = (i / plane) % s.c;
                *o = if v > T::zero() { v } else { av.data()[c] * v };
            }
            (out, nodes[x.0].requires_grad || nodes[slope.0].requires_grad)
        };
        self.push(out, Op::PRelu(x, slope), rg)
    }

    /// 2-D cross-correlation. `weight` is `[c_out, c_in, kh, kw]`, `bias` is `[1, c_out, 1, 1]`.
    pub fn conv2d(&self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Var {
        let (out, geom, rg) = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let wv = &nodes[weight.0].value;
            let (xs, ws) = (xv.shape(), wv.shape());
            assert_eq!(xs.c, ws.c, "conv2d: input has {} channels, kernel expects {}", xs.c, ws.c);
            let geom = ConvGeometry {
                c_in: xs.c,
                h: xs.h,
                w: xs.w,
                c_out: ws.n,
                kh: ws.h,
                kw: ws.w,
                stride,
                pad,
            };
            let mut out = Tensor::zeros(geom.output_shape(xs.n));
            let bias_data = bias.map(|b| {
                let bv = &nodes[b.0].value;
                assert_eq!(bv.shape(), Shape::new(1, ws.n, 1, 1), "conv2d bias shape");
                bv.data()
            });
            conv::forward(&geom, xs.n, xv.data(), wv.data(), bias_data, out.data_mut());
            let rg = nodes[x.0].requires_grad
                || nodes[weight.0].requires_grad
                || bias.is_some_and(|b| nodes[b.0].requires_grad);
            (out, geom, rg)
        };
        self.push(
            out,
            Op::Conv2d {
                x,
                weight,
                bias,
                geom,
            },
            rg,
        )
    }

    /// Channel-axis concatenation.
    pub fn concat(&self, parts: &[Var]) -> Var {
        let (out, rg) = {
            let nodes = self.nodes.borrow();
            let first = nodes[parts[0].0].value.shape();
            let c: usize = parts.iter().map(|p| nodes[p.0].value.shape().c).sum();
            let shape = Shape::new(first.n, c, first.h, first.w);
            let mut data = Vec::with_capacity(shape.numel());
            for n in 0..first.n {
                for p in parts {
                    let v = &nodes[p.0].value;
                    let s = v.shape();
                    assert!(
                        s.n == first.n && s.h == first.h && s.w == first.w,
                        "concat: {s} vs {first}"
                    );
                    let item = s.c * s.plane();
                    data.extend_from_slice(&v.data()[n * item..(n + 1) * item]);
                }
            }
            let rg = parts.iter().any(|p| nodes[p.0].requires_grad);
            (Tensor::from_vec(shape, data).unwrap(), rg)
        };
        self.push(out, Op::Concat(parts.to_vec()), rg)
    }

    pub fn slice_channels(&self, x: Var, start: usize, len: usize) -> Var {
        let (out, rg) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[x.0].value;
            let s = v.shape();
            assert!(start + len <= s.c, "slice_channels out of range");
            let shape = Shape::new(s.n, len, s.h, s.w);
            let mut data = Vec::with_capacity(shape.numel());
            let item = s.c * s.plane();
            for n in 0..s.n {
                let base = n * item + start * s.plane();
                data.extend_from_slice(&v.data()[base..base + len * s.plane()]);
            }
            (Tensor::from_vec(shape, data).unwrap(), nodes[x.0].requires_grad)
        };
        self.push(out, Op::SliceChannels(x, start), rg)
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2x(&self, x: Var) -> Var {
        let (out, rg) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[x.0].value;
            let s = v.shape();
            let shape = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
            let mut data = Vec::with_capacity(shape.numel());
            for plane in v.data().chunks_exact(s.plane()) {
                for y in 0..shape.h {
                    let row = &plane[(y / 2) * s.w..(y / 2 + 1) * s.w];
                    for &val in row {
                        data.push(val);
                        data.push(val);
                    }
                }
            }
            (Tensor::from_vec(shape, data).unwrap(), nodes[x.0].requires_grad)
        };
        self.push(out, Op::Upsample2x(x), rg)
    }

    /// Mean of every element, as a `[1,1,1,1]` scalar.
    pub fn mean(&self, x: Var) -> Var {
        let (out, rg) = {
            let nodes = self.nodes.borrow();
            (
                Tensor::scalar(nodes[x.0].value.mean()),
                nodes[x.0].requires_grad,
            )
        };
        self.push(out, Op::MeanAll(x), rg)
    }

    /// `[n, c, h, w] -> [n, 1, h, w]`.
    pub fn mean_channels(&self, x: Var) -> Var {
        let (out, rg) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[x.0].value;
            let s = v.shape();
            let inv = T::one() / T::from_usize(s.c).unwrap();
            let mut out = Tensor::zeros(Shape::new(s.n, 1, s.h, s.w));
            let p = s.plane();
            for n in 0..s.n {
                let dst = &mut out.data_mut()[n * p..(n + 1) * p];
                for c in 0..s.c {
                    let src = &v.data()[(n * s.c + c) * p..(n * s.c + c + 1) * p];
                    for (d, &val) in dst.iter_mut().zip(src) {
                        *d += val;
                    }
                }
                for d in dst.iter_mut() {
                    *d *= inv;
                }
            }
            (out, nodes[x.0].requires_grad)
        };
        self.push(out, Op::MeanChannels(x), rg)
    }

    /// `[n, c, h, w] -> [n, c, 1, 1]`.
    pub fn mean_spatial(&self, x: Var) -> Var {
        let (out, rg) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[x.0].value;
            let s = v.shape();
            let inv = T::one() / T::from_usize(s.plane()).unwrap();
            let data = v
                .data()
                .chunks_exact(s.plane())
                .map(|p| p.iter().copied().sum::<T>() * inv)
                .collect();
            (
                Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data).unwrap(),
                nodes[x.0].requires_grad,
            )
        };
        self.push(out, Op::MeanSpatial(x), rg)
    }

    /// Gradients of the scalar `loss` with respect to every [`Graph::param`] leaf.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[loss.0].value.shape(),
            Shape::scalar(),
            "backward needs a scalar loss"
        );
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::scalar(T::one()));
        }
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(&nodes, node, g, &mut grads);
        }
        for (i, n) in nodes.iter().enumerate() {
            if !(matches!(n.op, Op::Leaf) && n.requires_grad) {
                grads[i] = None;
            }
        }
        Gradients { grads }
    }

    fn backprop_node(
        &self,
        nodes: &[Node<T>],
        node: &Node<T>,
        g: Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let val = |v: Var| -> &Tensor<T> { &nodes[v.0].value };
        let rg = |v: Var| nodes[v.0].requires_grad;
        let zip = |a: &Tensor<T>, b: &Tensor<T>, f: &dyn Fn(T, T) -> T| broadcast_zip(a, b, f);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if rg(*a) {
                    accumulate(&mut grads[a.0], reduce_to(g.clone(), val(*a).shape()));
                }
                if rg(*b) {
                    accumulate(&mut grads[b.0], reduce_to(g, val(*b).shape()));
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    accumulate(&mut grads[a.0], reduce_to(g.clone(), val(*a).shape()));
                }
                if rg(*b) {
                    accumulate(&mut grads[b.0], reduce_to(g.map(|v| -v), val(*b).shape()));
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let ga = zip(&g, val(*b), &|gv, bv| gv * bv);
                    accumulate(&mut grads[a.0], reduce_to(ga, val(*a).shape()));
                }
                if rg(*b) {
                    let gb = zip(&g, val(*a), &|gv, av| gv * av);
                    accumulate(&mut grads[b.0], reduce_to(gb, val(*b).shape()));
                }
            }
            Op::Div(a, b) => {
                if rg(*a) {
                    let ga = zip(&g, val(*b), &|gv, bv| gv / bv);
                    accumulate(&mut grads[a.0], reduce_to(ga, val(*a).shape()));
                }
                if rg(*b) {
                    // d(a/b)/db = -(a/b)/b = -y/b
                    let gy = zip(&g, &node.value, &|gv, yv| -gv * yv);
                    let gb = zip(&gy, val(*b), &|v, bv| v / bv);
                    accumulate(&mut grads[b.0], reduce_to(gb, val(*b).shape()));
                }
            }
            Op::Affine(x, s) => {
                let s = *s;
                accumulate(&mut grads[x.0], g.map(|v| v * s));
            }
            Op::Sigmoid(x) => {
                let gx = g.zip_map(&node.value, |gv, y| gv * y * (T::one() - y)).unwrap();
                accumulate(&mut grads[x.0], gx);
            }
            Op::Tanh(x) => {
                let gx = g.zip_map(&node.value, |gv, y| gv * (T::one() - y * y)).unwrap();
                accumulate(&mut grads[x.0], gx);
            }
            Op::Exp(x) => {
                let gx = g.zip_map(&node.value, |gv, y| gv * y).unwrap();
                accumulate(&mut grads[x.0], gx);
            }
            Op::Log(x) => {
                let gx = g.zip_map(val(*x), |gv, xv| gv / xv).unwrap();
                accumulate(&mut grads[x.0], gx);
            }
            Op::Abs(x) => {
                let gx = g
                    .zip_map(val(*x), |gv, xv| {
                        if xv > T::zero() {
                            gv
                        } else if xv < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .unwrap();
                accumulate(&mut grads[x.0], gx);
            }
            Op::Square(x) => {
                let two = T::one() + T::one();
                let gx = g.zip_map(val(*x), |gv, xv| gv * two * xv).unwrap();
                accumulate(&mut grads[x.0], gx);
            }
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let gx = g
                    .zip_map(val(*x), |gv, xv| {
                        if xv >= lo && xv <= hi {
                            gv
                        } else {
                            T::zero()
                        }
                    })
                    .unwrap();
                accumulate(&mut grads[x.0], gx);
            }
            Op::GuardMagnitude(x, eps) => {
                let eps = *eps;
                let gx = g
                    .zip_map(val(*x), |gv, xv| if xv.abs() >= eps { gv } else { T::zero() })
                    .unwrap();
                accumulate(&mut grads[x.0], gx);
            }
            Op::PRelu(x, slope) => {
                let xv = val(*x);
                let av = val(*slope);
                let s = xv.shape();
                let plane = s.plane();
                if rg(*x) {
                    let mut gx = Tensor::zeros(s);
                    for (i, (o, (&gv, &v))) in gx
                        .data_mut()
                        .iter_mut()
                        .zip(g.data().iter().zip(xv.data()))
                        .enumerate()
                    {
                        let c = (i / plane) % s.c;
                        *o = if v > T::zero() { gv } else { av.data()[c] * gv };
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                if rg(*slope) {
                    let mut ga = Tensor::zeros(av.shape());
                    for (i, (&gv, &v)) in g.data().iter().zip(xv.data()).enumerate() {
                        if v <= T::zero() {
                            let c = (i / plane) % s.c;
                            ga.data_mut()[c] += gv * v;
                        }
                    }
                    accumulate(&mut grads[slope.0], ga);
                }
            }
            Op::Conv2d {
                x,
                weight,
                bias,
                geom,
            } => {
                let xv = val(*x);
                let wv = val(*weight);
                let mut dx = rg(*x).then(|| Tensor::zeros(xv.shape()));
                let mut dw = rg(*weight).then(|| Tensor::zeros(wv.shape()));
                let mut db = bias
                    .filter(|b| rg(*b))
                    .map(|b| Tensor::zeros(val(b).shape()));
                conv::backward(
                    geom,
                    xv.shape().n,
                    xv.data(),
                    wv.data(),
                    g.data(),
                    dx.as_mut().map(|t| t.data_mut()),
                    dw.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                );
                if let Some(dx) = dx {
                    accumulate(&mut grads[x.0], dx);
                }
                if let Some(dw) = dw {
                    accumulate(&mut grads[weight.0], dw);
                }
                if let (Some(db), Some(b)) = (db, bias) {
                    accumulate(&mut grads[b.0], db);
                }
            }
            Op::Concat(parts) => {
                let gs = g.shape();
                let mut offset = 0;
                for p in parts {
                    let ps = val(*p).shape();
                    if rg(*p) {
                        let mut gp = Vec::with_capacity(ps.numel());
                        let item = gs.c * gs.plane();
                        for n in 0..gs.n {
                            let base = n * item + offset * gs.plane();
                            gp.extend_from_slice(&g.data()[base..base + ps.c * gs.plane()]);
                        }
                        accumulate(&mut grads[p.0], Tensor::from_vec(ps, gp).unwrap());
                    }
                    offset += ps.c;
                }
            }
            Op::SliceChannels(x, start) => {
                let xs = val(*x).shape();
                let gs = g.shape();
                let mut gx = Tensor::zeros(xs);
                let item = xs.c * xs.plane();
                let gitem = gs.c * gs.plane();
                for n in 0..xs.n {
                    let base = n * item + start * xs.plane();
                    gx.data_mut()[base..base + gitem]
                        .copy_from_slice(&g.data()[n * gitem..(n + 1) * gitem]);
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::Upsample2x(x) => {
                let xs = val(*x).shape();
                let mut gx = Tensor::zeros(xs);
                let ow = xs.w * 2;
                for (dst, src) in gx
                    .data_mut()
                    .chunks_exact_mut(xs.plane())
                    .zip(g.data().chunks_exact(xs.plane() * 4))
                {
                    for y in 0..xs.h * 2 {
                        for x2 in 0..ow {
                            dst[(y / 2) * xs.w + x2 / 2] += src[y * ow + x2];
                        }
                    }
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::MeanAll(x) => {
                let xs = val(*x).shape();
                let gv = g.item() / T::from_usize(xs.numel()).unwrap();
                accumulate(&mut grads[x.0], Tensor::full(xs, gv));
            }
            Op::MeanChannels(x) => {
                let xs = val(*x).shape();
                let inv = T::one() / T::from_usize(xs.c).unwrap();
                let p = xs.plane();
                let gx = Tensor::from_fn(xs, |n, _, y, xx| g.data()[n * p + y * xs.w + xx] * inv);
                accumulate(&mut grads[x.0], gx);
            }
            Op::MeanSpatial(x) => {
                let xs = val(*x).shape();
                let inv = T::one() / T::from_usize(xs.plane()).unwrap();
                let gx = Tensor::from_fn(xs, |n, c, _, _| g.data()[n * xs.c + c] * inv);
                accumulate(&mut grads[x.0], gx);
            }
        }
    }
}

#[cfg(test)]
mod tests;
