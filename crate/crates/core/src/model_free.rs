//! Recurrent model-free dehazer.
//!
//! Each iteration feeds the hazy input together with the previous residual
//! estimate through an encoder-decoder whose bottleneck is a convolutional
//! LSTM, producing a dehazed estimate `Ĵ_k`; a small convolutional stack then
//! maps `I − Ĵ_k` to the residual estimate `R̂_k`. One set of weights is
//! shared by all iterations and the LSTM state carries over between them.
//! The first iteration consumes an all-zero residual.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::haze_physics::{Image, ResidualMap};
use crate::nn::{Bound, Conv2d, ConvLstmCell, ConvPRelu, Init, LayerKind, ParamStore};
use crate::tensor::{Scalar, Shape, Tensor};

/// Spatial reduction between the input and the LSTM bottleneck.
pub const DOWNSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DehazerConfig {
    /// Encoder widths at full, half and quarter resolution.
    pub widths: [usize; 3],
    pub residual_width: usize,
}

impl Default for DehazerConfig {
    fn default() -> Self {
        Self {
            widths: [16, 32, 64],
            residual_width: 16,
        }
    }
}

impl DehazerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) || self.residual_width == 0 {
            return Err(Error::InvalidArgument("channel widths must be positive".into()));
        }
        Ok(())
    }
}

/// All-zero residual that seeds the first iteration.
pub fn init_residual<T: Scalar>(n: usize, height: usize, width: usize) -> ResidualMap<T> {
    ResidualMap::zeros(n, height, width)
}

/// LSTM memory at the bottleneck.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState<T: Scalar = f32> {
    pub hidden: Tensor<T>,
    pub cell: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct StateVars {
    pub hidden: Var,
    pub cell: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub dehazed: Var,
    pub residual: Var,
    pub state: StateVars,
}

/// `(Ĵ_k, R̂_k)` for `k = 1..=K`.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationTrace<T: Scalar = f32> {
    steps: Vec<(Image<T>, ResidualMap<T>)>,
}

impl<T: Scalar> IterationTrace<T> {
    pub fn new(steps: Vec<(Image<T>, ResidualMap<T>)>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidArgument("an iteration trace needs K >= 1 entries".into()));
        }
        Ok(Self { steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Entry for iteration `k` (1-based).
    pub fn get(&self, k: usize) -> Option<&(Image<T>, ResidualMap<T>)> {
        k.checked_sub(1).and_then(|i| self.steps.get(i))
    }

    pub fn last(&self) -> &(Image<T>, ResidualMap<T>) {
        self.steps.last().expect("trace is never empty")
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Image<T>, ResidualMap<T>)> {
        self.steps.iter()
    }
}

#[derive(Clone, Debug)]
struct Generator {
    enc1: ConvPRelu,
    enc2: ConvPRelu,
    enc3: ConvPRelu,
    memory: ConvLstmCell,
    dec2: ConvPRelu,
    dec1: ConvPRelu,
    head: Conv2d,
}

#[derive(Clone, Debug)]
struct ResidualHead {
    layers: Vec<ConvPRelu>,
    out: Conv2d,
}

/// Encoder-decoder `G` and residual function `f_R`, with their parameters.
#[derive(Clone, Debug)]
pub struct ModelFreeDehazer<T: Scalar = f32> {
    config: DehazerConfig,
    params: ParamStore<T>,
    generator: Generator,
    residual: ResidualHead,
}

/// `log(x) − log(1 − x)` with `x` kept away from 0 and 1.
fn logit<T: Scalar>(g: &Graph<T>, x: Var) -> Var {
    let lo = T::from_f64_lossy(1e-3);
    let xc = g.clamp(x, lo, T::one() - lo);
    g.sub(g.log(xc), g.log(g.one_minus(xc)))
}

impl<T: Scalar> ModelFreeDehazer<T> {
    pub fn new(config: &DehazerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { rng: &mut rng };
        let mut store = ParamStore::new();
        let [w0, w1, w2] = config.widths;
        let s = &mut store;
        let generator = Generator {
            enc1: ConvPRelu::new(s, &mut init, "g.enc1", 6, w0, 1),
            enc2: ConvPRelu::new(s, &mut init, "g.enc2", w0, w1, 2),
            enc3: ConvPRelu::new(s, &mut init, "g.enc3", w1, w2, 2),
            memory: ConvLstmCell::new(s, &mut init, "g.memory", w2, w2),
            dec2: ConvPRelu::new(s, &mut init, "g.dec2", w2, w1, 1),
            dec1: ConvPRelu::new(s, &mut init, "g.dec1", w1, w0, 1),
            head: Conv2d::with_scale(s, &mut init, "g.head", w0, 3, 3, 1, 1e-2),
        };
        s.register_layer("g.up2", LayerKind::Upsample);
        s.register_layer("g.up1", LayerKind::Upsample);
        let rw = config.residual_width;
        let residual = ResidualHead {
            layers: vec![
                ConvPRelu::new(s, &mut init, "fr.l1", 3, rw, 1),
                ConvPRelu::new(s, &mut init, "fr.l2", rw, rw, 1),
                ConvPRelu::new(s, &mut init, "fr.l3", rw, rw, 1),
            ],
            out: Conv2d::with_scale(s, &mut init, "fr.l4", rw, 3, 3, 1, 1e-2),
        };
        log::info!(
            "model-free dehazer: {} parameters in {} tensors",
            store.num_scalars(),
            store.len()
        );
        Ok(Self {
            config: config.clone(),
            params: store,
            generator,
            residual,
        })
    }

    pub fn config(&self) -> &DehazerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> ModelFreeDehazer<U> {
        ModelFreeDehazer {
            config: self.config.clone(),
            params: self.params.cast(),
            generator: self.generator.clone(),
            residual: self.residual.clone(),
        }
    }

    fn check_input(shape: Shape) -> Result<()> {
        if shape.c != 3 || shape.h % DOWNSAMPLE != 0 || shape.w % DOWNSAMPLE != 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::Shape(format!(
                "dehazer input must be [n, 3, h, w] with h, w positive multiples of {DOWNSAMPLE}, got {shape}"
            )));
        }
        Ok(())
    }

    pub fn state_shape(&self, image: Shape) -> Shape {
        Shape::new(
            image.n,
            self.config.widths[2],
            image.h / DOWNSAMPLE,
            image.w / DOWNSAMPLE,
        )
    }

    /// All-zero LSTM memory for a batch of the given image shape.
    pub fn zero_state(&self, image: Shape) -> RecurrentState<T> {
        let s = self.state_shape(image);
        RecurrentState {
            hidden: Tensor::zeros(s),
            cell: Tensor::zeros(s),
        }
    }

    /// One recurrence on graph values.
    pub fn step_graph(&self, g: &Graph<T>, p: &Bound, image: Var, residual_prev: Var, state: StateVars) -> StepVars {
        let gen = &self.generator;
        let x = g.concat(&[image, residual_prev]);
        let e1 = gen.enc1.forward(g, p, x);
        let e2 = gen.enc2.forward(g, p, e1);
        let e3 = gen.enc3.forward(g, p, e2);
        let (hidden, cell) = gen.memory.forward(g, p, e3, state.hidden, state.cell);
        let d2 = g.add(gen.dec2.forward(g, p, g.upsample2x(hidden)), e2);
        let d1 = g.add(gen.dec1.forward(g, p, g.upsample2x(d2)), e1);
        let z = gen.head.forward(g, p, d1);
        // the head predicts a correction in logit space around the hazy input
        let dehazed = g.sigmoid(g.add(z, logit(g, image)));

        let diff = g.sub(image, dehazed);
        let mut h = diff;
        for layer in &self.residual.layers {
            h = layer.forward(g, p, h);
        }
        // f_R starts from the consistent residual Ĵ − I and learns a correction
        let residual = g.tanh(g.sub(self.residual.out.forward(g, p, h), diff));
        StepVars {
            dehazed,
            residual,
            state: StateVars { hidden, cell },
        }
    }

    /// `k` iterations from a zero residual and zero memory.
    pub fn run_graph(&self, g: &Graph<T>, p: &Bound, image: Var, k: usize) -> Vec<StepVars> {
        let shape = g.shape(image);
        let zero = self.zero_state(shape);
        let mut state = StateVars {
            hidden: g.constant(zero.hidden),
            cell: g.constant(zero.cell),
        };
        let mut residual = g.constant(init_residual::<T>(shape.n, shape.h, shape.w).into_tensor());
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let s = self.step_graph(g, p, image, residual, state);
            residual = s.residual;
            state = s.state;
            out.push(s);
        }
        out
    }

    /// One validated recurrence on concrete values.
    pub fn step(
        &self,
        image: &Image<T>,
        residual_prev: &ResidualMap<T>,
        state: &RecurrentState<T>,
    ) -> Result<(Image<T>, ResidualMap<T>, RecurrentState<T>)> {
        Self::check_input(image.shape())?;
        residual_prev.tensor().expect_shape(image.shape())?;
        let ss = self.state_shape(image.shape());
        state.hidden.expect_shape(ss)?;
        state.cell.expect_shape(ss)?;
        let g = Graph::new();
        let p = self.params.bind_frozen(&g);
        let s = self.step_graph(
            &g,
            &p,
            g.constant(image.tensor().clone()),
            g.constant(residual_prev.tensor().clone()),
            StateVars {
                hidden: g.constant(state.hidden.clone()),
                cell: g.constant(state.cell.clone()),
            },
        );
        Ok((
            Image::new((*g.value(s.dehazed)).clone())?,
            ResidualMap::new((*g.value(s.residual)).clone())?,
            RecurrentState {
                hidden: (*g.value(s.state.hidden)).clone(),
                cell: (*g.value(s.state.cell)).clone(),
            },
        ))
    }

    /// `k` iterations starting from [`init_residual`].
    pub fn run(&self, image: &Image<T>, k: usize) -> Result<IterationTrace<T>> {
        if k < 1 {
            return Err(Error::InvalidArgument("iteration count K must be at least 1".into()));
        }
        Self::check_input(image.shape())?;
        let s = image.shape();
        let mut residual = init_residual(s.n, s.h, s.w);
        let mut state = self.zero_state(s);
        let mut steps = Vec::with_capacity(k);
        for _ in 0..k {
            let (j, r, next) = self.step(image, &residual, &state)?;
            residual = r.clone();
            state = next;
            steps.push((j, r));
        }
        IterationTrace::new(steps)
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    fn small() -> DehazerConfig {
        DehazerConfig {
            widths: [4, 6, 8],
            residual_width: 4,
        }
    }

    fn random_image(seed: u64, h: usize, w: usize) -> Image<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn zero_residual_has_requested_shape() {
        let r = init_residual::<f32>(1, 64, 64);
        assert_eq!(r.tensor().shape(), Shape::new(1, 3, 64, 64));
        assert_eq!(r.tensor().data().iter().map(|v| v.abs()).sum::<f32>(), 0.0);
    }

    #[test]
    fn step_is_deterministic_and_shaped() {
        let model = ModelFreeDehazer::<f32>::new(&small(), 3).unwrap();
        let img = random_image(1, 8, 12);
        let state = model.zero_state(img.shape());
        let r0 = init_residual(1, 8, 12);
        let a = model.step(&img, &r0, &state).unwrap();
        let b = model.step(&img, &r0, &state).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.shape(), img.shape());
        assert_eq!(a.1.tensor().shape(), img.shape());
        assert_eq!(a.2.hidden.shape(), Shape::new(1, 8, 2, 3));
        assert!(a.0.tensor().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(a.1.tensor().data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn explicit_zero_residual_matches_initial_residual() {
        let model = ModelFreeDehazer::<f32>::new(&small(), 4).unwrap();
        let img = random_image(2, 8, 8);
        let state = model.zero_state(img.shape());
        let explicit = ResidualMap::new(Tensor::zeros(img.shape())).unwrap();
        let trace = model.run(&img, 1).unwrap();
        let stepped = model.step(&img, &explicit, &state).unwrap();
        assert_eq!(trace.get(1).unwrap().0, stepped.0);
        assert_eq!(trace.get(1).unwrap().1, stepped.1);
    }

    #[test]
    fn run_lengths_and_prefix_property() {
        let model = ModelFreeDehazer::<f32>::new(&small(), 5).unwrap();
        let img = random_image(3, 8, 8);
        assert_eq!(model.run(&img, 1).unwrap().len(), 1);
        let three = model.run(&img, 3).unwrap();
        let four = model.run(&img, 4).unwrap();
        assert_eq!(three.len(), 3);
        for k in 1..=3 {
            assert_eq!(three.get(k), four.get(k));
        }
        assert!(matches!(model.run(&img, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn shape_errors_are_reported() {
        let model = ModelFreeDehazer::<f32>::new(&small(), 5).unwrap();
        let odd = random_image(4, 6, 8);
        assert!(matches!(model.run(&odd, 1), Err(Error::Shape(_))));
        let img = random_image(4, 8, 8);
        let state = model.zero_state(img.shape());
        let wrong = init_residual(1, 4, 4);
        assert!(model.step(&img, &wrong, &state).is_err());
    }

    #[test]
    fn registry_has_no_normalization_layers() {
        let model = ModelFreeDehazer::<f32>::new(&DehazerConfig::default(), 0).unwrap();
        let layers = model.params().layers();
        assert!(layers.iter().any(|l| l.kind == LayerKind::ConvLstm));
        assert!(layers.iter().all(|l| !l.kind.is_normalization()));
        assert!(layers.iter().all(|l| !l.name.contains("norm")));
        assert!(model.params().all_finite());
    }

    #[test]
    fn seeds_change_initialisation() {
        let a = ModelFreeDehazer::<f32>::new(&small(), 1).unwrap();
        let b = ModelFreeDehazer::<f32>::new(&small(), 2).unwrap();
        let c = ModelFreeDehazer::<f32>::new(&small(), 1).unwrap();
        assert_ne!(a.params(), b.params());
        assert_eq!(a.params(), c.params());
    }
}
