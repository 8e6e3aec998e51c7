//! Adaptive-moment (Adam) optimizer over one or more parameter groups.

use serde::{Deserialize, Serialize};

use crate::autograd::Gradients;
use crate::error::{Error, Result};
use crate::nn::{Bound, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Scalar = f32> {
    config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Optimizer over the concatenation of `groups`.
    pub fn new(config: AdamConfig, groups: &[&ParamStore<T>]) -> Self {
        let zeros: Vec<_> = groups
            .iter()
            .flat_map(|g| g.iter().map(|(_, t)| Tensor::zeros(t.shape())))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// First and second moment estimates, in parameter order.
    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    pub fn restore(
        config: AdamConfig,
        step: u64,
        m: Vec<Tensor<T>>,
        v: Vec<Tensor<T>>,
        groups: &[&ParamStore<T>],
    ) -> Result<Self> {
        let shapes: Vec<_> = groups.iter().flat_map(|g| g.iter().map(|(_, t)| t.shape())).collect();
        let fits = |x: &[Tensor<T>]| x.len() == shapes.len() && x.iter().zip(&shapes).all(|(t, &s)| t.shape() == s);
        if !fits(&m) || !fits(&v) {
            return Err(Error::Checkpoint("optimizer state does not match the parameter set".into()));
        }
        Ok(Self { config, step, m, v })
    }

    /// One update of every group from the gradients of its bound variables;
    /// parameters without a gradient are left untouched.
    pub fn update(&mut self, groups: &mut [(&mut ParamStore<T>, &Bound)], grads: &Gradients<T>) {
        self.step += 1;
        let c = &self.config;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let bias1 = one - T::from_f64_lossy(c.beta1.powi(self.step as i32));
        let bias2 = one - T::from_f64_lossy(c.beta2.powi(self.step as i32));
        let lr = T::from_f64_lossy(c.learning_rate);
        let eps = T::from_f64_lossy(c.epsilon);
        let mut slot = 0;
        for (store, bound) in groups.iter_mut() {
            for (i, p) in store.tensors_mut().iter_mut().enumerate() {
                let s = slot + i;
                let Some(g) = grads.get(bound.vars()[i]) else { continue };
                let (m, v) = (self.m[s].data_mut(), self.v[s].data_mut());
                for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                    *mj = b1 * *mj + (one - b1) * gj;
                    *vj = b2 * *vj + (one - b2) * gj * gj;
                    *pj = *pj - lr * (*mj / bias1) / ((*vj / bias2).sqrt() + eps);
                }
            }
            slot += store.len();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use crate::tensor::Shape;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, -2.0]).unwrap());
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.1, ..Default::default() }, &[&store]);
        let g = Graph::new();
        let p = store.bind(&g);
        let loss = g.mean(g.square(p.vars()[0]));
        let grads = g.backward(loss);
        opt.update(&mut [(&mut store, &p)], &grads);
        let w = store.iter().next().unwrap().1.data().to_vec();
        // bias-corrected first step is lr·sign(g)
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 1.9).abs() < 1e-6);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::full(Shape::new(1, 1, 1, 3), 3.0));
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.05, ..Default::default() }, &[&store]);
        for _ in 0..2000 {
            let g = Graph::new();
            let p = store.bind(&g);
            let loss = g.mean(g.square(g.affine(p.vars()[0], 1.0, -0.5)));
            let grads = g.backward(loss);
            opt.update(&mut [(&mut store, &p)], &grads);
        }
        let w = store.iter().next().unwrap().1;
        assert!(w.data().iter().all(|v| (v - 0.5).abs() < 1e-3), "{:?}", w.data());
    }
}
