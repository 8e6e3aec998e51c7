//! Central-difference verification of analytic gradients.

use crate::tensor::{Shape, Tensor};

use super::{Graph, Var};

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Builds a scalar-valued graph from leaf inputs.
pub trait ScalarFn: Fn(&Graph<f64>, &[Var]) -> Var {}
impl<F: Fn(&Graph<f64>, &[Var]) -> Var> ScalarFn for F {}

fn evaluate(build: &impl ScalarFn, inputs: &[Tensor<f64>]) -> f64 {
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&g, &vars);
    assert_eq!(g.shape(out), Shape::scalar(), "checked function must be scalar");
    g.item(out)
}

/// Value and reverse-mode gradient with respect to every input.
pub fn analytic_gradients(build: &impl ScalarFn, inputs: &[Tensor<f64>]) -> (f64, Vec<Tensor<f64>>) {
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&g, &vars);
    let mut grads = g.backward(out);
    let value = g.item(out);
    let per_input = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    (value, per_input)
}

/// Central differences `(f(x+e) - f(x-e)) / 2e`, one coordinate at a time.
pub fn numerical_gradients(build: &impl ScalarFn, inputs: &[Tensor<f64>], eps: f64) -> Vec<Tensor<f64>> {
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = evaluate(build, &work);
            work[i].data_mut()[j] = orig - eps;
            let minus = evaluate(build, &work);
            work[i].data_mut()[j] = orig;
            grad.data_mut()[j] = (plus - minus) / (2.0 * eps);
        }
        out.push(grad);
    }
    out
}

/// Largest coordinate-wise relative error between analytic and numerical gradients.
pub fn max_relative_error(build: &impl ScalarFn, inputs: &[Tensor<f64>], eps: f64) -> f64 {
    let (_, analytic) = analytic_gradients(build, inputs);
    let numeric = numerical_gradients(build, inputs, eps);
    analytic
        .iter()
        .zip(&numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()).map(|(&x, &y)| relative_error(x, y)))
        .fold(0.0, f64::max)
}
