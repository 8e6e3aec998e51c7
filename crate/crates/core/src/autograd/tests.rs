use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::check::max_relative_error;
use super::*;

fn random(shape: Shape, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

fn assert_grad(name: &str, inputs: &[Tensor<f64>], build: impl Fn(&Graph<f64>, &[Var]) -> Var) {
    let err = max_relative_error(&build, inputs, 1e-5);
    assert!(err < 1e-6, "{name}: max relative error {err}");
}

#[test]
fn elementwise_ops_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = Shape::new(2, 3, 3, 2);
    let a = random(s, 0.2, 1.0, &mut rng);
    let b = random(s, 0.5, 1.5, &mut rng);
    let w = random(s, -1.0, 1.0, &mut rng);
    let weighted = |g: &Graph<f64>, v: Var, w: Var| g.mean(g.mul(v, w));
    assert_grad("add", &[a.clone(), b.clone(), w.clone()], |g, v| weighted(g, g.add(v[0], v[1]), v[2]));
    assert_grad("sub", &[a.clone(), b.clone(), w.clone()], |g, v| weighted(g, g.sub(v[0], v[1]), v[2]));
    assert_grad("mul", &[a.clone(), b.clone(), w.clone()], |g, v| weighted(g, g.mul(v[0], v[1]), v[2]));
    assert_grad("div", &[a.clone(), b.clone(), w.clone()], |g, v| weighted(g, g.div(v[0], v[1]), v[2]));
    assert_grad("affine", &[a.clone(), w.clone()], |g, v| weighted(g, g.affine(v[0], -2.5, 0.3), v[1]));
    assert_grad("sigmoid", &[w.clone(), a.clone()], |g, v| weighted(g, g.sigmoid(v[0]), v[1]));
    assert_grad("tanh", &[w.clone(), a.clone()], |g, v| weighted(g, g.tanh(v[0]), v[1]));
    assert_grad("exp", &[w.clone(), a.clone()], |g, v| weighted(g, g.exp(v[0]), v[1]));
    assert_grad("log", &[a.clone(), w.clone()], |g, v| weighted(g, g.log(v[0]), v[1]));
    assert_grad("abs", &[w.clone(), a.clone()], |g, v| weighted(g, g.abs(v[0]), v[1]));
    assert_grad("square", &[w.clone(), a.clone()], |g, v| weighted(g, g.square(v[0]), v[1]));
}

#[test]
fn broadcast_gradients_reduce_over_expanded_axes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let img = random(Shape::new(2, 3, 4, 4), 0.1, 0.9, &mut rng);
    let per_channel = random(Shape::new(2, 3, 1, 1), 0.5, 1.0, &mut rng);
    let per_pixel = random(Shape::new(2, 1, 4, 4), 0.3, 1.0, &mut rng);
    let w = random(Shape::new(2, 3, 4, 4), -1.0, 1.0, &mut rng);
    assert_grad(
        "broadcast chain",
        &[img, per_channel, per_pixel, w],
        |g, v| {
            let a = g.sub(v[0], v[1]);
            let b = g.div(a, v[2]);
            let c = g.mul(b, v[1]);
            let d = g.add(c, v[2]);
            g.mean(g.mul(d, v[3]))
        },
    );
}

#[test]
fn clamp_and_guard_pass_gradient_only_inside() {
    let g = Graph::<f64>::new();
    let x = g.param(Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![-0.5, 0.2, 0.7, 1.5]).unwrap());
    let y = g.clamp(x, 0.0, 1.0);
    let e = g.guard_magnitude(x, 0.3);
    assert_eq!(g.value(e).data(), &[-0.5, 0.3, 0.7, 1.5]);
    let loss = g.add(g.mean(y), g.mean(e));
    let grads = g.backward(loss);
    assert_eq!(grads.get(x).unwrap().data(), &[0.25, 0.25, 0.5, 0.25]);
    let z = g.constant(Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, -0.0]).unwrap());
    assert_eq!(g.value(g.guard_magnitude(z, 0.01)).data(), &[0.01, 0.01]);
}

#[test]
fn conv_prelu_and_structure_ops_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(Shape::new(2, 3, 6, 6), -1.0, 1.0, &mut rng);
    let w1 = random(Shape::new(4, 3, 3, 3), -0.5, 0.5, &mut rng);
    let b1 = random(Shape::new(1, 4, 1, 1), -0.1, 0.1, &mut rng);
    let slope = random(Shape::new(1, 4, 1, 1), 0.1, 0.3, &mut rng);
    let w2 = random(Shape::new(2, 6, 1, 1), -0.5, 0.5, &mut rng);
    let head = random(Shape::new(2, 2, 6, 6), -1.0, 1.0, &mut rng);
    assert_grad("conv stack", &[x, w1, b1, slope, w2, head], |g, v| {
        let h = g.conv2d(v[0], v[1], Some(v[2]), 2, 1);
        let h = g.prelu(h, v[3]);
        let up = g.upsample2x(h);
        let a = g.slice_channels(up, 1, 2);
        let cat = g.concat(&[up, a]);
        let out = g.conv2d(cat, v[4], None, 1, 0);
        let pooled = g.mean_spatial(out);
        let chan = g.mean_channels(out);
        let t = g.add(g.mul(out, v[5]), g.mul(chan, pooled));
        g.mean(g.tanh(t))
    });
}

#[test]
fn gradients_skip_constants_and_accumulate_on_reuse() {
    let g = Graph::<f64>::new();
    let p = g.param(Tensor::scalar(3.0));
    let c = g.constant(Tensor::scalar(2.0));
    let y = g.add(g.mul(p, p), g.mul(p, c));
    let grads = g.backward(y);
    assert_eq!(grads.get(p).unwrap().item(), 8.0);
    assert!(grads.get(c).is_none());
    let d = g.detach(p);
    let z = g.mul(d, p);
    assert_eq!(g.backward(z).get(p).unwrap().item(), 3.0);
}
