//! Loss terms: pixel, perceptual and adversarial losses, their composition
//! over the recurrent iterations (`loss_u`) and over the physics stage
//! (`loss_v`), and the per-step [`LossReport`].

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d, ConvPRelu, Init, ParamStore};
use crate::physics_dehazer::StageVars;
use crate::tensor::{Scalar, Tensor};

/// Probability clamp applied before every log in the adversarial losses.
pub const PROB_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelNorm {
    #[default]
    AbsoluteError,
    SquaredError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// α1..α5: reconstruction, perceptual, adversarial, residual, residual consistency.
    pub alphas: [f64; 5],
    pub pixel_norm: PixelNorm,
    pub adversarial_enabled: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alphas: [1.0, 0.05, 0.005, 0.5, 0.5],
            pixel_norm: PixelNorm::AbsoluteError,
            adversarial_enabled: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and non-negative, got {:?}",
                self.alphas
            )));
        }
        if self.alphas.iter().all(|&a| a == 0.0) {
            return Err(Error::InvalidArgument("at least one loss weight must be positive".into()));
        }
        Ok(())
    }

    /// Whether the adversarial term takes part in training.
    pub fn uses_adversary(&self) -> bool {
        self.adversarial_enabled && self.alphas[2] > 0.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut w = self.clone();
        for a in &mut w.alphas {
            *a *= factor;
        }
        w
    }
}

pub fn pixel_loss_graph<T: Scalar>(g: &Graph<T>, x: Var, y: Var, norm: PixelNorm) -> Var {
    let d = g.sub(x, y);
    match norm {
        PixelNorm::AbsoluteError => g.mean(g.abs(d)),
        PixelNorm::SquaredError => g.mean(g.square(d)),
    }
}

pub fn pixel_loss<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, norm: PixelNorm) -> Result<f64> {
    y.expect_shape(x.shape())?;
    let g = Graph::new();
    let l = pixel_loss_graph(&g, g.constant(x.clone()), g.constant(y.clone()), norm);
    Ok(g.item(l).to_f64_lossy())
}

/// Fixed feature maps used by the perceptual loss.
pub trait FeatureExtractor<T: Scalar> {
    /// Feature maps of `x` at each scale.
    fn features(&self, g: &Graph<T>, x: Var) -> Vec<Var>;
}

/// Seeded, frozen three-scale convolutional stack with `tanh` activations.
#[derive(Clone, Debug)]
pub struct RandomConvExtractor<T: Scalar = f32> {
    params: ParamStore<T>,
    convs: Vec<Conv2d>,
}

impl<T: Scalar> RandomConvExtractor<T> {
    pub const DEFAULT_SEED: u64 = 0x5eed_f00d;

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { rng: &mut rng };
        let mut params = ParamStore::new();
        let convs = vec![
            Conv2d::new(&mut params, &mut init, "f.s1", 3, 8, 3, 1),
            Conv2d::new(&mut params, &mut init, "f.s2", 8, 16, 3, 2),
            Conv2d::new(&mut params, &mut init, "f.s3", 16, 32, 3, 2),
        ];
        Self { params, convs }
    }

    pub fn cast<U: Scalar>(&self) -> RandomConvExtractor<U> {
        RandomConvExtractor {
            params: self.params.cast(),
            convs: self.convs.clone(),
        }
    }
}

impl<T: Scalar> Default for RandomConvExtractor<T> {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SEED)
    }
}

impl<T: Scalar> FeatureExtractor<T> for RandomConvExtractor<T> {
    fn features(&self, g: &Graph<T>, x: Var) -> Vec<Var> {
        let p = self.params.bind_frozen(g);
        let mut h = x;
        self.convs
            .iter()
            .map(|c| {
                h = g.tanh(c.forward(g, &p, h));
                h
            })
            .collect()
    }
}

/// Sum over scales of the mean squared feature difference.
pub fn perceptual_loss_graph<T: Scalar>(g: &Graph<T>, ext: &dyn FeatureExtractor<T>, x: Var, y: Var) -> Var {
    let fx = ext.features(g, x);
    let fy = ext.features(g, y);
    let mut terms = fx
        .into_iter()
        .zip(fy)
        .map(|(a, b)| pixel_loss_graph(g, a, b, PixelNorm::SquaredError));
    let first = terms.next().expect("extractor yields at least one scale");
    terms.fold(first, |acc, t| g.add(acc, t))
}

pub fn perceptual_loss<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, ext: &dyn FeatureExtractor<T>) -> Result<f64> {
    y.expect_shape(x.shape())?;
    let g = Graph::new();
    let l = perceptual_loss_graph(&g, ext, g.constant(x.clone()), g.constant(y.clone()));
    Ok(g.item(l).to_f64_lossy())
}

/// Patch discriminator producing per-patch probabilities.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Scalar = f32> {
    params: ParamStore<T>,
    l1: ConvPRelu,
    l2: ConvPRelu,
    out: Conv2d,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { rng: &mut rng };
        let mut params = ParamStore::new();
        let l1 = ConvPRelu::new(&mut params, &mut init, "d.l1", 3, 16, 2);
        let l2 = ConvPRelu::new(&mut params, &mut init, "d.l2", 16, 32, 2);
        let out = Conv2d::with_scale(&mut params, &mut init, "d.out", 32, 1, 3, 1, 1e-2);
        Self { params, l1, l2, out }
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> Discriminator<U> {
        Discriminator {
            params: self.params.cast(),
            l1: self.l1.clone(),
            l2: self.l2.clone(),
            out: self.out.clone(),
        }
    }

    /// Per-patch probabilities clamped to `[PROB_EPS, 1 − PROB_EPS]`.
    pub fn probabilities(&self, g: &Graph<T>, p: &Bound, x: Var) -> Var {
        let h = self.l2.forward(g, p, self.l1.forward(g, p, x));
        clamp_prob(g, g.sigmoid(self.out.forward(g, p, h)))
    }

    /// Inputs to the two PReLU activations, where the network is not smooth.
    pub fn pre_activations(&self, g: &Graph<T>, p: &Bound, x: Var) -> [Var; 2] {
        let (a, h) = self.l1.forward_with_pre(g, p, x);
        let (b, _) = self.l2.forward_with_pre(g, p, h);
        [a, b]
    }
}

fn clamp_prob<T: Scalar>(g: &Graph<T>, p: Var) -> Var {
    let e = T::from_f64_lossy(PROB_EPS);
    g.clamp(p, e, T::one() - e)
}

/// `−mean log p`.
pub fn neg_log_mean<T: Scalar>(g: &Graph<T>, prob: Var) -> Var {
    g.neg(g.mean(g.log(clamp_prob(g, prob))))
}

/// `−mean log(1 − p)`.
pub fn neg_log_complement_mean<T: Scalar>(g: &Graph<T>, prob: Var) -> Var {
    g.neg(g.mean(g.log(clamp_prob(g, g.one_minus(prob)))))
}

/// `−mean log D(real) − mean log(1 − D(fake))` over the pooled fakes; the
/// fakes are detached so no gradient reaches the generator.
pub fn disc_loss_graph<T: Scalar>(g: &Graph<T>, d: &Discriminator<T>, p: &Bound, real: Var, fakes: &[Var]) -> Var {
    let real_term = neg_log_mean(g, d.probabilities(g, p, real));
    let scale = T::one() / T::from_usize(fakes.len()).expect("fake count fits the scalar type");
    let fake_term = fakes
        .iter()
        .map(|&f| neg_log_complement_mean(g, d.probabilities(g, p, g.detach(f))))
        .reduce(|a, b| g.add(a, b))
        .expect("at least one fake batch");
    g.add(real_term, g.scale(fake_term, scale))
}

/// Non-saturating generator loss `−mean log D(fake)`.
pub fn gen_loss_graph<T: Scalar>(g: &Graph<T>, d: &Discriminator<T>, p: &Bound, fake: Var) -> Var {
    neg_log_mean(g, d.probabilities(g, p, fake))
}

/// Generator and discriminator losses on concrete batches.
pub fn adversarial_losses<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>, d: &Discriminator<T>) -> Result<(f64, f64)> {
    real.expect_shape(fake.shape())?;
    let g = Graph::new();
    let p = d.params.bind_frozen(&g);
    let r = g.constant(real.clone());
    let f = g.constant(fake.clone());
    let gen = gen_loss_graph(&g, d, &p, f);
    let disc = disc_loss_graph(&g, d, &p, r, &[f]);
    Ok((g.item(gen).to_f64_lossy(), g.item(disc).to_f64_lossy()))
}

/// Frozen discriminator used inside the generator objective.
pub struct Adversary<'a, T: Scalar> {
    pub discriminator: &'a Discriminator<T>,
    pub bound: &'a Bound,
}

/// Named loss terms with graph handles, in report order.
pub struct LossTerms {
    pub total: Var,
    pub loss_u: Var,
    pub loss_v: Var,
    pub terms: Vec<(String, Var)>,
}

/// Over the iterates `(Ĵ_k, R̂_k)`:
/// `Σ_k α1 Lp(J, Ĵ_k) + α2 Lf(J, Ĵ_k) + α3 Ladv(Ĵ_k) + α4 Lp(J − I, R̂_k) + α5 Lp(Ĵ_k − I, R̂_k)`.
///
/// Terms with zero weight are skipped and the adversarial term is skipped
/// without an adversary.
pub fn loss_u_graph<T: Scalar>(
    g: &Graph<T>,
    iterates: &[(Var, Var)],
    image: Var,
    clean: Var,
    w: &LossWeights,
    ext: &dyn FeatureExtractor<T>,
    adversary: Option<&Adversary<'_, T>>,
) -> (Var, Vec<(String, Var)>) {
    assert!(!iterates.is_empty(), "loss_u needs at least one iteration");
    let norm = w.pixel_norm;
    let target_residual = g.sub(clean, image);
    let mut total = g.scalar(T::zero());
    let mut named = Vec::new();
    let mut push = |name: String, alpha: f64, term: Var, total: &mut Var| {
        named.push((name, term));
        *total = g.add(*total, g.scale(term, T::from_f64_lossy(alpha)));
    };
    for (i, &(dehazed, residual)) in iterates.iter().enumerate() {
        let k = i + 1;
        let [a1, a2, a3, a4, a5] = w.alphas;
        if a1 > 0.0 {
            push(format!("u{k}_pixel"), a1, pixel_loss_graph(g, dehazed, clean, norm), &mut total);
        }
        if a2 > 0.0 {
            push(format!("u{k}_perceptual"), a2, perceptual_loss_graph(g, ext, dehazed, clean), &mut total);
        }
        if let (true, Some(adv)) = (a3 > 0.0, adversary) {
            let term = gen_loss_graph(g, adv.discriminator, adv.bound, dehazed);
            push(format!("u{k}_adversarial"), a3, term, &mut total);
        }
        if a4 > 0.0 {
            push(format!("u{k}_residual"), a4, pixel_loss_graph(g, residual, target_residual, norm), &mut total);
        }
        if a5 > 0.0 {
            let own = g.sub(dehazed, image);
            push(format!("u{k}_consistency"), a5, pixel_loss_graph(g, residual, own, norm), &mut total);
        }
    }
    (total, named)
}

/// `Lp(t̂, t) + Lp(t̂_refine, t) + Lp(Ĵ, J) + Lp(Ĵ_refine, J)`; the
/// transmission terms are omitted when `t_gt` is absent.
pub fn loss_v_graph<T: Scalar>(
    g: &Graph<T>,
    stages: &StageVars,
    t_gt: Option<Var>,
    clean: Var,
    norm: PixelNorm,
) -> (Var, Vec<(String, Var)>) {
    let mut named = Vec::new();
    if let Some(t) = t_gt {
        named.push(("v_t_hat".to_string(), pixel_loss_graph(g, stages.t_hat, t, norm)));
        named.push(("v_t_refine".to_string(), pixel_loss_graph(g, stages.t_refine, t, norm)));
    }
    named.push(("v_j_prelim".to_string(), pixel_loss_graph(g, stages.j_prelim, clean, norm)));
    named.push(("v_j_refine".to_string(), pixel_loss_graph(g, stages.j_refine, clean, norm)));
    let total = named
        .iter()
        .map(|(_, v)| *v)
        .reduce(|a, b| g.add(a, b))
        .expect("loss_v has at least two terms");
    (total, named)
}

/// Full generator objective `loss_u + loss_v`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_graph<T: Scalar>(
    g: &Graph<T>,
    iterates: &[(Var, Var)],
    stages: &StageVars,
    image: Var,
    clean: Var,
    t_gt: Option<Var>,
    w: &LossWeights,
    ext: &dyn FeatureExtractor<T>,
    adversary: Option<&Adversary<'_, T>>,
) -> LossTerms {
    let (loss_u, mut terms) = loss_u_graph(g, iterates, image, clean, w, ext, adversary);
    let (loss_v, v_terms) = loss_v_graph(g, stages, t_gt, clean, w.pixel_norm);
    terms.extend(v_terms);
    LossTerms {
        total: g.add(loss_u, loss_v),
        loss_u,
        loss_v,
        terms,
    }
}

/// Ordered scalar losses of one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    entries: Vec<(String, f64)>,
}

impl LossReport {
    /// Builds a report whose total is `loss_u + loss_v`.
    pub fn new(loss_u: f64, loss_v: f64, terms: Vec<(String, f64)>, disc_loss: Option<f64>) -> Self {
        let mut entries = vec![
            ("total".to_string(), loss_u + loss_v),
            ("loss_u".to_string(), loss_u),
            ("loss_v".to_string(), loss_v),
        ];
        entries.extend(terms);
        if let Some(d) = disc_loss {
            entries.push(("disc_loss".to_string(), d));
        }
        Self { entries }
    }

    pub fn from_graph<T: Scalar>(g: &Graph<T>, terms: &LossTerms, disc_loss: Option<f64>) -> Self {
        let v = |x: Var| g.item(x).to_f64_lossy();
        Self::new(
            v(terms.loss_u),
            v(terms.loss_v),
            terms.terms.iter().map(|(n, x)| (n.clone(), v(*x))).collect(),
            disc_loss,
        )
    }

    pub fn total(&self) -> f64 {
        self.entries[0].1
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// First non-finite entry, constituent terms before the sums they feed.
    pub fn first_non_finite(&self) -> Option<(&str, f64)> {
        self.entries[3..]
            .iter()
            .chain(&self.entries[..3])
            .find(|(_, v)| !v.is_finite())
            .map(|(n, v)| (n.as_str(), *v))
    }

    pub fn csv_header(&self) -> String {
        let mut s = String::from("step");
        for (n, _) in &self.entries {
            s.push(',');
            s.push_str(n);
        }
        s
    }

    pub fn csv_row(&self, step: u64) -> String {
        let mut s = step.to_string();
        for (_, v) in &self.entries {
            let _ = write!(s, ",{v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn filled(v: f64) -> Tensor<f64> {
        Tensor::full(Shape::new(1, 3, 8, 8), v)
    }

    #[test]
    fn pixel_loss_hand_values() {
        assert_eq!(pixel_loss(&filled(1.0), &filled(0.0), PixelNorm::AbsoluteError).unwrap(), 1.0);
        assert_eq!(pixel_loss(&filled(0.5), &filled(0.0), PixelNorm::SquaredError).unwrap(), 0.25);
        assert_eq!(pixel_loss(&filled(0.3), &filled(0.3), PixelNorm::AbsoluteError).unwrap(), 0.0);
        let small = Tensor::<f64>::zeros(Shape::new(1, 3, 4, 4));
        assert!(matches!(
            pixel_loss(&filled(0.0), &small, PixelNorm::AbsoluteError),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn adversarial_hand_values_at_half() {
        // a zero-weight output layer makes D ≡ 0.5 everywhere
        let mut d = Discriminator::<f64>::new(1);
        d.params_mut().zero_prefix("d.out");
        let (gen, disc) = adversarial_losses(&filled(0.9), &filled(0.1), &d).unwrap();
        assert!((gen - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((disc - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn near_perfect_discriminator_loss_vanishes() {
        let g = Graph::<f64>::new();
        let real = g.constant(Tensor::full(Shape::new(1, 1, 2, 2), 1.0));
        let fake = g.constant(Tensor::full(Shape::new(1, 1, 2, 2), 0.0));
        let l = g.add(neg_log_mean(&g, real), neg_log_complement_mean(&g, fake));
        assert!(g.item(l) < 1e-5);
        let probe = |p: f64| {
            let g = Graph::<f64>::new();
            let v = neg_log_mean(&g, g.constant(Tensor::scalar(p)));
            g.item(v)
        };
        assert!(probe(0.3) > probe(0.6));
    }

    #[test]
    fn perceptual_is_zero_on_identical_and_non_negative() {
        let ext = RandomConvExtractor::<f64>::default();
        let a = Tensor::from_fn(Shape::new(1, 3, 8, 8), |_, c, y, x| ((c + 2 * y + 3 * x) % 7) as f64 / 7.0);
        assert_eq!(perceptual_loss(&a, &a, &ext).unwrap(), 0.0);
        assert!(perceptual_loss(&a, &filled(0.5), &ext).unwrap() > 0.0);
    }

    #[test]
    fn report_orders_and_serialises() {
        let r = LossReport::new(
            0.5,
            0.25,
            vec![("u1_pixel".into(), 0.5), ("v_j_prelim".into(), 0.25)],
            Some(1.0),
        );
        assert_eq!(r.total(), 0.75);
        assert_eq!(r.csv_header(), "step,total,loss_u,loss_v,u1_pixel,v_j_prelim,disc_loss");
        assert_eq!(r.csv_row(3), "3,0.75,0.5,0.25,0.5,0.25,1");
        assert!(r.first_non_finite().is_none());
        let bad = LossReport::new(f64::NAN, 0.0, vec![], None);
        assert_eq!(bad.first_non_finite().unwrap().0, "total");
    }

    #[test]
    fn weight_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let mut w = LossWeights::default();
        w.alphas = [0.0; 5];
        assert!(w.validate().is_err());
        w.alphas = [1.0, -0.1, 0.0, 0.0, 0.0];
        assert!(w.validate().is_err());
    }
}
