//! Atmospheric scattering model `I = J·t + A·(1 − t)` and its residual form.
//!
//! With the residual `R = J − I`, the scattering model rearranges to
//! `t = 1 − R / (J − A)`, which lets a transmission map be read off a
//! predicted residual and a predicted clean image. Every operation exists in
//! two forms: a validated function on the domain types, and a graph form in
//! [`ops`] that the networks differentiate through. The validated form runs
//! the graph form, so both share one implementation.

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Floor applied to every transmission estimate.
pub const DEFAULT_T_MIN: f64 = 0.05;
/// Smallest magnitude allowed for `J − A` in the residual-to-transmission quotient.
pub const DEFAULT_EPS_A: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhysicsConstants {
    pub t_min: f64,
    pub eps_a: f64,
}

impl Default for PhysicsConstants {
    fn default() -> Self {
        Self {
            t_min: DEFAULT_T_MIN,
            eps_a: DEFAULT_EPS_A,
        }
    }
}

impl PhysicsConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "t_min must lie in (0, 1), got {}",
                self.t_min
            )));
        }
        if !(self.eps_a > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "eps_a must be positive, got {}",
                self.eps_a
            )));
        }
        Ok(())
    }
}

fn require_finite<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn require_channels<T: Scalar>(t: &Tensor<T>, c: usize, what: &str) -> Result<()> {
    if t.shape().c != c {
        return Err(Error::Shape(format!(
            "{what} must have {c} channel(s), got shape {}",
            t.shape()
        )));
    }
    Ok(())
}

/// RGB raster(s), `[n, 3, h, w]`, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T: Scalar = f32>(Tensor<T>);

impl<T: Scalar> Image<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        require_channels(&t, 3, "image")?;
        require_finite(&t, "image")?;
        Ok(Self(t))
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self(Tensor::full(Shape::new(1, 3, height, width), value))
    }

    pub fn from_fn(height: usize, width: usize, f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        Self(Tensor::from_fn(Shape::new(1, 3, height, width), f))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape().h
    }

    pub fn width(&self) -> usize {
        self.0.shape().w
    }

    pub fn shape(&self) -> Shape {
        self.0.shape()
    }
}

/// Fraction of scene radiance that reaches the camera, `[n, 1, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmissionMap<T: Scalar = f32>(Tensor<T>);

impl<T: Scalar> TransmissionMap<T> {
    /// Accepts finite values in `(0, 1]`; the operations check the tighter `t_min` floor.
    pub fn new(t: Tensor<T>) -> Result<Self> {
        require_channels(&t, 1, "transmission map")?;
        require_finite(&t, "transmission map")?;
        if t.data().iter().any(|&v| v <= T::zero() || v > T::one()) {
            return Err(Error::InvalidArgument(
                "transmission values must lie in (0, 1]".into(),
            ));
        }
        Ok(Self(t))
    }

    pub fn filled(height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(Tensor::full(Shape::new(1, 1, height, width), value))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn min_value(&self) -> T {
        self.0.min_value()
    }
}

/// Homogeneous global atmospheric light, one RGB triple per batch item: `[n, 3, 1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AtmosphericLight<T: Scalar = f32>(Tensor<T>);

impl<T: Scalar> AtmosphericLight<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        require_channels(&t, 3, "atmospheric light")?;
        if t.shape().h != 1 || t.shape().w != 1 {
            return Err(Error::Shape(format!(
                "atmospheric light is one triple per item, got {}",
                t.shape()
            )));
        }
        require_finite(&t, "atmospheric light")?;
        if t.data().iter().any(|&v| v < T::zero() || v > T::one()) {
            return Err(Error::InvalidArgument(
                "atmospheric light must lie in [0, 1]".into(),
            ));
        }
        Ok(Self(t))
    }

    pub fn rgb(rgb: [T; 3]) -> Result<Self> {
        Self::new(Tensor::from_vec(Shape::new(1, 3, 1, 1), rgb.to_vec())?)
    }

    pub fn gray(value: T) -> Result<Self> {
        Self::rgb([value; 3])
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn values(&self) -> &[T] {
        self.0.data()
    }
}

/// Signed deviation `R = J − I`, `[n, 3, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualMap<T: Scalar = f32>(Tensor<T>);

impl<T: Scalar> ResidualMap<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        require_channels(&t, 3, "residual map")?;
        require_finite(&t, "residual map")?;
        Ok(Self(t))
    }

    pub fn zeros(n: usize, height: usize, width: usize) -> Self {
        Self(Tensor::zeros(Shape::new(n, 3, height, width)))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }
}

/// Inputs for synthesising homogeneous haze over a depth map.
#[derive(Clone, Debug)]
pub struct HazeSynthesisParams<T: Scalar = f32> {
    pub beta: f64,
    pub depth: Tensor<T>,
    pub airlight: AtmosphericLight<T>,
}

impl<T: Scalar> HazeSynthesisParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "attenuation coefficient must be positive, got {}",
                self.beta
            )));
        }
        require_finite(&self.depth, "depth")?;
        if self.depth.data().iter().any(|&d| d < T::zero()) {
            return Err(Error::InvalidArgument("depth must be non-negative".into()));
        }
        Ok(())
    }
}

/// Graph forms of the scattering-model operations.
pub mod ops {
    use super::PhysicsConstants;
    use crate::autograd::{Graph, Var};
    use crate::tensor::Scalar;

    /// `clamp(J·t + A·(1 − t), 0, 1)`.
    pub fn synthesize<T: Scalar>(g: &Graph<T>, clean: Var, t: Var, airlight: Var) -> Var {
        let direct = g.mul(clean, t);
        let scattered = g.mul(airlight, g.one_minus(t));
        g.clamp(g.add(direct, scattered), T::zero(), T::one())
    }

    /// Unclamped `(I − A·(1 − t)) / t`.
    pub fn invert_raw<T: Scalar>(g: &Graph<T>, hazy: Var, t: Var, airlight: Var) -> Var {
        let scattered = g.mul(airlight, g.one_minus(t));
        g.div(g.sub(hazy, scattered), t)
    }

    /// `clamp((I − A·(1 − t)) / t, 0, 1)`.
    pub fn invert<T: Scalar>(g: &Graph<T>, hazy: Var, t: Var, airlight: Var) -> Var {
        g.clamp(invert_raw(g, hazy, t, airlight), T::zero(), T::one())
    }

    /// `R = J − I`.
    pub fn residual<T: Scalar>(g: &Graph<T>, hazy: Var, clean: Var) -> Var {
        g.sub(clean, hazy)
    }

    /// `t = clamp(1 − mean_c(R / guard(J − A)), t_min, 1)`.
    pub fn transmission_from_residual<T: Scalar>(
        g: &Graph<T>,
        residual: Var,
        clean: Var,
        airlight: Var,
        k: &PhysicsConstants,
    ) -> Var {
        let denom = g.guard_magnitude(g.sub(clean, airlight), T::from_f64_lossy(k.eps_a));
        let quotient = g.mean_channels(g.div(residual, denom));
        g.clamp(g.one_minus(quotient), T::from_f64_lossy(k.t_min), T::one())
    }

    /// `clamp(exp(−beta·depth), t_min, 1)`.
    pub fn transmission_from_depth<T: Scalar>(g: &Graph<T>, depth: Var, beta: T, k: &PhysicsConstants) -> Var {
        g.clamp(g.exp(g.scale(depth, -beta)), T::from_f64_lossy(k.t_min), T::one())
    }
}

fn same_spatial(a: Shape, b: Shape, what: &str) -> Result<()> {
    if a.n != b.n || a.h != b.h || a.w != b.w {
        return Err(Error::Shape(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

fn airlight_fits(a: &AtmosphericLight<impl Scalar>, s: Shape) -> Result<()> {
    let n = a.tensor().shape().n;
    if n != 1 && n != s.n {
        return Err(Error::Shape(format!(
            "atmospheric light batch {n} does not match image batch {}",
            s.n
        )));
    }
    Ok(())
}

/// Hazy image from a clean image, transmission map and atmospheric light.
pub fn synthesize_haze<T: Scalar>(
    clean: &Image<T>,
    t: &TransmissionMap<T>,
    airlight: &AtmosphericLight<T>,
) -> Result<Image<T>> {
    same_spatial(clean.shape(), t.tensor().shape(), "synthesize_haze")?;
    airlight_fits(airlight, clean.shape())?;
    let g = Graph::new();
    let out = ops::synthesize(
        &g,
        g.constant(clean.tensor().clone()),
        g.constant(t.tensor().clone()),
        g.constant(airlight.tensor().clone()),
    );
    Image::new((*g.value(out)).clone())
}

/// Clean image recovered by inverting the scattering model.
///
/// Fails if any transmission value is below `t_min`; callers clamp first.
pub fn invert_scattering<T: Scalar>(
    hazy: &Image<T>,
    t: &TransmissionMap<T>,
    airlight: &AtmosphericLight<T>,
    k: &PhysicsConstants,
) -> Result<Image<T>> {
    same_spatial(hazy.shape(), t.tensor().shape(), "invert_scattering")?;
    airlight_fits(airlight, hazy.shape())?;
    let floor = T::from_f64_lossy(k.t_min);
    if t.min_value() < floor {
        return Err(Error::InvalidArgument(format!(
            "transmission {} is below t_min = {}",
            t.min_value(),
            k.t_min
        )));
    }
    let g = Graph::new();
    let out = ops::invert(
        &g,
        g.constant(hazy.tensor().clone()),
        g.constant(t.tensor().clone()),
        g.constant(airlight.tensor().clone()),
    );
    Image::new((*g.value(out)).clone())
}

/// `R = J − I`.
pub fn residual_of<T: Scalar>(hazy: &Image<T>, clean: &Image<T>) -> Result<ResidualMap<T>> {
    if hazy.shape() != clean.shape() {
        return Err(Error::Shape(format!(
            "residual_of: {} vs {}",
            hazy.shape(),
            clean.shape()
        )));
    }
    let g = Graph::new();
    let out = ops::residual(
        &g,
        g.constant(hazy.tensor().clone()),
        g.constant(clean.tensor().clone()),
    );
    ResidualMap::new((*g.value(out)).clone())
}

/// Transmission implied by a residual, a clean image and the atmospheric light.
pub fn transmission_from_residual<T: Scalar>(
    residual: &ResidualMap<T>,
    clean: &Image<T>,
    airlight: &AtmosphericLight<T>,
    k: &PhysicsConstants,
) -> Result<TransmissionMap<T>> {
    if residual.tensor().shape() != clean.shape() {
        return Err(Error::Shape(format!(
            "transmission_from_residual: {} vs {}",
            residual.tensor().shape(),
            clean.shape()
        )));
    }
    airlight_fits(airlight, clean.shape())?;
    let g = Graph::new();
    let out = ops::transmission_from_residual(
        &g,
        g.constant(residual.tensor().clone()),
        g.constant(clean.tensor().clone()),
        g.constant(airlight.tensor().clone()),
        k,
    );
    TransmissionMap::new((*g.value(out)).clone())
}

/// Beer–Lambert transmission `exp(−beta·depth)`, clamped to `[t_min, 1]`.
pub fn transmission_from_depth<T: Scalar>(
    depth: &Tensor<T>,
    beta: f64,
    k: &PhysicsConstants,
) -> Result<TransmissionMap<T>> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "attenuation coefficient must be positive, got {beta}"
        )));
    }
    require_channels(depth, 1, "depth")?;
    require_finite(depth, "depth")?;
    if depth.data().iter().any(|&d| d < T::zero()) {
        return Err(Error::InvalidArgument("depth must be non-negative".into()));
    }
    let g = Graph::new();
    let t = ops::transmission_from_depth(&g, g.constant(depth.clone()), T::from_f64_lossy(beta), k);
    TransmissionMap::new((*g.value(t)).clone())
}

/// Hazy image for a full set of synthesis parameters; also returns the transmission used.
pub fn synthesize_from_depth<T: Scalar>(
    clean: &Image<T>,
    params: &HazeSynthesisParams<T>,
    k: &PhysicsConstants,
) -> Result<(Image<T>, TransmissionMap<T>)> {
    params.validate()?;
    let t = transmission_from_depth(&params.depth, params.beta, k)?;
    let hazy = synthesize_haze(clean, &t, &params.airlight)?;
    Ok((hazy, t))
}
