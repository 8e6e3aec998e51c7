//! Dense 4-D tensors in NCHW layout.
//!
//! Every array in the crate is four dimensional: a batch of `n` planes with
//! `c` channels of `h × w` samples. Scalars are `[1, 1, 1, 1]`, a global
//! atmospheric light triple is `[n, 3, 1, 1]`, a transmission map is
//! `[n, 1, h, w]`.

use std::fmt;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating point element type usable by the engine.
///
/// Training runs in `f32`; gradient verification runs the same graphs in
/// `f64` so central differences are not dominated by rounding.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    /// `c = a · b + beta · c` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(
        rs >= 0 && cs >= 0 && (last as usize) < len,
        "gemm operand out of bounds"
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                // SAFETY: every operand extent was bounds-checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Extent of an NCHW tensor.
#[derive(Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Self::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Element-wise broadcast of two shapes; each axis must match or be 1.
    pub fn broadcast(&self, other: &Shape) -> Option<Shape> {
        let a = self.dims();
        let b = other.dims();
        let mut out = [0; 4];
        for i in 0..4 {
            out[i] = match (a[i], b[i]) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => return None,
            };
        }
        Some(Shape::new(out[0], out[1], out[2], out[3]))
    }

    pub(crate) fn strides(&self) -> [usize; 4] {
        [self.c * self.h * self.w, self.h * self.w, self.w, 1]
    }

    /// Strides for reading `self` as if it had shape `target` (0 on broadcast axes).
    pub(crate) fn broadcast_strides(&self, target: &Shape) -> [usize; 4] {
        let s = self.strides();
        let d = self.dims();
        let t = target.dims();
        let mut out = [0; 4];
        for i in 0..4 {
            out[i] = if d[i] == t[i] { s[i] } else { 0 };
        }
        out
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(Error::Shape(format!(
                "tensor of shape {shape} needs {} elements, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        let s = self.shape;
        self.data[((n * s.c + c) * s.h + y) * s.w + x]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let s = self.shape;
        self.data[((n * s.c + c) * s.h + y) * s.w + x] = v;
    }

    /// Single scalar value of a `[1,1,1,1]` tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(other.shape)?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn expect_shape(&self, shape: Shape) -> Result<()> {
        if self.shape != shape {
            return Err(Error::Shape(format!(
                "expected shape {shape}, got {}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.data.len()).unwrap()
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    /// Items `start..start + len` along the batch axis.
    pub fn batch_slice(&self, start: usize, len: usize) -> Self {
        let per = self.shape.c * self.shape.plane();
        let shape = Shape::new(len, self.shape.c, self.shape.h, self.shape.w);
        Self {
            shape,
            data: self.data[start * per..(start + len) * per].to_vec(),
        }
    }

    /// Stack single tensors along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut n = 0;
        for t in items {
            if t.shape.c != s.c || t.shape.h != s.h || t.shape.w != s.w {
                return Err(Error::Shape(format!(
                    "cannot stack {} with {}",
                    t.shape, s
                )));
            }
            n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            shape: Shape::new(n, s.c, s.h, s.w),
            data,
        })
    }

    /// Spatial window `[y0, y0+h) × [x0, x0+w)` of every plane.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        if y0 + h > s.h || x0 + w > s.w {
            return Err(Error::Shape(format!(
                "crop {h}x{w} at ({y0},{x0}) exceeds {s}"
            )));
        }
        let mut data = Vec::with_capacity(s.n * s.c * h * w);
        for plane in self.data.chunks_exact(s.plane()) {
            for y in y0..y0 + h {
                let row = y * s.w;
                data.extend_from_slice(&plane[row + x0..row + x0 + w]);
            }
        }
        Ok(Self {
            shape: Shape::new(s.n, s.c, h, w),
            data,
        })
    }

    pub fn flip_horizontal(&self) -> Self {
        let s = self.shape;
        let mut out = self.clone();
        for (dst, src) in out
            .data
            .chunks_exact_mut(s.w)
            .zip(self.data.chunks_exact(s.w))
        {
            for (d, v) in dst.iter_mut().zip(src.iter().rev()) {
                *d = *v;
            }
        }
        out
    }

    /// Edge-replicating pad on the bottom and right borders.
    pub fn pad_replicate(&self, bottom: usize, right: usize) -> Self {
        let s = self.shape;
        let (h, w) = (s.h + bottom, s.w + right);
        let mut data = Vec::with_capacity(s.n * s.c * h * w);
        for plane in self.data.chunks_exact(s.plane()) {
            for y in 0..h {
                let row = &plane[y.min(s.h - 1) * s.w..][..s.w];
                data.extend_from_slice(row);
                let last = row[s.w - 1];
                data.extend(std::iter::repeat_n(last, right));
            }
        }
        Self {
            shape: Shape::new(s.n, s.c, h, w),
            data,
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("head", &preview)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        let a = Shape::new(2, 3, 4, 4);
        assert_eq!(a.broadcast(&Shape::new(2, 1, 4, 4)), Some(a));
        assert_eq!(a.broadcast(&Shape::new(1, 3, 1, 1)), Some(a));
        assert_eq!(a.broadcast(&Shape::new(2, 2, 4, 4)), None);
    }

    #[test]
    fn gemm_matches_naive_product() {
        // 2x3 · 3x2
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, &a, 3, 1, &b, 2, 1, 0.0, &mut c, 2, 1);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
        // transposed view of a: (3x2)^T
        let mut ct = [0.0f64; 4];
        f64::gemm(2, 3, 2, &a, 1, 2, &b, 2, 1, 0.0, &mut ct, 2, 1);
        // a^T rows: [1,3,5],[2,4,6] viewed from a stored as 3x2 = [[1,2],[3,4],[5,6]]
        assert_eq!(ct, [1.0 * 7.0 + 3.0 * 9.0 + 5.0 * 11.0, 1.0 * 8.0 + 3.0 * 10.0 + 5.0 * 12.0, 2.0 * 7.0 + 4.0 * 9.0 + 6.0 * 11.0, 2.0 * 8.0 + 4.0 * 10.0 + 6.0 * 12.0]);
    }

    #[test]
    fn crop_and_pad() {
        let t = Tensor::<f32>::from_fn(Shape::new(1, 1, 3, 3), |_, _, y, x| (y * 3 + x) as f32);
        let c = t.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.data(), &[4.0, 5.0, 7.0, 8.0]);
        let p = c.pad_replicate(1, 1);
        assert_eq!(p.shape(), Shape::new(1, 1, 3, 3));
        assert_eq!(p.data(), &[4.0, 5.0, 5.0, 7.0, 8.0, 8.0, 7.0, 8.0, 8.0]);
        assert!(t.crop(2, 2, 2, 2).is_err());
    }

    #[test]
    fn flip_reverses_rows() {
        let t = Tensor::<f32>::from_fn(Shape::new(1, 2, 1, 3), |_, c, _, x| (c * 10 + x) as f32);
        assert_eq!(t.flip_horizontal().data(), &[2.0, 1.0, 0.0, 12.0, 11.0, 10.0]);
    }
}
