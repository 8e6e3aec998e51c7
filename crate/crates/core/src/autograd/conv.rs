//! 2-D convolution kernels lowered to GEMM through `im2col`.

use crate::tensor::{Scalar, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    /// Rows of the lowered matrix.
    pub fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn output_shape(&self, n: usize) -> Shape {
        Shape::new(n, self.c_out, self.out_h(), self.out_w())
    }

    /// Valid output column range for kernel tap `k` along an axis of length `len`.
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= len-1
        let hi_incl = (len as isize - 1 - off).div_euclid(s);
        let lo = lo.min(out_len as isize);
        let hi = (hi_incl + 1).clamp(lo, out_len as isize);
        (lo as usize, hi as usize)
    }
}

fn im2col<T: Scalar>(g: &ConvGeometry, x: &[T], cols: &mut [T]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let p = ho * wo;
    let plane = g.h * g.w;
    for ci in 0..g.c_in {
        let src = &x[ci * plane..(ci + 1) * plane];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.h, ho);
            for kx in 0..g.kw {
                let (ox_lo, ox_hi) = g.valid_range(kx, g.w, wo);
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if oy < oy_lo || oy >= oy_hi {
                        drow.fill(T::zero());
                        continue;
                    }
                    let iy = oy * g.stride + ky - g.pad;
                    let srow = &src[iy * g.w..(iy + 1) * g.w];
                    drow[..ox_lo].fill(T::zero());
                    drow[ox_hi..].fill(T::zero());
                    if g.stride == 1 {
                        let ix0 = ox_lo + kx - g.pad;
                        drow[ox_lo..ox_hi].copy_from_slice(&srow[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            drow[ox] = srow[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &ConvGeometry, cols: &[T], dx: &mut [T]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let p = ho * wo;
    let plane = g.h * g.w;
    for ci in 0..g.c_in {
        let dst = &mut dx[ci * plane..(ci + 1) * plane];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.h, ho);
            for kx in 0..g.kw {
                let (ox_lo, ox_hi) = g.valid_range(kx, g.w, wo);
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let srow = &src[oy * wo..(oy + 1) * wo];
                    let drow = &mut dst[iy * g.w..(iy + 1) * g.w];
                    if g.stride == 1 {
                        let ix0 = ox_lo + kx - g.pad;
                        for (d, &v) in drow[ix0..ix0 + (ox_hi - ox_lo)]
                            .iter_mut()
                            .zip(&srow[ox_lo..ox_hi])
                        {
                            *d += v;
                        }
                    } else {
                        for ox in ox_lo..ox_hi {
                            drow[ox * g.stride + kx - g.pad] += srow[ox];
                        }
                    }
                }
            }
        }
    }
}

/// `y[n] = w · im2col(x[n]) + b` for every batch item.
pub fn forward<T: Scalar>(
    g: &ConvGeometry,
    batch: usize,
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    y: &mut [T],
) {
    let (k, p) = (g.patch(), g.out_plane());
    let in_item = g.c_in * g.h * g.w;
    let out_item = g.c_out * p;
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    for n in 0..batch {
        let xn = &x[n * in_item..(n + 1) * in_item];
        let yn = &mut y[n * out_item..(n + 1) * out_item];
        let lowered: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(g, xn, &mut cols);
            &cols
        };
        T::gemm(
            g.c_out, k, p, weight, k as isize, 1, lowered, p as isize, 1, T::zero(), yn,
            p as isize, 1,
        );
        if let Some(b) = bias {
            for (row, &bv) in yn.chunks_exact_mut(p).zip(b) {
                for v in row {
                    *v += bv;
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients and (optionally) writes the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn backward<T: Scalar>(
    g: &ConvGeometry,
    batch: usize,
    x: &[T],
    weight: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (k, p) = (g.patch(), g.out_plane());
    let in_item = g.c_in * g.h * g.w;
    let out_item = g.c_out * p;
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise || dw.is_none() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    let mut dcols = if dx.is_some() && !pointwise {
        vec![T::zero(); k * p]
    } else {
        Vec::new()
    };
    let mut dx = dx;
    let mut dw = dw;
    if let Some(db) = db {
        for n in 0..batch {
            let dyn_ = &dy[n * out_item..(n + 1) * out_item];
            for (acc, row) in db.iter_mut().zip(dyn_.chunks_exact(p)) {
                *acc += row.iter().copied().sum::<T>();
            }
        }
    }
    for n in 0..batch {
        let xn = &x[n * in_item..(n + 1) * in_item];
        let dyn_ = &dy[n * out_item..(n + 1) * out_item];
        if let Some(dw) = dw.as_deref_mut() {
            let lowered: &[T] = if pointwise {
                xn
            } else {
                im2col(g, xn, &mut cols);
                &cols
            };
            T::gemm(
                g.c_out, p, k, dyn_, p as isize, 1, lowered, 1, p as isize, T::one(), dw,
                k as isize, 1,
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxn = &mut dx[n * in_item..(n + 1) * in_item];
            if pointwise {
                T::gemm(
                    k, g.c_out, p, weight, 1, k as isize, dyn_, p as isize, 1, T::one(), dxn,
                    p as isize, 1,
                );
            } else {
                T::gemm(
                    k, g.c_out, p, weight, 1, k as isize, dyn_, p as isize, 1, T::zero(),
                    &mut dcols, p as isize, 1,
                );
                col2im_add(g, &dcols, dxn);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(g: &ConvGeometry, x: &[f64], w: &[f64]) -> Vec<f64> {
        let (ho, wo) = (g.out_h(), g.out_w());
        let mut y = vec![0.0; g.c_out * ho * wo];
        for co in 0..g.c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..g.c_in {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += x[(ci * g.h + iy as usize) * g.w + ix as usize]
                                    * w[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
                            }
                        }
                    }
                    y[(co * ho + oy) * wo + ox] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn lowered_conv_matches_direct_sum() {
        for &(stride, pad, h, w, k) in &[(1, 1, 5, 6, 3), (2, 1, 7, 6, 3), (1, 0, 4, 4, 1), (2, 0, 6, 5, 2)] {
            let g = ConvGeometry { c_in: 2, h, w, c_out: 3, kh: k, kw: k, stride, pad };
            let x: Vec<f64> = (0..2 * h * w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
            let wt: Vec<f64> = (0..3 * 2 * k * k).map(|i| ((i * 5) % 7) as f64 * 0.1 - 0.3).collect();
            let mut y = vec![0.0; g.c_out * g.out_plane()];
            forward(&g, 1, &x, &wt, None, &mut y);
            let want = naive(&g, &x, &wt);
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "stride {stride} pad {pad}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn input_gradient_is_adjoint_of_forward() {
        // <conv(x), dy> == <x, conv^T(dy)> for any x, dy.
        let g = ConvGeometry { c_in: 3, h: 6, w: 5, c_out: 4, kh: 3, kw: 3, stride: 2, pad: 1 };
        let x: Vec<f64> = (0..3 * 30).map(|i| ((i * 13) % 17) as f64 / 17.0 - 0.5).collect();
        let wt: Vec<f64> = (0..4 * 27).map(|i| ((i * 3) % 5) as f64 / 5.0 - 0.4).collect();
        let dy: Vec<f64> = (0..4 * g.out_plane()).map(|i| ((i * 11) % 7) as f64 / 7.0 - 0.5).collect();
        let mut y = vec![0.0; dy.len()];
        forward(&g, 1, &x, &wt, None, &mut y);
        let mut dx = vec![0.0; x.len()];
        backward(&g, 1, &x, &wt, &dy, Some(&mut dx), None, None);
        let lhs: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
