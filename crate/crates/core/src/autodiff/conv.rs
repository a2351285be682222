//! Convolution kernels over `[C, T, H, W]` buffers.
//!
//! Everything is expressed through one 3-D geometry; 2-D convolutions use a
//! temporal extent of 1. Transposed convolution is the data-gradient of the
//! ordinary convolution, so the same three kernels serve both.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    /// Geometry for a forward cross-correlation of `input_shape`
    /// `[C_in, T, H, W]` with `kernel_shape` `[C_out, C_in, kT, kH, kW]`.
    pub fn forward(
        op: &'static str,
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        if input_shape.len() != 4 || kernel_shape.len() != 5 || input_shape[0] != kernel_shape[1] {
            return Err(Error::shape(op, input_shape, kernel_shape));
        }
        if stride.contains(&0) {
            return Err(Error::invalid(format!("{op}: stride must be >= 1")));
        }
        let mut output = [0; 3];
        for d in 0..3 {
            let padded = input_shape[d + 1] + 2 * padding[d];
            if kernel_shape[d + 2] > padded {
                return Err(Error::shape(op, input_shape, kernel_shape));
            }
            output[d] = (padded - kernel_shape[d + 2]) / stride[d] + 1;
        }
        Ok(Self {
            c_in: input_shape[0],
            c_out: kernel_shape[0],
            input: [input_shape[1], input_shape[2], input_shape[3]],
            kernel: [kernel_shape[2], kernel_shape[3], kernel_shape[4]],
            stride,
            padding,
            output,
        })
    }

    /// Geometry of the convolution whose data-gradient is the transposed
    /// convolution of `input_shape` `[C, T, H, W]` by `kernel_shape`
    /// `[C, C_out, kT, kH, kW]`. The returned geometry's `input` is the
    /// transposed convolution's output.
    pub fn transposed(
        op: &'static str,
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        if input_shape.len() != 4 || kernel_shape.len() != 5 || input_shape[0] != kernel_shape[0] {
            return Err(Error::shape(op, input_shape, kernel_shape));
        }
        if stride.contains(&0) {
            return Err(Error::invalid(format!("{op}: stride must be >= 1")));
        }
        let mut full = [0; 3];
        for d in 0..3 {
            let span = (input_shape[d + 1] - 1) * stride[d] + kernel_shape[d + 2];
            if span <= 2 * padding[d] {
                return Err(Error::shape(op, input_shape, kernel_shape));
            }
            full[d] = span - 2 * padding[d];
        }
        let geom = Self::forward(
            op,
            &[kernel_shape[1], full[0], full[1], full[2]],
            kernel_shape,
            stride,
            padding,
        )?;
        debug_assert_eq!(geom.output, [input_shape[1], input_shape[2], input_shape[3]]);
        Ok(geom)
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.c_out, self.output[0], self.output[1], self.output[2]]
    }

    fn rows(&self) -> usize {
        self.c_in * self.kernel.iter().product::<usize>()
    }

    fn positions(&self) -> usize {
        self.output.iter().product()
    }
}

/// Output indices `o` along one axis for which `o * stride + tap - pad`
/// lands inside `[0, len)`.
fn valid_range(len: usize, out: usize, stride: usize, tap: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    let hi = if len + pad > tap {
        ((len - 1 + pad - tap) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unfolds `x` into a `[C_in * kT * kH * kW, positions]` matrix.
fn im2col<T: Scalar>(g: &ConvGeom, x: &[T]) -> Vec<T> {
    let [it, ih, iw] = g.input;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let [ot, oh, ow] = g.output;
    let p = g.positions();
    let mut cols = vec![T::zero(); g.rows() * p];
    let mut r = 0;
    for ci in 0..g.c_in {
        for dt in 0..kt {
            let (t_lo, t_hi) = valid_range(it, ot, st, dt, pt);
            for dh in 0..kh {
                let (h_lo, h_hi) = valid_range(ih, oh, sh, dh, ph);
                for dw in 0..kw {
                    let (w_lo, w_hi) = valid_range(iw, ow, sw, dw, pw);
                    let row = &mut cols[r * p..(r + 1) * p];
                    for o_t in t_lo..t_hi {
                        let i_t = o_t * st + dt - pt;
                        for o_h in h_lo..h_hi {
                            let i_h = o_h * sh + dh - ph;
                            let src = &x[((ci * it + i_t) * ih + i_h) * iw..][..iw];
                            let dst = &mut row[(o_t * oh + o_h) * ow..][..ow];
                            for o_w in w_lo..w_hi {
                                dst[o_w] = src[o_w * sw + dw - pw];
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
    cols
}

/// Scatter-adds a column matrix back onto an input-shaped buffer.
fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], x: &mut [T]) {
    let [it, ih, iw] = g.input;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let [ot, oh, ow] = g.output;
    let p = g.positions();
    let mut r = 0;
    for ci in 0..g.c_in {
        for dt in 0..kt {
            let (t_lo, t_hi) = valid_range(it, ot, st, dt, pt);
            for dh in 0..kh {
                let (h_lo, h_hi) = valid_range(ih, oh, sh, dh, ph);
                for dw in 0..kw {
                    let (w_lo, w_hi) = valid_range(iw, ow, sw, dw, pw);
                    let row = &cols[r * p..(r + 1) * p];
                    for o_t in t_lo..t_hi {
                        let i_t = o_t * st + dt - pt;
                        for o_h in h_lo..h_hi {
                            let i_h = o_h * sh + dh - ph;
                            let dst = &mut x[((ci * it + i_t) * ih + i_h) * iw..][..iw];
                            let src = &row[(o_t * oh + o_h) * ow..][..ow];
                            for o_w in w_lo..w_hi {
                                dst[o_w * sw + dw - pw] += src[o_w];
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

/// `c[m, n] += a[m, k] * b[k, n]`
fn gemm<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for (kk, &w) in a[i * k..(i + 1) * k].iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += w * bv;
            }
        }
    }
}

/// `c[k, n] += a[m, k]^T * b[m, n]`
fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &w) in a[i * k..(i + 1) * k].iter().enumerate() {
            let c_row = &mut c[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += w * bv;
            }
        }
    }
}

fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Cross-correlation `y = conv(x, k)`; `y` is output-shaped and accumulated into.
pub(crate) fn forward<T: Scalar>(g: &ConvGeom, x: &[T], k: &[T], y: &mut [T]) {
    let cols = im2col(g, x);
    gemm(k, &cols, y, g.c_out, g.rows(), g.positions());
}

/// Gradient of the convolution with respect to its input, accumulated into `gx`.
pub(crate) fn backward_data<T: Scalar>(g: &ConvGeom, gy: &[T], k: &[T], gx: &mut [T]) {
    let mut gcols = vec![T::zero(); g.rows() * g.positions()];
    gemm_tn(k, gy, &mut gcols, g.c_out, g.rows(), g.positions());
    col2im(g, &gcols, gx);
}

/// Gradient of the convolution with respect to its kernel, accumulated into `gk`.
pub(crate) fn backward_kernel<T: Scalar>(g: &ConvGeom, x: &[T], gy: &[T], gk: &mut [T]) {
    let cols_t = transpose(&im2col(g, x), g.rows(), g.positions());
    gemm(gy, &cols_t, gk, g.c_out, g.positions(), g.rows());
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop reference, independent of im2col.
    fn naive(g: &ConvGeom, x: &[f64], k: &[f64]) -> Vec<f64> {
        let [it, ih, iw] = g.input;
        let [kt, kh, kw] = g.kernel;
        let [ot, oh, ow] = g.output;
        let mut y = vec![0.0; g.c_out * ot * oh * ow];
        for co in 0..g.c_out {
            for a in 0..ot {
                for b in 0..oh {
                    for c in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..g.c_in {
                            for dt in 0..kt {
                                for dh in 0..kh {
                                    for dw in 0..kw {
                                        let t = (a * g.stride[0] + dt) as isize - g.padding[0] as isize;
                                        let h = (b * g.stride[1] + dh) as isize - g.padding[1] as isize;
                                        let w = (c * g.stride[2] + dw) as isize - g.padding[2] as isize;
                                        if t < 0 || h < 0 || w < 0 || t >= it as isize || h >= ih as isize || w >= iw as isize {
                                            continue;
                                        }
                                        let xi = ((ci * it + t as usize) * ih + h as usize) * iw + w as usize;
                                        let ki = (((co * g.c_in + ci) * kt + dt) * kh + dh) * kw + dw;
                                        acc += x[xi] * k[ki];
                                    }
                                }
                            }
                        }
                        y[((co * ot + a) * oh + b) * ow + c] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn matches_direct_loops_with_stride_and_padding() {
        let g = ConvGeom::forward("t", &[2, 5, 7, 6], &[3, 2, 3, 3, 2], [1, 2, 3], [1, 1, 0]).unwrap();
        let x: Vec<f64> = (0..2 * 5 * 7 * 6).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let k: Vec<f64> = (0..3 * 2 * 3 * 3 * 2).map(|i| ((i * 17) % 7) as f64 - 3.0).collect();
        let mut y = vec![0.0; g.output_shape().iter().product()];
        forward(&g, &x, &k, &mut y);
        assert_eq!(y, naive(&g, &x, &k));
    }

    #[test]
    fn valid_range_edges() {
        // len 4, pad 1, tap 0, stride 1: outputs 1..=4 see inputs 0..=3.
        assert_eq!(valid_range(4, 4, 1, 0, 1), (1, 4));
        assert_eq!(valid_range(4, 4, 1, 2, 1), (0, 3));
        assert_eq!(valid_range(5, 3, 2, 0, 1), (1, 3));
    }
}
