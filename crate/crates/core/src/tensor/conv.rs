//! 2-D convolution (im2col + GEMM) and the stride-2 2x2 transposed convolution.
//!
//! Convolution is cross-correlation: the kernel is not flipped.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::parallel;

/// Gradients of a convolution with respect to its three inputs.
#[derive(Debug, Clone)]
pub struct Conv2dGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Output extent of a convolution along one axis, or an error if the kernel
/// does not tile the padded input exactly.
pub fn conv2d_output_size(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be >= 1"));
    }
    let padded = len + 2 * pad;
    if k > padded {
        return Err(Error::invalid(
            "conv2d",
            format!("kernel {k} exceeds padded extent {padded}"),
        ));
    }
    if (padded - k) % stride != 0 {
        return Err(Error::invalid(
            "conv2d",
            format!("non-integral output size: ({padded} - {k}) / {stride} + 1"),
        ));
    }
    Ok((padded - k) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn geometry<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, Geometry)> {
    let (b, c_in, h, w) = input.dims4(op)?;
    let (c_out, wc_in, kh, kw) = weight.dims4(op)?;
    if wc_in != c_in {
        return Err(Error::shape(
            op,
            format!("weight with {c_in} input channels"),
            weight.shape(),
        ));
    }
    if kh != kw {
        return Err(Error::invalid(op, format!("square kernels only, got {kh}x{kw}")));
    }
    let ho = conv2d_output_size(h, kh, stride, pad)?;
    let wo = conv2d_output_size(w, kw, stride, pad)?;
    Ok((
        b,
        c_out,
        Geometry {
            c_in,
            h,
            w,
            k: kh,
            stride,
            pad,
            ho,
            wo,
        },
    ))
}

/// Unfold one `[C, H, W]` plane stack into `[C*k*k, Ho*Wo]` columns.
fn im2col<T: Scalar>(x: &[T], g: &Geometry, col: &mut [T]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let plane = g.h * g.w;
    let cols = g.col_cols();
    for c in 0..g.c_in {
        let src = &x[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.ho {
                    let iy = (oy * s + ki) as isize - p;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * s + kj) as isize - p;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold `[C*k*k, Ho*Wo]` columns back into a `[C, H, W]` gradient, summing
/// overlapping contributions.
fn col2im<T: Scalar>(col: &[T], g: &Geometry, dx: &mut [T]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let plane = g.h * g.w;
    let cols = g.col_cols();
    dx.iter_mut().for_each(|v| *v = T::zero());
    for c in 0..g.c_in {
        let dst = &mut dx[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.ho {
                    let iy = (oy * s + ki) as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * s + kj) as isize - p;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded strided cross-correlation.
///
/// `input` is `[B, Cin, H, W]`, `weight` is `[Cout, Cin, k, k]`, `bias` is
/// `[Cout]`; the result is `[B, Cout, H', W']` with
/// `H' = (H + 2*pad - k) / stride + 1`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (b, c_out, g) = geometry("conv2d_forward", input, weight, stride, pad)?;
    if bias.dims() != [c_out] {
        return Err(Error::shape("conv2d_forward", format!("bias [{c_out}]"), bias.shape()));
    }
    let in_per = g.c_in * g.h * g.w;
    let out_per = c_out * g.col_cols();
    let mut out = vec![T::zero(); b * out_per];
    let (wdata, bdata, xdata) = (weight.data(), bias.data(), input.data());
    parallel::for_each_chunk(&mut out, out_per, |bi, y| {
        let x = &xdata[bi * in_per..(bi + 1) * in_per];
        let n = g.col_cols();
        for (co, row) in y.chunks_mut(n).enumerate() {
            row.iter_mut().for_each(|v| *v = bdata[co]);
        }
        if g.is_pointwise() {
            T::gemm(c_out, g.c_in, n, T::one(), wdata, false, x, false, T::one(), y);
        } else {
            let mut col = vec![T::zero(); g.col_rows() * n];
            im2col(x, &g, &mut col);
            T::gemm(c_out, g.col_rows(), n, T::one(), wdata, false, &col, false, T::one(), y);
        }
    });
    Tensor::new(vec![b, c_out, g.ho, g.wo], out)
}

/// Gradients of [`conv2d_forward`] given the upstream gradient and the saved
/// forward input.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Conv2dGrads<T>> {
    let (b, c_out, g) = geometry("conv2d_backward", input, weight, stride, pad)?;
    let expected = [b, c_out, g.ho, g.wo];
    if grad_out.dims() != expected {
        return Err(Error::shape("conv2d_backward", format!("{expected:?}"), grad_out.shape()));
    }
    let n = g.col_cols();
    let rows = g.col_rows();
    let in_per = g.c_in * g.h * g.w;
    let out_per = c_out * n;
    let (xdata, wdata, gdata) = (input.data(), weight.data(), grad_out.data());

    let mut grad_bias = vec![T::zero(); c_out];
    for bi in 0..b {
        for (co, gb) in grad_bias.iter_mut().enumerate() {
            let start = bi * out_per + co * n;
            *gb += gdata[start..start + n].iter().copied().sum();
        }
    }

    // Weight gradient accumulates over the batch in a fixed order.
    let mut grad_weight = vec![T::zero(); c_out * rows];
    let mut col = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * n }];
    for bi in 0..b {
        let x = &xdata[bi * in_per..(bi + 1) * in_per];
        let dy = &gdata[bi * out_per..(bi + 1) * out_per];
        let cols: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut col);
            &col
        };
        T::gemm(c_out, n, rows, T::one(), dy, false, cols, true, T::one(), &mut grad_weight);
    }

    let mut grad_input = vec![T::zero(); b * in_per];
    parallel::for_each_chunk(&mut grad_input, in_per, |bi, dx| {
        let dy = &gdata[bi * out_per..(bi + 1) * out_per];
        if g.is_pointwise() {
            T::gemm(g.c_in, c_out, n, T::one(), wdata, true, dy, false, T::zero(), dx);
        } else {
            let mut dcol = vec![T::zero(); rows * n];
            T::gemm(rows, c_out, n, T::one(), wdata, true, dy, false, T::zero(), &mut dcol);
            col2im(&dcol, &g, dx);
        }
    });

    Ok(Conv2dGrads {
        input: Tensor::new(input.dims().to_vec(), grad_input)?,
        weight: Tensor::new(weight.dims().to_vec(), grad_weight)?,
        bias: Tensor::new(vec![c_out], grad_bias)?,
    })
}

fn upconv_dims<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (b, c_in, h, w) = input.dims4(op)?;
    let (wc_in, c_out, kh, kw) = weight.dims4(op)?;
    if wc_in != c_in || kh != 2 || kw != 2 {
        return Err(Error::shape(
            op,
            format!("weight [{c_in}, Cout, 2, 2]"),
            weight.shape(),
        ));
    }
    Ok((b, c_in, c_out, h, w))
}

/// Stride-2 2x2 transposed convolution: `[B, Cin, H, W]` to `[B, Cout, 2H, 2W]`
/// with weight `[Cin, Cout, 2, 2]`. It is the adjoint of a stride-2 2x2
/// convolution that uses the same weight array as `[Cout', Cin', 2, 2]`.
pub fn transposed_conv2x2_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let op = "transposed_conv2x2";
    let (b, c_in, c_out, h, w) = upconv_dims(op, input, weight)?;
    if let Some(bias) = bias {
        if bias.dims() != [c_out] {
            return Err(Error::shape(op, format!("bias [{c_out}]"), bias.shape()));
        }
    }
    let hw = h * w;
    let (ho, wo) = (2 * h, 2 * w);
    let in_per = c_in * hw;
    let out_per = c_out * ho * wo;
    let (xdata, wdata) = (input.data(), weight.data());
    let mut out = vec![T::zero(); b * out_per];
    parallel::for_each_chunk(&mut out, out_per, |bi, y| {
        let x = &xdata[bi * in_per..(bi + 1) * in_per];
        // tmp[(co*4 + di*2 + dj), i*w + j]
        let mut tmp = vec![T::zero(); c_out * 4 * hw];
        T::gemm(c_out * 4, c_in, hw, T::one(), wdata, true, x, false, T::zero(), &mut tmp);
        for co in 0..c_out {
            let b0 = bias.map_or(T::zero(), |t| t.data()[co]);
            let plane = &mut y[co * ho * wo..(co + 1) * ho * wo];
            for d in 0..4 {
                let (di, dj) = (d / 2, d % 2);
                let src = &tmp[(co * 4 + d) * hw..(co * 4 + d + 1) * hw];
                for i in 0..h {
                    for j in 0..w {
                        plane[(2 * i + di) * wo + 2 * j + dj] = src[i * w + j] + b0;
                    }
                }
            }
        }
    });
    Tensor::new(vec![b, c_out, ho, wo], out)
}

/// Gradients of [`transposed_conv2x2_forward`] with respect to input, weight
/// and bias.
pub fn transposed_conv2x2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<Conv2dGrads<T>> {
    let op = "transposed_conv2x2_backward";
    let (b, c_in, c_out, h, w) = upconv_dims(op, input, weight)?;
    let (ho, wo) = (2 * h, 2 * w);
    if grad_out.dims() != [b, c_out, ho, wo] {
        return Err(Error::shape(op, format!("[{b}, {c_out}, {ho}, {wo}]"), grad_out.shape()));
    }
    let hw = h * w;
    let in_per = c_in * hw;
    let out_per = c_out * ho * wo;
    let (xdata, wdata, gdata) = (input.data(), weight.data(), grad_out.data());

    let gather = |bi: usize| {
        let dy = &gdata[bi * out_per..(bi + 1) * out_per];
        let mut g = vec![T::zero(); c_out * 4 * hw];
        for co in 0..c_out {
            let plane = &dy[co * ho * wo..(co + 1) * ho * wo];
            for d in 0..4 {
                let (di, dj) = (d / 2, d % 2);
                let dst = &mut g[(co * 4 + d) * hw..(co * 4 + d + 1) * hw];
                for i in 0..h {
                    for j in 0..w {
                        dst[i * w + j] = plane[(2 * i + di) * wo + 2 * j + dj];
                    }
                }
            }
        }
        g
    };

    let mut grad_bias = vec![T::zero(); c_out];
    let mut grad_weight = vec![T::zero(); c_in * c_out * 4];
    for bi in 0..b {
        for (co, gb) in grad_bias.iter_mut().enumerate() {
            let start = bi * out_per + co * ho * wo;
            *gb += gdata[start..start + ho * wo].iter().copied().sum();
        }
        let x = &xdata[bi * in_per..(bi + 1) * in_per];
        let g = gather(bi);
        T::gemm(c_in, hw, c_out * 4, T::one(), x, false, &g, true, T::one(), &mut grad_weight);
    }

    let mut grad_input = vec![T::zero(); b * in_per];
    parallel::for_each_chunk(&mut grad_input, in_per, |bi, dx| {
        let g = gather(bi);
        T::gemm(c_in, c_out * 4, hw, T::one(), wdata, false, &g, false, T::zero(), dx);
    });

    Ok(Conv2dGrads {
        input: Tensor::new(input.dims().to_vec(), grad_input)?,
        weight: Tensor::new(weight.dims().to_vec(), grad_weight)?,
        bias: Tensor::new(vec![c_out], grad_bias)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop cross-correlation.
    fn conv_oracle(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        bias: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (b, ci, h, wd) = x.dims4("oracle").unwrap();
        let (co, _, k, _) = w.dims4("oracle").unwrap();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::<f64>::zeros(vec![b, co, ho, wo]).unwrap();
        let (xd, wdat) = (x.data(), w.data());
        for n in 0..b {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bias.data()[o];
                        for c in 0..ci {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    let ix = (ox * stride + kj) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xi = ((n * ci + c) * h + iy as usize) * wd + ix as usize;
                                    let wi = ((o * ci + c) * k + ki) * k + kj;
                                    acc += xd[xi] * wdat[wi];
                                }
                            }
                        }
                        out.data_mut()[((n * co + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn scalar_kernel_scales_input() {
        let x = Tensor::<f32>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::<f32>::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let b = Tensor::<f32>::zeros(vec![1]).unwrap();
        let y = conv2d_forward(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::<f32>::ones(vec![1, 1, 3, 3]).unwrap();
        let w = Tensor::<f32>::ones(vec![1, 1, 3, 3]).unwrap();
        let b = Tensor::<f32>::zeros(vec![1]).unwrap();
        let y = conv2d_forward(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(stride, pad, k, n) in &[(1, 1, 3, 8), (2, 1, 3, 9), (1, 0, 1, 8), (1, 0, 3, 8), (2, 0, 2, 8)] {
            let x = Tensor::<f64>::randn(vec![2, 3, n, n], 1.0, &mut rng).unwrap();
            let w = Tensor::<f64>::randn(vec![4, 3, k, k], 1.0, &mut rng).unwrap();
            let b = Tensor::<f64>::randn(vec![4], 1.0, &mut rng).unwrap();
            let got = conv2d_forward(&x, &w, &b, stride, pad).unwrap();
            let want = conv_oracle(&x, &w, &b, stride, pad);
            assert_eq!(got.dims(), want.dims());
            for (a, e) in got.data().iter().zip(want.data()) {
                assert!((a - e).abs() <= 1e-5 * e.abs().max(1.0), "{a} vs {e}");
            }
        }
    }

    #[test]
    fn f32_matches_oracle_within_relative_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::randn(vec![2, 3, 8, 8], 1.0, &mut rng).unwrap();
        let w = Tensor::<f64>::randn(vec![4, 3, 3, 3], 1.0, &mut rng).unwrap();
        let b = Tensor::<f64>::randn(vec![4], 1.0, &mut rng).unwrap();
        let want = conv_oracle(&x, &w, &b, 1, 1);
        let got = conv2d_forward(&x.cast::<f32>(), &w.cast(), &b.cast(), 1, 1).unwrap();
        for (a, e) in got.data().iter().zip(want.data()) {
            assert!((*a as f64 - e).abs() <= 1e-5 * e.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_channel_mismatch_bad_kernel_and_non_integral_output() {
        let x = Tensor::<f32>::zeros(vec![1, 2, 5, 5]).unwrap();
        let w = Tensor::<f32>::zeros(vec![1, 3, 3, 3]).unwrap();
        let b = Tensor::<f32>::zeros(vec![1]).unwrap();
        assert!(conv2d_forward(&x, &w, &b, 1, 1).is_err());
        let w = Tensor::<f32>::zeros(vec![1, 2, 2, 2]).unwrap();
        assert!(conv2d_forward(&x, &w, &b, 2, 0).is_err());
        assert_eq!(conv2d_forward(&x, &w, &b, 1, 0).unwrap().dims(), &[1, 1, 4, 4]);
        let w = Tensor::<f32>::zeros(vec![1, 2, 7, 7]).unwrap();
        assert!(conv2d_forward(&x, &w, &b, 1, 0).is_err());
    }

    #[test]
    fn input_gradient_is_adjoint_for_every_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &(stride, pad, k, n) in &[(1, 1, 3, 7), (2, 1, 3, 7), (2, 0, 2, 8), (2, 0, 3, 7), (1, 0, 1, 7)] {
            let x = Tensor::<f64>::randn(vec![2, 3, n, n], 1.0, &mut rng).unwrap();
            let w = Tensor::<f64>::randn(vec![4, 3, k, k], 1.0, &mut rng).unwrap();
            let zero = Tensor::<f64>::zeros(vec![4]).unwrap();
            let y = conv2d_forward(&x, &w, &zero, stride, pad).unwrap();
            let r = Tensor::<f64>::randn(y.dims().to_vec(), 1.0, &mut rng).unwrap();
            let g = conv2d_backward(&r, &x, &w, stride, pad).unwrap();
            let lhs = y.dot(&r).unwrap();
            assert!((lhs - x.dot(&g.input).unwrap()).abs() < 1e-9 * lhs.abs().max(1.0));
            assert!((lhs - w.dot(&g.weight).unwrap()).abs() < 1e-9 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::randn(vec![1, 2, 5, 5], 1.0, &mut rng).unwrap();
        let w = Tensor::<f64>::randn(vec![3, 2, 3, 3], 1.0, &mut rng).unwrap();
        let g = Tensor::<f64>::zeros(vec![1, 3, 5, 5]).unwrap();
        let grads = conv2d_backward(&g, &x, &w, 1, 1).unwrap();
        assert!(grads.input.data().iter().all(|&v| v == 0.0));
        assert!(grads.weight.data().iter().all(|&v| v == 0.0));
        assert!(grads.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pointwise_weight_gradient_is_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::<f64>::randn(vec![2, 1, 4, 4], 1.0, &mut rng).unwrap();
        let w = Tensor::<f64>::new(vec![1, 1, 1, 1], vec![0.7]).unwrap();
        let g = Tensor::<f64>::randn(vec![2, 1, 4, 4], 1.0, &mut rng).unwrap();
        let grads = conv2d_backward(&g, &x, &w, 1, 0).unwrap();
        let expected: f64 = g.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((grads.weight.data()[0] - expected).abs() < 1e-12);
        assert!((grads.bias.data()[0] - g.sum()).abs() < 1e-12);
    }

    #[test]
    fn single_pixel_upconv_expands_weights() {
        let x = Tensor::<f32>::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();
        let w = Tensor::<f32>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = transposed_conv2x2_forward(&x, &w, None).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[3.0, 6.0, 9.0, 12.0]);
        let zero = Tensor::<f32>::zeros(vec![1, 1, 3, 3]).unwrap();
        let y = transposed_conv2x2_forward(&zero, &w, None).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upconv_rejects_channel_mismatch() {
        let x = Tensor::<f32>::zeros(vec![1, 2, 3, 3]).unwrap();
        let w = Tensor::<f32>::zeros(vec![3, 1, 2, 2]).unwrap();
        assert!(transposed_conv2x2_forward(&x, &w, None).is_err());
    }

    #[test]
    fn upconv_is_adjoint_of_strided_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(ca, cb) in &[(1usize, 1usize), (3, 2)] {
            // C: x[1, ca, 4, 4] -> y[1, cb, 2, 2]; weight laid out [cb, ca, 2, 2]
            let w = Tensor::<f64>::randn(vec![cb, ca, 2, 2], 1.0, &mut rng).unwrap();
            let x = Tensor::<f64>::randn(vec![1, ca, 4, 4], 1.0, &mut rng).unwrap();
            let y = Tensor::<f64>::randn(vec![1, cb, 2, 2], 1.0, &mut rng).unwrap();
            let zero_b = Tensor::<f64>::zeros(vec![cb]).unwrap();
            let cx = conv2d_forward(&x, &w, &zero_b, 2, 0).unwrap();
            let cty = transposed_conv2x2_forward(&y, &w, None).unwrap();
            let lhs = cx.dot(&y).unwrap();
            let rhs = x.dot(&cty).unwrap();
            assert!((lhs - rhs).abs() < 1e-5, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn parallel_matches_reference_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f32>::randn(vec![4, 3, 8, 8], 1.0, &mut rng).unwrap();
        let w = Tensor::<f32>::randn(vec![5, 3, 3, 3], 1.0, &mut rng).unwrap();
        let b = Tensor::<f32>::randn(vec![5], 1.0, &mut rng).unwrap();
        let par = conv2d_forward(&x, &w, &b, 1, 1).unwrap();
        crate::parallel::set_reference_mode(true);
        let seq = conv2d_forward(&x, &w, &b, 1, 1).unwrap();
        crate::parallel::set_reference_mode(false);
        for (a, e) in par.data().iter().zip(seq.data()) {
            assert!((a - e).abs() <= 1e-5 * e.abs().max(1.0));
        }
    }
}
