//! Layer primitives with their backward passes.

use super::tensor::{Kernel, Scalar, Tensor};
use crate::error::{Error, Result};

/// Target number of pixel columns per im2col chunk, sized so that a chunk
/// of the widest layer stays in L2.
const CHUNK_COLUMNS: usize = 512;

fn rows_per_chunk(w: usize) -> usize {
    (CHUNK_COLUMNS / w).max(1)
}

/// Unfolds the zero-padded 3×3 neighbourhoods of output rows `y0..y1` into a
/// `(in_channels · 9) × ((y1 - y0) · width)` matrix.
fn im2col_rows<F: Scalar>(input: &Tensor<F>, y0: usize, y1: usize, cols: &mut Vec<F>) {
    let (c_in, h, w) = input.shape();
    let plane = h * w;
    let span = (y1 - y0) * w;
    cols.clear();
    cols.resize(c_in * 9 * span, F::zero());
    let src = input.data();
    for ci in 0..c_in {
        let chan = &src[ci * plane..(ci + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * span;
                let dst = &mut cols[row..row + span];
                // x range with sx = x + kx - 1 inside [0, w)
                let x0 = usize::from(kx == 0);
                let x1 = if kx == 2 { w - 1 } else { w };
                let sx0 = x0 + kx - 1;
                let len = x1 - x0;
                for y in y0..y1 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let d = (y - y0) * w + x0;
                    dst[d..d + len].copy_from_slice(&chan[sy * w + sx0..sy * w + sx0 + len]);
                }
            }
        }
    }
}

fn check_conv<F: Scalar>(input: &Tensor<F>, kernel: &Kernel<F>) -> Result<()> {
    if kernel.in_channels() != input.channels() {
        return Err(Error::Shape(format!(
            "kernel expects {} input channels, tensor has {}",
            kernel.in_channels(),
            input.channels()
        )));
    }
    if kernel.size() != 1 && kernel.size() != 3 {
        return Err(Error::Shape(format!("unsupported kernel size {}", kernel.size())));
    }
    Ok(())
}

/// Same-size cross-correlation: zero padding 1 for 3×3 kernels, none for 1×1.
pub fn conv2d_forward<F: Scalar>(input: &Tensor<F>, kernel: &Kernel<F>) -> Result<Tensor<F>> {
    check_conv(input, kernel)?;
    let (c_in, h, w) = input.shape();
    let plane = h * w;
    let c_out = kernel.out_channels();
    let mut out = Tensor::zeros(c_out, h, w);
    if kernel.size() == 1 {
        F::gemm(
            c_out,
            c_in,
            plane,
            kernel.data(),
            (c_in as isize, 1),
            input.data(),
            (plane as isize, 1),
            F::zero(),
            out.data_mut(),
            plane,
        );
        return Ok(out);
    }
    let k = c_in * 9;
    let step = rows_per_chunk(w);
    let mut cols = Vec::new();
    let mut y0 = 0;
    while y0 < h {
        let y1 = (y0 + step).min(h);
        let span = (y1 - y0) * w;
        im2col_rows(input, y0, y1, &mut cols);
        F::gemm(
            c_out,
            k,
            span,
            kernel.data(),
            (k as isize, 1),
            &cols,
            (span as isize, 1),
            F::zero(),
            &mut out.data_mut()[y0 * w..],
            plane,
        );
        y0 = y1;
    }
    Ok(out)
}

/// Kernel of the adjoint convolution: channels swapped, taps rotated 180°.
fn adjoint_kernel<F: Scalar>(kernel: &Kernel<F>) -> Kernel<F> {
    let (o, i, s) = (kernel.out_channels(), kernel.in_channels(), kernel.size());
    let src = kernel.data();
    let mut data = vec![F::zero(); src.len()];
    for oc in 0..o {
        for ic in 0..i {
            for ky in 0..s {
                for kx in 0..s {
                    data[((ic * o + oc) * s + (s - 1 - ky)) * s + (s - 1 - kx)] =
                        src[((oc * i + ic) * s + ky) * s + kx];
                }
            }
        }
    }
    Kernel::from_vec(i, o, s, data).expect("valid kernel")
}

/// Gradients of a convolution with respect to its kernel and, when asked,
/// its input.
pub fn conv2d_backward<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Kernel<F>,
    grad_output: &Tensor<F>,
    want_input_grad: bool,
) -> Result<(Kernel<F>, Option<Tensor<F>>)> {
    check_conv(input, kernel)?;
    let (c_in, h, w) = input.shape();
    if grad_output.shape() != (kernel.out_channels(), h, w) {
        return Err(Error::Shape(format!(
            "output gradient {:?} does not match conv output ({}, {h}, {w})",
            grad_output.shape(),
            kernel.out_channels()
        )));
    }
    let plane = h * w;
    let c_out = kernel.out_channels();
    let mut grad_kernel = Kernel::zeros(c_out, c_in, kernel.size());
    let k = grad_kernel.len() / c_out;

    // dK = g · colsᵀ, accumulated over row chunks
    if kernel.size() == 1 {
        F::gemm(
            c_out,
            plane,
            k,
            grad_output.data(),
            (plane as isize, 1),
            input.data(),
            (1, plane as isize),
            F::zero(),
            grad_kernel.data_mut(),
            k,
        );
    } else {
        let step = rows_per_chunk(w);
        let mut cols = Vec::new();
        let mut y0 = 0;
        while y0 < h {
            let y1 = (y0 + step).min(h);
            let span = (y1 - y0) * w;
            im2col_rows(input, y0, y1, &mut cols);
            F::gemm(
                c_out,
                span,
                k,
                &grad_output.data()[y0 * w..],
                (plane as isize, 1),
                &cols,
                (1, span as isize),
                if y0 == 0 { F::zero() } else { F::one() },
                grad_kernel.data_mut(),
                k,
            );
            y0 = y1;
        }
    }

    let grad_input = if want_input_grad {
        Some(conv2d_forward(grad_output, &adjoint_kernel(kernel))?)
    } else {
        None
    };
    Ok((grad_kernel, grad_input))
}

pub fn relu<F: Scalar>(input: &Tensor<F>) -> Tensor<F> {
    input.map(|v| if v > F::zero() { v } else { F::zero() })
}

fn relu_in_place<F: Scalar>(t: &mut Tensor<F>) {
    for v in t.data_mut() {
        if !(*v > F::zero()) {
            *v = F::zero();
        }
    }
}

/// Routes `grad` through a ReLU given the ReLU's output.
pub fn relu_backward<F: Scalar>(output: &Tensor<F>, grad: &Tensor<F>) -> Tensor<F> {
    let data = output
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&o, &g)| if o > F::zero() { g } else { F::zero() })
        .collect();
    Tensor::from_vec(output.channels(), output.height(), output.width(), data).expect("same shape")
}

/// `relu(conv(input))` in one pass over the output buffer.
pub fn conv2d_relu<F: Scalar>(input: &Tensor<F>, kernel: &Kernel<F>) -> Result<Tensor<F>> {
    let mut out = conv2d_forward(input, kernel)?;
    relu_in_place(&mut out);
    Ok(out)
}

/// Result of 2×2 max pooling; `argmax[i]` is the flat input index that
/// produced output `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled<F> {
    pub output: Tensor<F>,
    pub argmax: Vec<usize>,
    pub input_shape: (usize, usize, usize),
}

/// 2×2 max pooling with stride 2. Ties go to the first element in
/// row-major order within the block.
pub fn maxpool2x2<F: Scalar>(input: &Tensor<F>) -> Result<Pooled<F>> {
    let (c, h, w) = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("max pooling needs even dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    let src = input.data();
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let base = (ch * h + 2 * y) * w + 2 * x;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::from_vec(c, oh, ow, out)?,
        argmax,
        input_shape: (c, h, w),
    })
}

pub fn maxpool2x2_backward<F: Scalar>(pooled: &Pooled<F>, grad: &Tensor<F>) -> Result<Tensor<F>> {
    if grad.shape() != pooled.output.shape() {
        return Err(Error::Shape("pooling gradient shape mismatch".into()));
    }
    let (c, h, w) = pooled.input_shape;
    let mut out = Tensor::zeros(c, h, w);
    let dst = out.data_mut();
    for (&idx, &g) in pooled.argmax.iter().zip(grad.data()) {
        dst[idx] += g;
    }
    Ok(out)
}

/// Replicates every pixel into a 2×2 block.
pub fn avg_unpool2x2<F: Scalar>(input: &Tensor<F>) -> Tensor<F> {
    let (c, h, w) = input.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(c, oh, ow);
    let src = input.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..oh {
            let srow = &src[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
            let drow = &mut dst[(ch * oh + y) * ow..(ch * oh + y + 1) * ow];
            for (x, d) in drow.iter_mut().enumerate() {
                *d = srow[x / 2];
            }
        }
    }
    out
}

/// Adjoint of [`avg_unpool2x2`]: sums each 2×2 block.
pub fn avg_unpool2x2_backward<F: Scalar>(grad: &Tensor<F>) -> Result<Tensor<F>> {
    let (c, h, w) = grad.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("unpool gradient has odd dims {h}x{w}")));
    }
    let (ih, iw) = (h / 2, w / 2);
    let mut out = Tensor::zeros(c, ih, iw);
    let src = grad.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                dst[(ch * ih + y / 2) * iw + x / 2] += src[(ch * h + y) * w + x];
            }
        }
    }
    Ok(out)
}

/// Channel concatenation, `a` first.
pub fn concat_channels<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Shape(format!(
            "cannot concatenate {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut data = Vec::with_capacity(a.data().len() + b.data().len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(a.channels() + b.channels(), a.height(), a.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_kernel(o: usize, i: usize, k: usize, seed: u64) -> Kernel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Kernel::from_vec(o, i, k, (0..o * i * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-loop convolution.
    fn naive_conv(input: &Tensor<f64>, kernel: &Kernel<f64>) -> Tensor<f64> {
        let (c_in, h, w) = input.shape();
        let ks = kernel.size() as isize;
        let pad = ks / 2;
        let mut out = Tensor::zeros(kernel.out_channels(), h, w);
        for o in 0..kernel.out_channels() {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = 0.0;
                    for i in 0..c_in {
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let (sy, sx) = (y + ky - pad, x + kx - pad);
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    let kv = kernel.data()[((o * c_in + i) * ks as usize + ky as usize) * ks as usize + kx as usize];
                                    acc += kv * input.get(i, sy as usize, sx as usize);
                                }
                            }
                        }
                    }
                    out.data_mut()[(o * h + y as usize) * w + x as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_one_by_one() {
        let x = random_tensor(1, 5, 6, 1);
        let k = Kernel::from_vec(1, 1, 1, vec![1.0]).unwrap();
        assert_eq!(conv2d_forward(&x, &k).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_ones_image() {
        let x = Tensor::from_vec(1, 4, 4, vec![1.0f64; 16]).unwrap();
        let k = Kernel::from_vec(1, 1, 3, vec![1.0; 9]).unwrap();
        let y = conv2d_forward(&x, &k).unwrap();
        let expect = [4.0, 6.0, 6.0, 4.0, 6.0, 9.0, 9.0, 6.0, 6.0, 9.0, 9.0, 6.0, 4.0, 6.0, 6.0, 4.0];
        assert_eq!(y.data(), &expect);
    }

    #[test]
    fn conv_matches_nested_loops() {
        for (ks, c_in, c_out) in [(3usize, 3usize, 4usize), (1, 5, 2), (3, 1, 1)] {
            let x = random_tensor(c_in, 7, 5, 2);
            let k = random_kernel(c_out, c_in, ks, 3);
            let fast = conv2d_forward(&x, &k).unwrap();
            let slow = naive_conv(&x, &k);
            let err = fast.data().iter().zip(slow.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "ks={ks}");
        }
    }

    #[test]
    fn conv_is_linear() {
        let x = random_tensor(2, 6, 6, 4);
        let k = random_kernel(3, 2, 3, 5);
        let scaled = x.map(|v| 2.5 * v);
        let a = conv2d_forward(&scaled, &k).unwrap();
        let b = conv2d_forward(&x, &k).unwrap().map(|v| 2.5 * v);
        let err = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn conv_shape_errors() {
        let x = random_tensor(2, 4, 4, 1);
        let k = random_kernel(1, 3, 3, 1);
        assert!(conv2d_forward(&x, &k).is_err());
        assert!(Kernel::<f64>::from_vec(1, 1, 5, vec![0.0; 25]).is_err());
        let good = random_kernel(1, 2, 3, 1);
        let bad_grad = random_tensor(2, 4, 4, 1);
        assert!(conv2d_backward(&x, &good, &bad_grad, true).is_err());
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> = <x, dX>  and  = <k, dK>
        let x = random_tensor(3, 6, 5, 6);
        let k = random_kernel(2, 3, 3, 7);
        let g = random_tensor(2, 6, 5, 8);
        let y = conv2d_forward(&x, &k).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let (dk, dx) = conv2d_backward(&x, &k, &g, true).unwrap();
        let via_x: f64 = x.data().iter().zip(dx.unwrap().data()).map(|(a, b)| a * b).sum();
        let via_k: f64 = k.data().iter().zip(dk.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_k).abs() < 1e-10);
    }

    #[test]
    fn relu_cases() {
        let neg = Tensor::from_vec(1, 1, 3, vec![-1.0f64, -2.0, -0.5]).unwrap();
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::from_vec(1, 1, 3, vec![0.0f64, 2.0, 0.5]).unwrap();
        assert_eq!(relu(&pos), pos);
        let mixed = Tensor::from_vec(1, 1, 2, vec![-1.0f64, 2.0]).unwrap();
        assert_eq!(relu(&mixed).data(), &[0.0, 2.0]);
    }

    #[test]
    fn maxpool_cases() {
        let c = Tensor::from_vec(1, 4, 4, vec![0.3f64; 16]).unwrap();
        let p = maxpool2x2(&c).unwrap();
        assert_eq!(p.output.shape(), (1, 2, 2));
        assert!(p.output.data().iter().all(|&v| v == 0.3));
        // ties go to the top-left element
        assert_eq!(p.argmax, vec![0, 2, 8, 10]);

        let b = Tensor::from_vec(1, 2, 2, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2x2(&b).unwrap().output.data(), &[4.0]);

        let odd = Tensor::<f64>::zeros(1, 3, 4);
        assert!(maxpool2x2(&odd).is_err());
    }

    #[test]
    fn maxpool_matches_brute_force() {
        let x = random_tensor(2, 8, 8, 9);
        let p = maxpool2x2(&x).unwrap();
        for c in 0..2 {
            for y in 0..4 {
                for xx in 0..4 {
                    let m = [x.get(c, 2 * y, 2 * xx), x.get(c, 2 * y, 2 * xx + 1), x.get(c, 2 * y + 1, 2 * xx), x.get(c, 2 * y + 1, 2 * xx + 1)]
                        .into_iter()
                        .fold(f64::NEG_INFINITY, f64::max);
                    assert_eq!(p.output.get(c, y, xx), m);
                }
            }
        }
    }

    #[test]
    fn unpool_cases() {
        let v = Tensor::from_vec(1, 1, 1, vec![0.7f64]).unwrap();
        assert_eq!(avg_unpool2x2(&v).data(), &[0.7; 4]);
        let x = random_tensor(3, 4, 4, 10);
        let up = avg_unpool2x2(&x);
        assert_eq!(maxpool2x2(&up).unwrap().output, x);
        let s_in: f64 = x.data().iter().sum();
        let s_out: f64 = up.data().iter().sum();
        assert!((s_out - 4.0 * s_in).abs() < 1e-12);
    }

    #[test]
    fn unpool_backward_sums_blocks() {
        let g = random_tensor(2, 6, 6, 11);
        let b = avg_unpool2x2_backward(&g).unwrap();
        for c in 0..2 {
            for y in 0..3 {
                for x in 0..3 {
                    let s = g.get(c, 2 * y, 2 * x) + g.get(c, 2 * y + 1, 2 * x) + g.get(c, 2 * y, 2 * x + 1) + g.get(c, 2 * y + 1, 2 * x + 1);
                    assert_eq!(b.get(c, y, x), s);
                }
            }
        }
    }

    #[test]
    fn concat_cases() {
        let a = random_tensor(3, 4, 4, 12);
        let b = random_tensor(5, 4, 4, 13);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), (8, 4, 4));
        assert_eq!(c.channel_slice(0, 3), a);
        assert_eq!(c.channel_slice(3, 8), b);
        assert!(concat_channels(&a, &random_tensor(1, 2, 4, 1)).is_err());
    }

    #[test]
    fn concat_with_zero_block_then_conv() {
        let a = random_tensor(3, 4, 4, 14);
        let z = Tensor::zeros(2, 4, 4);
        let cat = concat_channels(&a, &z).unwrap();
        let ka = random_kernel(2, 3, 1, 15);
        let mut kfull = Vec::new();
        for o in 0..2 {
            kfull.extend_from_slice(&ka.data()[o * 3..o * 3 + 3]);
            kfull.extend_from_slice(&[0.0, 0.0]);
        }
        let kfull = Kernel::from_vec(2, 5, 1, kfull).unwrap();
        assert_eq!(conv2d_forward(&cat, &kfull).unwrap(), conv2d_forward(&a, &ka).unwrap());
    }
}
