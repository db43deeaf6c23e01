//! Valid-mode 2-D convolution and its transpose.
//!
//! A kernel tensor has shape `(a, b, kh, kw)`. Used by [`conv_forward`] it
//! maps `b` input channels to `a` output channels; used by
//! [`deconv_forward`] the same tensor maps `a` channels back to `b`, which
//! makes the two operations adjoint to each other for a shared kernel.

use super::kernels::{col2im, gemm, gemm_bias_ordered, im2col, MatRef, Window};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

/// Gradients of a [`ConvParams`], same shapes as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl ConvGrads {
    pub fn zeros_like(p: &ConvParams) -> Self {
        ConvGrads {
            weight: Tensor::zeros(p.weight.shape()),
            bias: vec![0.0; p.bias.len()],
        }
    }

    pub fn accumulate(&mut self, other: &ConvGrads) {
        for (a, b) in self.weight.data_mut().iter_mut().zip(other.weight.data()) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

impl ConvParams {
    /// Convolution from `in_c` to `out_c` channels, Glorot-uniform weights, zero bias.
    pub fn conv(out_c: usize, in_c: usize, kh: usize, kw: usize, rng: &mut Rng) -> Self {
        let weight = glorot((out_c, in_c, kh, kw).into(), rng);
        ConvParams {
            weight,
            bias: vec![0.0; out_c],
        }
    }

    /// Transposed convolution from `in_c` to `out_c` channels.
    pub fn deconv(in_c: usize, out_c: usize, kh: usize, kw: usize, rng: &mut Rng) -> Self {
        let weight = glorot((in_c, out_c, kh, kw).into(), rng);
        ConvParams {
            weight,
            bias: vec![0.0; out_c],
        }
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weight.shape();
        (s.h, s.w)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Uniform in `[-s, s]` with `s = sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot(shape: Shape, rng: &mut Rng) -> Tensor {
    let receptive = shape.h * shape.w;
    let fan_in = shape.c * receptive;
    let fan_out = shape.n * receptive;
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..shape.len()).map(|_| rng.uniform(-s, s)).collect();
    Tensor::from_vec(shape, data).expect("glorot shape")
}

pub fn conv_output_dim(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    (stride > 0 && kernel >= 1 && input >= kernel).then(|| (input - kernel) / stride + 1)
}

pub fn deconv_output_dim(input: usize, kernel: usize, stride: usize) -> usize {
    (input.saturating_sub(1)) * stride + kernel
}

fn conv_window(x: Shape, p: &ConvParams, stride: usize) -> Result<Window> {
    let ws = p.weight.shape();
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    if x.c != ws.c {
        return Err(Error::incompatible(
            "conv",
            format!("input has {} channels, kernel {} expects {}", x.c, ws, ws.c),
        ));
    }
    if p.bias.len() != ws.n {
        return Err(Error::incompatible(
            "conv",
            format!("bias length {} for {} output channels", p.bias.len(), ws.n),
        ));
    }
    let (Some(out_h), Some(out_w)) = (
        conv_output_dim(x.h, ws.h, stride),
        conv_output_dim(x.w, ws.w, stride),
    ) else {
        return Err(Error::incompatible(
            "conv",
            format!("kernel {}x{} larger than input {}x{}", ws.h, ws.w, x.h, x.w),
        ));
    };
    Ok(Window {
        channels: x.c,
        in_h: x.h,
        in_w: x.w,
        kh: ws.h,
        kw: ws.w,
        stride,
        out_h,
        out_w,
    })
}

/// Pre-activation output of a valid convolution: `b + Σ W · window` per cell.
pub fn conv_forward(x: &Tensor, p: &ConvParams, stride: usize) -> Result<Tensor> {
    let xs = x.shape();
    let g = conv_window(xs, p, stride)?;
    let out_c = p.weight.shape().n;
    let mut out = Tensor::zeros((xs.n, out_c, g.out_h, g.out_w));
    let mut cols = vec![0.0; g.patch_len() * g.positions()];
    for n in 0..xs.n {
        im2col(x.sample(n), &g, &mut cols);
        gemm_bias_ordered(
            out_c,
            g.patch_len(),
            g.positions(),
            p.weight.data(),
            &cols,
            &p.bias,
            out.sample_mut(n),
        );
    }
    Ok(out)
}

/// Gradients of [`conv_forward`] with respect to input, kernel and bias.
pub fn conv_backward(
    x: &Tensor,
    p: &ConvParams,
    grad_out: &Tensor,
    stride: usize,
) -> Result<(Tensor, ConvGrads)> {
    let (gx, grads) = conv_backward_impl(x, p, grad_out, stride, true)?;
    Ok((gx.expect("input gradient requested"), grads))
}

pub(crate) fn conv_backward_impl(
    x: &Tensor,
    p: &ConvParams,
    grad_out: &Tensor,
    stride: usize,
    want_input: bool,
) -> Result<(Option<Tensor>, ConvGrads)> {
    let xs = x.shape();
    let g = conv_window(xs, p, stride)?;
    let out_c = p.weight.shape().n;
    let expected = Shape::new(xs.n, out_c, g.out_h, g.out_w);
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "conv_backward",
            left: expected,
            right: grad_out.shape(),
        });
    }
    let (k, np) = (g.patch_len(), g.positions());
    let mut grads = ConvGrads::zeros_like(p);
    let mut grad_x = want_input.then(|| Tensor::zeros(xs));
    let mut cols = vec![0.0; k * np];
    let mut dcols = vec![0.0; k * np];
    let w = MatRef::new(p.weight.data(), out_c, k);
    for n in 0..xs.n {
        let go = grad_out.sample(n);
        im2col(x.sample(n), &g, &mut cols);
        // dW += gout · colsᵀ
        gemm(
            1.0,
            MatRef::new(go, out_c, np),
            MatRef::new(&cols, k, np).t(),
            1.0,
            grads.weight.data_mut(),
        );
        for (b, row) in grads.bias.iter_mut().zip(go.chunks_exact(np)) {
            *b += row.iter().sum::<f64>();
        }
        if let Some(gx) = grad_x.as_mut() {
            gemm(1.0, w.t(), MatRef::new(go, out_c, np), 0.0, &mut dcols);
            col2im(&dcols, &g, gx.sample_mut(n));
        }
    }
    Ok((grad_x, grads))
}

fn deconv_window(x: Shape, p: &ConvParams, stride: usize) -> Result<Window> {
    let ws = p.weight.shape();
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    if x.c != ws.n {
        return Err(Error::incompatible(
            "deconv",
            format!("input has {} channels, kernel {} expects {}", x.c, ws, ws.n),
        ));
    }
    if p.bias.len() != ws.c {
        return Err(Error::incompatible(
            "deconv",
            format!("bias length {} for {} output channels", p.bias.len(), ws.c),
        ));
    }
    if x.h == 0 || x.w == 0 {
        return Err(Error::Empty("deconv"));
    }
    // geometry of the forward convolution this operation is the adjoint of
    Ok(Window {
        channels: ws.c,
        in_h: deconv_output_dim(x.h, ws.h, stride),
        in_w: deconv_output_dim(x.w, ws.w, stride),
        kh: ws.h,
        kw: ws.w,
        stride,
        out_h: x.h,
        out_w: x.w,
    })
}

/// Transposed convolution; output spatial size is `(h - 1) * stride + k`.
pub fn deconv_forward(x: &Tensor, p: &ConvParams, stride: usize) -> Result<Tensor> {
    let xs = x.shape();
    let g = deconv_window(xs, p, stride)?;
    let in_c = xs.c;
    let (k, np) = (g.patch_len(), g.positions());
    let mut out = Tensor::zeros((xs.n, g.channels, g.in_h, g.in_w));
    let mut cols = vec![0.0; k * np];
    let w = MatRef::new(p.weight.data(), in_c, k);
    for n in 0..xs.n {
        gemm(1.0, w.t(), MatRef::new(x.sample(n), in_c, np), 0.0, &mut cols);
        let o = out.sample_mut(n);
        col2im(&cols, &g, o);
        let plane = g.in_h * g.in_w;
        for (c, chunk) in o.chunks_exact_mut(plane).enumerate() {
            let b = p.bias[c];
            if b != 0.0 {
                chunk.iter_mut().for_each(|v| *v += b);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`deconv_forward`] with respect to input, kernel and bias.
pub fn deconv_backward(
    x: &Tensor,
    p: &ConvParams,
    grad_out: &Tensor,
    stride: usize,
) -> Result<(Tensor, ConvGrads)> {
    let xs = x.shape();
    let g = deconv_window(xs, p, stride)?;
    let expected = Shape::new(xs.n, g.channels, g.in_h, g.in_w);
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "deconv_backward",
            left: expected,
            right: grad_out.shape(),
        });
    }
    let in_c = xs.c;
    let (k, np) = (g.patch_len(), g.positions());
    let mut grads = ConvGrads::zeros_like(p);
    let mut grad_x = Tensor::zeros(xs);
    let mut cols = vec![0.0; k * np];
    let w = MatRef::new(p.weight.data(), in_c, k);
    let plane = g.in_h * g.in_w;
    for n in 0..xs.n {
        let go = grad_out.sample(n);
        im2col(go, &g, &mut cols);
        gemm(1.0, w, MatRef::new(&cols, k, np), 0.0, grad_x.sample_mut(n));
        gemm(
            1.0,
            MatRef::new(x.sample(n), in_c, np),
            MatRef::new(&cols, k, np).t(),
            1.0,
            grads.weight.data_mut(),
        );
        for (b, chunk) in grads.bias.iter_mut().zip(go.chunks_exact(plane)) {
            *b += chunk.iter().sum::<f64>();
        }
    }
    Ok((grad_x, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rand_uniform;

    fn params(weight: Tensor, bias: Vec<f64>) -> ConvParams {
        ConvParams { weight, bias }
    }

    /// Direct nested-loop convolution, accumulating `b` then `ic, ki, kj` in order.
    fn conv_oracle(x: &Tensor, p: &ConvParams, stride: usize) -> Tensor {
        let xs = x.shape();
        let ws = p.weight.shape();
        let oh = (xs.h - ws.h) / stride + 1;
        let ow = (xs.w - ws.w) / stride + 1;
        let mut out = Tensor::zeros((xs.n, ws.n, oh, ow));
        for n in 0..xs.n {
            for oc in 0..ws.n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = p.bias[oc];
                        for ic in 0..ws.c {
                            for ki in 0..ws.h {
                                for kj in 0..ws.w {
                                    acc += p.weight.get(oc, ic, ki, kj)
                                        * x.get(n, ic, oy * stride + ki, ox * stride + kj);
                                }
                            }
                        }
                        out.set(n, oc, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let mut rng = Rng::new(3);
        let x = rand_uniform(&mut rng, (2, 1, 4, 5), -1.0, 1.0).unwrap();
        let p = params(Tensor::full((1, 1, 1, 1), 1.0), vec![0.0]);
        assert_eq!(conv_forward(&x, &p, 1).unwrap(), x);
    }

    #[test]
    fn zero_weights_bias_only() {
        let x = Tensor::full((1, 2, 4, 4), 3.0);
        let p = params(Tensor::zeros((3, 2, 2, 2)), vec![0.5; 3]);
        let y = conv_forward(&x, &p, 1).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 3, 3, 3));
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn three_by_three_ones_kernel() {
        let x = Tensor::from_vec((1, 1, 3, 3), (1..=9).map(f64::from).collect()).unwrap();
        let p = params(Tensor::full((1, 1, 2, 2), 1.0), vec![0.0]);
        let y = conv_forward(&x, &p, 1).unwrap();
        assert_eq!(y.data(), &[12.0, 16.0, 24.0, 28.0]);
        assert_eq!(y, conv_oracle(&x, &p, 1));
    }

    #[test]
    fn matches_nested_loop_oracle_bitwise() {
        let mut rng = Rng::new(17);
        for (stride, (c_in, c_out, h, k)) in [(1, (1, 3, 7, 3)), (2, (3, 5, 9, 3)), (1, (4, 6, 12, 5)), (3, (2, 9, 10, 2))] {
            let x = rand_uniform(&mut rng, (2, c_in, h, h + 1), -1.0, 1.0).unwrap();
            let mut p = ConvParams::conv(c_out, c_in, k, k, &mut rng);
            p.bias = (0..c_out).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let got = conv_forward(&x, &p, stride).unwrap();
            let want = conv_oracle(&x, &p, stride);
            assert_eq!(got.shape(), want.shape());
            assert!(got.data().iter().zip(want.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn conv_errors() {
        let x = Tensor::zeros((1, 2, 4, 4));
        let p = params(Tensor::zeros((1, 3, 2, 2)), vec![0.0]);
        assert!(matches!(conv_forward(&x, &p, 1), Err(Error::Incompatible { .. })));
        let p = params(Tensor::zeros((1, 2, 5, 5)), vec![0.0]);
        assert!(matches!(conv_forward(&x, &p, 1), Err(Error::Incompatible { .. })));
        let p = params(Tensor::zeros((1, 2, 2, 2)), vec![0.0]);
        let bad = Tensor::zeros((1, 1, 2, 2));
        assert!(matches!(conv_backward(&x, &p, &bad, 1), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut rng = Rng::new(2);
        let x = rand_uniform(&mut rng, (2, 2, 6, 6), -1.0, 1.0).unwrap();
        let p = ConvParams::conv(3, 2, 3, 3, &mut rng);
        let (gx, g) = conv_backward(&x, &p, &Tensor::zeros((2, 3, 4, 4)), 1).unwrap();
        assert!(gx.data().iter().chain(g.weight.data()).chain(&g.bias).all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        let x = Tensor::full((1, 1, 1, 1), 1.5);
        let p = params(Tensor::full((1, 1, 1, 1), -0.75), vec![0.25]);
        let go = Tensor::full((1, 1, 1, 1), 2.0);
        let (gx, g) = conv_backward(&x, &p, &go, 1).unwrap();
        assert_eq!(g.weight.data(), &[1.5 * 2.0]);
        assert_eq!(g.bias, vec![2.0]);
        assert_eq!(gx.data(), &[-0.75 * 2.0]);
    }

    #[test]
    fn deconv_identity_and_impulse() {
        let mut rng = Rng::new(8);
        let x = rand_uniform(&mut rng, (1, 1, 3, 4), -1.0, 1.0).unwrap();
        let p = params(Tensor::full((1, 1, 1, 1), 1.0), vec![0.0]);
        assert_eq!(deconv_forward(&x, &p, 1).unwrap(), x);

        let k = rand_uniform(&mut rng, (1, 1, 3, 3), -1.0, 1.0).unwrap();
        let p = params(k.clone(), vec![0.0]);
        let mut impulse = Tensor::zeros((1, 1, 4, 4));
        impulse.set(0, 0, 1, 2, 1.0);
        let y = deconv_forward(&impulse, &p, 1).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 6, 6));
        for i in 0..6 {
            for j in 0..6 {
                let inside = (1..4).contains(&i) && (2..5).contains(&j);
                let want = if inside { k.get(0, 0, i - 1, j - 2) } else { 0.0 };
                assert_eq!(y.get(0, 0, i, j), want);
            }
        }
    }

    #[test]
    fn deconv_is_adjoint_of_conv() {
        let mut rng = Rng::new(99);
        for stride in 1..=3 {
            let x = rand_uniform(&mut rng, (2, 3, 11, 9), -1.0, 1.0).unwrap();
            let p = params(rand_uniform(&mut rng, (4, 3, 3, 3), -1.0, 1.0).unwrap(), vec![0.0; 4]);
            let cx = conv_forward(&x, &p, stride).unwrap();
            let y = rand_uniform(&mut rng, cx.shape(), -1.0, 1.0).unwrap();
            let dp = params(p.weight.clone(), vec![0.0; 3]);
            let dy = deconv_forward(&y, &dp, stride).unwrap();
            // deconv reproduces only the rows a strided conv reads; pad the rest with 0
            let mut dy_crop = Tensor::zeros(x.shape());
            for n in 0..2 {
                for c in 0..3 {
                    for i in 0..11 {
                        for j in 0..9 {
                            if i < dy.shape().h && j < dy.shape().w {
                                dy_crop.set(n, c, i, j, dy.get(n, c, i, j));
                            }
                        }
                    }
                }
            }
            let lhs = cx.dot(&y).unwrap();
            let rhs = x.dot(&dy_crop).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "stride {stride}: {lhs} vs {rhs}");
        }
    }
}
