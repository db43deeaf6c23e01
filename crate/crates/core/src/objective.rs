//! Loss algebra for the sparse convolutional autoencoder objective.
//!
//! * `S`: entropy of each sample's per-filter activation mass in the code,
//!   averaged over the batch (natural log, so `S ∈ [0, ln K]` for `K` filters).
//! * `MR`: batch mean of half the squared reconstruction error plus
//!   `λ/2 · Σ ||W||²` over all weight tensors (biases excluded).
//! * `total = ce + w_rec · MR + λs · S`.

use crate::error::{Error, Result};
use crate::layers::{
    conv_backward_impl, deconv_backward, dense_backward, maxpool_backward, relu_backward,
    softmax_ce, unpool_backward, ConvGrads, DenseGrads,
};
use crate::network::{EncoderTrace, ForwardTrace, NetworkParams};
use crate::tensor::Tensor;

/// Components of the training objective for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub mr: f64,
    pub s: f64,
    pub total: f64,
}

/// Weights of the objective terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    /// Weight decay `λ` inside the reconstruction cost.
    pub lambda: f64,
    /// Sparsity weight `λs`.
    pub lambda_s: f64,
    /// Weight of the reconstruction cost against cross-entropy.
    pub w_rec: f64,
}

impl ObjectiveWeights {
    pub const BASELINE: ObjectiveWeights = ObjectiveWeights {
        lambda: 0.0,
        lambda_s: 0.0,
        w_rec: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("lambda_s", self.lambda_s), ("w_rec", self.w_rec)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-sample activation mass of every filter, `(n, k)` row-major.
fn filter_mass(code: &Tensor) -> Result<Vec<f64>> {
    let s = code.shape();
    if let Some((index, &value)) = code.data().iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(Error::NegativeActivation { index, value });
    }
    let plane = s.plane();
    Ok(code
        .data()
        .chunks_exact(plane.max(1))
        .map(|ch| ch.iter().sum())
        .collect())
}

/// Sparsity entropy `S` of an encoding-layer activation (post-ReLU, `≥ 0`).
///
/// Each sample contributes `-Σ_j r_j ln r_j` where `r_j` is filter `j`'s
/// share of the sample's total activation; `0 ln 0 := 0`, and a sample
/// with no activation at all contributes 0.
pub fn sparsity(code: &Tensor) -> Result<f64> {
    let s = code.shape();
    if s.n == 0 {
        return Err(Error::Empty("sparsity"));
    }
    let mass = filter_mass(code)?;
    let total: f64 = mass
        .chunks_exact(s.c)
        .map(|m| {
            let t: f64 = m.iter().sum();
            if t > 0.0 {
                m.iter()
                    .filter(|&&a| a > 0.0)
                    .map(|&a| {
                        let r = a / t;
                        -r * r.ln()
                    })
                    .sum()
            } else {
                0.0
            }
        })
        .sum();
    // adding +0 turns the -0 of a one-hot code into 0
    Ok(total / s.n as f64 + 0.0)
}

/// Gradient of [`sparsity`] with respect to every code cell.
///
/// Every cell of filter `j` in sample `i` receives
/// `(-ln r_j - S_i) / (T_i · n)`, `T_i` the sample's total mass. Filters
/// with zero mass get 0, matching the `0 ln 0 := 0` convention.
pub fn sparsity_grad(code: &Tensor) -> Result<Tensor> {
    let s = code.shape();
    if s.n == 0 {
        return Err(Error::Empty("sparsity_grad"));
    }
    let mass = filter_mass(code)?;
    let inv_n = 1.0 / s.n as f64;
    let mut grad = Tensor::zeros(s);
    let plane = s.plane();
    for (i, m) in mass.chunks_exact(s.c).enumerate() {
        let t: f64 = m.iter().sum();
        if t <= 0.0 {
            continue;
        }
        let entropy: f64 = m
            .iter()
            .filter(|&&a| a > 0.0)
            .map(|&a| {
                let r = a / t;
                -r * r.ln()
            })
            .sum();
        let g = grad.sample_mut(i);
        for (j, &a) in m.iter().enumerate() {
            if a > 0.0 {
                let d = (-(a / t).ln() - entropy) / t * inv_n;
                g[j * plane..(j + 1) * plane].fill(d);
            }
        }
    }
    Ok(grad)
}

/// Sum of squared Frobenius norms of the given weight tensors.
pub fn weight_sq_norm<'a>(weights: impl IntoIterator<Item = &'a Tensor>) -> f64 {
    weights
        .into_iter()
        .map(|w| w.data().iter().map(|v| v * v).sum::<f64>())
        .sum()
}

/// `MR = (1/n) Σ_i ½ ||x̂_i − x_i||² + (λ/2) Σ ||W||²`.
pub fn reconstruction_cost<'a>(
    x: &Tensor,
    x_hat: &Tensor,
    weights: impl IntoIterator<Item = &'a Tensor>,
    lambda: f64,
) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::ShapeMismatch {
            op: "reconstruction_cost",
            left: x.shape(),
            right: x_hat.shape(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let n = x.shape().n;
    if n == 0 {
        return Err(Error::Empty("reconstruction_cost"));
    }
    let sq: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(a, b)| (b - a) * (b - a))
        .sum();
    Ok(0.5 * sq / n as f64 + 0.5 * lambda * weight_sq_norm(weights))
}

/// Gradient of the data term of [`reconstruction_cost`] w.r.t. `x_hat`.
pub fn reconstruction_grad(x: &Tensor, x_hat: &Tensor) -> Result<Tensor> {
    if x.shape() != x_hat.shape() {
        return Err(Error::ShapeMismatch {
            op: "reconstruction_grad",
            left: x.shape(),
            right: x_hat.shape(),
        });
    }
    let inv_n = 1.0 / x.shape().n as f64;
    let data = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(a, b)| (b - a) * inv_n)
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Gradient of `(λ/2)||W||²`: `λ · W`.
pub fn weight_decay_grad(weight: &Tensor, lambda: f64) -> Tensor {
    weight.scale(lambda)
}

pub fn combined_objective(ce: f64, mr: f64, s: f64, lambda_s: f64, w_rec: f64) -> Result<LossBreakdown> {
    if !(lambda_s >= 0.0) || !(w_rec >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "objective weights must be >= 0, got lambda_s={lambda_s}, w_rec={w_rec}"
        )));
    }
    Ok(LossBreakdown {
        ce,
        mr,
        s,
        total: ce + w_rec * mr + lambda_s * s,
    })
}

/// Gradients of the total objective for every network parameter, in the
/// same layout as [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrads {
    pub conv1: ConvGrads,
    pub conv2: ConvGrads,
    pub deconv2: Option<ConvGrads>,
    pub deconv1: Option<ConvGrads>,
    pub head: DenseGrads,
}

impl NetworkGrads {
    /// Gradient buffers in canonical parameter order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.conv1.weight.data(),
            &self.conv1.bias,
            self.conv2.weight.data(),
            &self.conv2.bias,
        ];
        if let (Some(d2), Some(d1)) = (&self.deconv2, &self.deconv1) {
            out.extend([d2.weight.data(), &d2.bias[..], d1.weight.data(), &d1.bias[..]]);
        }
        out.extend([self.head.weight.data(), &self.head.bias[..]]);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.conv1.weight.data_mut(),
            &mut self.conv1.bias,
            self.conv2.weight.data_mut(),
            &mut self.conv2.bias,
        ];
        if let (Some(d2), Some(d1)) = (&mut self.deconv2, &mut self.deconv1) {
            out.push(d2.weight.data_mut());
            out.push(&mut d2.bias);
            out.push(d1.weight.data_mut());
            out.push(&mut d1.bias);
        }
        out.push(self.head.weight.data_mut());
        out.push(&mut self.head.bias);
        out
    }
}

/// Losses and gradients of one training batch.
#[derive(Debug, Clone)]
pub struct ObjectiveOutput {
    pub loss: LossBreakdown,
    pub grads: NetworkGrads,
}

/// Gradient of an encoder pass with respect to its weights (and, when
/// asked, its input), given the gradient at its pooled output.
fn encoder_backward(
    params: &NetworkParams,
    t: &EncoderTrace,
    grad_code: &Tensor,
    want_input: bool,
) -> Result<(Option<Tensor>, ConvGrads, ConvGrads)> {
    let arch = params.arch();
    let g = maxpool_backward(grad_code, &t.idx2)?;
    let g = relu_backward(&t.conv2_pre, &g)?;
    let (g, conv2) = conv_backward_impl(&t.pool1, &params.conv2, &g, arch.conv_stride, true)?;
    let g = g.ok_or(Error::MissingIntermediate("conv2 input gradient"))?;
    let g = maxpool_backward(&g, &t.idx1)?;
    let g = relu_backward(&t.conv1_pre, &g)?;
    let (gx, conv1) = conv_backward_impl(&t.input, &params.conv1, &g, arch.conv_stride, want_input)?;
    Ok((gx, conv1, conv2))
}

/// Loss terms of a forward trace without computing gradients.
pub fn objective_value(
    params: &NetworkParams,
    trace: &ForwardTrace,
    labels: &[usize],
    weights: &ObjectiveWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let ce = softmax_ce(&trace.logits, labels)?.loss;
    match &trace.decode {
        None => combined_objective(ce, 0.0, 0.0, 0.0, 0.0),
        Some(d) => {
            let mr = reconstruction_cost(&trace.encode.input, &d.x_hat, params.weight_tensors(), weights.lambda)?;
            let s = sparsity(trace.encode.code())?;
            combined_objective(ce, mr, s, weights.lambda_s, weights.w_rec)
        }
    }
}

/// Backpropagates `total = ce + w_rec·MR + λs·S` through a retained trace.
///
/// For a baseline trace only cross-entropy contributes. For an enhanced
/// trace the gradient flows through the re-encoding pass, the decoder and
/// the first encoding pass; encoder gradients from both passes are summed.
pub fn objective_gradients(
    params: &NetworkParams,
    trace: &ForwardTrace,
    labels: &[usize],
    weights: &ObjectiveWeights,
) -> Result<ObjectiveOutput> {
    weights.validate()?;
    let arch = params.arch();
    let ce_out = softmax_ce(&trace.logits, labels)?;
    let (grad_features, head) = dense_backward(&trace.features, &params.head, &ce_out.grad_logits)?;

    let Some(decode) = &trace.decode else {
        let code_shape = trace.encode.code().shape();
        let grad_code = grad_features.reshape(code_shape)?;
        let (_, conv1, conv2) = encoder_backward(params, &trace.encode, &grad_code, false)?;
        let loss = combined_objective(ce_out.loss, 0.0, 0.0, 0.0, 0.0)?;
        return Ok(ObjectiveOutput {
            loss,
            grads: NetworkGrads {
                conv1,
                conv2,
                deconv2: None,
                deconv1: None,
                head,
            },
        });
    };
    let reencode = trace
        .reencode
        .as_ref()
        .ok_or(Error::MissingIntermediate("re-encoding pass"))?;
    let decoder = params
        .decoder()
        .ok_or(Error::MissingIntermediate("decoder parameters"))?;

    // classification path through the re-encoded reconstruction
    let grad_z2 = grad_features.reshape(reencode.code().shape())?;
    let (grad_xhat_ce, mut conv1, mut conv2) = encoder_backward(params, reencode, &grad_z2, true)?;
    let mut grad_xhat = grad_xhat_ce.ok_or(Error::MissingIntermediate("re-encoding input gradient"))?;

    let input = &trace.encode.input;
    if weights.w_rec > 0.0 {
        let rg = reconstruction_grad(input, &decode.x_hat)?;
        for (g, r) in grad_xhat.data_mut().iter_mut().zip(rg.data()) {
            *g += weights.w_rec * r;
        }
    }

    // decoder: x̂ = deconv1(unpool1(relu(deconv2(unpool2(z)))))
    let (g, mut deconv1) = deconv_backward(&decode.unpool1, &decoder.deconv1, &grad_xhat, arch.conv_stride)?;
    let g = unpool_backward(&g, &trace.encode.idx1)?;
    let g = relu_backward(&decode.deconv2_pre, &g)?;
    let (g, mut deconv2) = deconv_backward(&decode.unpool2, &decoder.deconv2, &g, arch.conv_stride)?;
    let mut grad_code = unpool_backward(&g, &trace.encode.idx2)?;

    let code = trace.encode.code();
    let s = sparsity(code)?;
    if weights.lambda_s > 0.0 {
        let sg = sparsity_grad(code)?;
        for (g, v) in grad_code.data_mut().iter_mut().zip(sg.data()) {
            *g += weights.lambda_s * v;
        }
    }
    let (_, c1, c2) = encoder_backward(params, &trace.encode, &grad_code, false)?;
    conv1.accumulate(&c1);
    conv2.accumulate(&c2);

    let mut head = head;
    let mr = reconstruction_cost(input, &decode.x_hat, params.weight_tensors(), weights.lambda)?;
    let decay = weights.w_rec * weights.lambda;
    if decay > 0.0 {
        let add_decay = |g: &mut Tensor, w: &Tensor| {
            for (gv, wv) in g.data_mut().iter_mut().zip(w.data()) {
                *gv += decay * wv;
            }
        };
        add_decay(&mut conv1.weight, &params.conv1.weight);
        add_decay(&mut conv2.weight, &params.conv2.weight);
        add_decay(&mut deconv2.weight, &decoder.deconv2.weight);
        add_decay(&mut deconv1.weight, &decoder.deconv1.weight);
        add_decay(&mut head.weight, &params.head.weight);
    }

    let loss = combined_objective(ce_out.loss, mr, s, weights.lambda_s, weights.w_rec)?;
    Ok(ObjectiveOutput {
        loss,
        grads: NetworkGrads {
            conv1,
            conv2,
            deconv2: Some(deconv2),
            deconv1: Some(deconv1),
            head,
        },
    })
}
