use super::conv::glorot;
use crate::error::{Error, Result};
use crate::tensor::{Rng, Shape, Tensor};

/// Fully connected layer; `weight` is stored as `(out_units, in_units, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl DenseParams {
    pub fn new(out_units: usize, in_units: usize, rng: &mut Rng) -> Self {
        // fan_in = in_units, fan_out = out_units
        let weight = glorot(Shape::new(out_units, in_units, 1, 1), rng);
        DenseParams {
            weight,
            bias: vec![0.0; out_units],
        }
    }

    pub fn out_units(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_units(&self) -> usize {
        self.weight.shape().c
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

fn check(x: &Tensor, p: &DenseParams) -> Result<()> {
    if p.bias.len() != p.out_units() {
        return Err(Error::incompatible(
            "dense",
            format!("bias length {} for {} units", p.bias.len(), p.out_units()),
        ));
    }
    if x.shape().sample_len() != p.in_units() {
        return Err(Error::incompatible(
            "dense",
            format!(
                "input of {} features per sample, layer expects {}",
                x.shape().sample_len(),
                p.in_units()
            ),
        ));
    }
    Ok(())
}

/// `logits = W · x + b` per sample; output shape `(n, out_units, 1, 1)`.
pub fn dense_forward(x: &Tensor, p: &DenseParams) -> Result<Tensor> {
    check(x, p)?;
    let n = x.shape().n;
    let (out, inp) = (p.out_units(), p.in_units());
    let w = p.weight.data();
    let mut logits = Tensor::zeros((n, out, 1, 1));
    for s in 0..n {
        let xs = x.sample(s);
        for o in 0..out {
            let row = &w[o * inp..(o + 1) * inp];
            let dot: f64 = row.iter().zip(xs).map(|(a, b)| a * b).sum();
            logits.set(s, o, 0, 0, dot + p.bias[o]);
        }
    }
    Ok(logits)
}

/// Returns `(grad_x, grads)`; `grad_x` has the shape of `x`.
pub fn dense_backward(x: &Tensor, p: &DenseParams, grad_logits: &Tensor) -> Result<(Tensor, DenseGrads)> {
    check(x, p)?;
    let n = x.shape().n;
    let (out, inp) = (p.out_units(), p.in_units());
    let expected = Shape::new(n, out, 1, 1);
    if grad_logits.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "dense_backward",
            left: expected,
            right: grad_logits.shape(),
        });
    }
    let w = p.weight.data();
    let mut gw = Tensor::zeros(p.weight.shape());
    let mut gb = vec![0.0; out];
    let mut gx = Tensor::zeros(x.shape());
    for s in 0..n {
        let xs = x.sample(s).to_vec();
        let gl = grad_logits.sample(s);
        let gxs = gx.sample_mut(s);
        for o in 0..out {
            let g = gl[o];
            gb[o] += g;
            let row = &mut gw.data_mut()[o * inp..(o + 1) * inp];
            for (r, v) in row.iter_mut().zip(&xs) {
                *r += g * v;
            }
            for (d, wv) in gxs.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
                *d += g * wv;
            }
        }
    }
    Ok((gx, DenseGrads { weight: gw, bias: gb }))
}
