use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Passes `grad_out` where `x > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if x.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch {
            op: "relu_backward",
            left: x.shape(),
            right: grad_out.shape(),
        });
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Softmax probabilities, mean cross-entropy and its gradient for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxCe {
    /// `(n, classes, 1, 1)`.
    pub probs: Tensor,
    /// Mean over the batch of `-ln p[label]`.
    pub loss: f64,
    /// `(probs - one_hot) / n`, the gradient of `loss`.
    pub grad_logits: Tensor,
}

pub fn softmax(logits: &Tensor) -> Tensor {
    let s = logits.shape();
    let classes = s.sample_len();
    let mut probs = Tensor::zeros(Shape::new(s.n, classes, 1, 1));
    for n in 0..s.n {
        let z = logits.sample(n);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let p = probs.sample_mut(n);
        let mut total = 0.0;
        for (pi, &zi) in p.iter_mut().zip(z) {
            *pi = (zi - max).exp();
            total += *pi;
        }
        p.iter_mut().for_each(|v| *v /= total);
    }
    probs
}

pub fn softmax_ce(logits: &Tensor, labels: &[usize]) -> Result<SoftmaxCe> {
    let s = logits.shape();
    let classes = s.sample_len();
    if labels.len() != s.n {
        return Err(Error::InvalidArgument(format!(
            "{} labels for a batch of {}",
            labels.len(),
            s.n
        )));
    }
    if s.n == 0 {
        return Err(Error::Empty("softmax_ce"));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let probs = softmax(logits);
    let inv_n = 1.0 / s.n as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(probs.shape());
    for (n, &label) in labels.iter().enumerate() {
        let z = logits.sample(n);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // -ln p[label] in log-sum-exp form stays finite for extreme logits
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[label];
        let p = probs.sample(n);
        let g = grad.sample_mut(n);
        for (c, (gc, &pc)) in g.iter_mut().zip(p).enumerate() {
            let target = if c == label { 1.0 } else { 0.0 };
            *gc = (pc - target) * inv_n;
        }
    }
    Ok(SoftmaxCe {
        probs,
        loss: loss * inv_n,
        grad_logits: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{rand_uniform, Rng};

    #[test]
    fn relu_values_and_boundary() {
        let x = Tensor::from_vec((1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::full(x.shape(), 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn equal_logits() {
        let out = softmax_ce(&Tensor::zeros((1, 2, 1, 1)), &[1]).unwrap();
        assert_eq!(out.probs.data(), &[0.5, 0.5]);
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let logits = Tensor::from_vec((1, 2, 1, 1), vec![1000.0, 0.0]).unwrap();
        let out = softmax_ce(&logits, &[0]).unwrap();
        assert_eq!(out.probs.data()[0], 1.0);
        assert!(out.probs.data()[1] < 1e-300);
        assert!(out.loss.abs() < 1e-12);
        let wrong = softmax_ce(&logits, &[1]).unwrap();
        assert!((wrong.loss - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn probs_sum_to_one() {
        let mut rng = Rng::new(21);
        let logits = rand_uniform(&mut rng, (50, 2, 1, 1), -30.0, 30.0).unwrap();
        let labels: Vec<usize> = (0..50).map(|i| i % 2).collect();
        let out = softmax_ce(&logits, &labels).unwrap();
        for n in 0..50 {
            let p = out.probs.sample(n);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert!(out.loss >= 0.0);
    }

    #[test]
    fn label_out_of_range() {
        let err = softmax_ce(&Tensor::zeros((1, 2, 1, 1)), &[2]).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 2, classes: 2 }));
    }
}
