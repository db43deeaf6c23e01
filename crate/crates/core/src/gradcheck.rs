//! Central finite-difference checks of every backward pass and of the full
//! training objective.
//!
//! Each check perturbs every coordinate of its inputs by `±ε` and compares
//! `(f(θ+ε) − f(θ−ε)) / 2ε` with the analytical gradient using
//! `|a − n| / max(|a|, |n|, 1e-6)`. Layers with kinks (ReLU, max pooling)
//! also report an activation pattern; coordinates whose perturbation
//! changes the pattern are not differentiable there and are skipped and
//! counted.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use crate::error::Result;
use crate::layers::{
    conv_backward, conv_forward, deconv_backward, deconv_forward, dense_backward, dense_forward,
    maxpool_backward, maxpool_forward, relu, relu_backward, softmax_ce, unpool, unpool_backward, ConvParams,
    DenseParams,
};
use crate::network::{forward, Architecture, ForwardTrace, Mode, NetworkParams};
use crate::objective::{
    objective_gradients, objective_value, reconstruction_cost, reconstruction_grad, sparsity, sparsity_grad,
    weight_decay_grad, ObjectiveWeights,
};
use crate::tensor::{rand_uniform, Rng, Shape, Tensor};

pub const EPSILON: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Worst coordinate seen by a check.
#[derive(Debug, Clone, PartialEq)]
pub struct Offender {
    pub seed: u64,
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub seeds: usize,
    pub checked: usize,
    pub skipped: usize,
    pub worst: Option<Offender>,
}

impl CheckReport {
    pub fn max_error(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_error)
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_error() < TOLERANCE
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<22} {} seeds={} checked={} skipped={} max_rel_err={:.3e}",
            self.name,
            if self.passed() { "ok  " } else { "FAIL" },
            self.seeds,
            self.checked,
            self.skipped,
            self.max_error()
        )?;
        if let (false, Some(w)) = (self.passed(), &self.worst) {
            write!(
                f,
                "\n    worst: seed {} {}[{}] analytic={:e} numeric={:e}",
                w.seed, w.param, w.index, w.analytic, w.numeric
            )?;
        }
        Ok(())
    }
}

/// Named contiguous pieces of a flat parameter vector.
struct Segments {
    names: Vec<(String, usize)>,
}

impl Segments {
    fn new(parts: &[(&str, usize)]) -> Self {
        Segments {
            names: parts.iter().map(|&(n, l)| (n.to_string(), l)).collect(),
        }
    }

    fn locate(&self, mut i: usize) -> (String, usize) {
        for (name, len) in &self.names {
            if i < *len {
                return (name.clone(), i);
            }
            i -= len;
        }
        ("?".into(), i)
    }
}

/// Value of a function and a fingerprint of its activation pattern.
type Eval<'a> = dyn Fn(&[f64]) -> Result<(f64, u64)> + 'a;

struct Tally<'s> {
    segments: &'s Segments,
    checked: usize,
    skipped: usize,
    worst: Option<Offender>,
}

impl Tally<'_> {
    fn run(&mut self, seed: u64, theta: &[f64], analytic: &[f64], f: &Eval<'_>) -> Result<()> {
        let (_, pattern) = f(theta)?;
        let mut t = theta.to_vec();
        for i in 0..theta.len() {
            t[i] = theta[i] + EPSILON;
            let (plus, pp) = f(&t)?;
            t[i] = theta[i] - EPSILON;
            let (minus, pm) = f(&t)?;
            t[i] = theta[i];
            if pp != pattern || pm != pattern {
                self.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * EPSILON);
            let err = relative_error(analytic[i], numeric);
            self.checked += 1;
            if self.worst.as_ref().is_none_or(|w| err > w.rel_error) || !err.is_finite() {
                let (param, index) = self.segments.locate(i);
                self.worst = Some(Offender {
                    seed,
                    param,
                    index,
                    analytic: analytic[i],
                    numeric,
                    rel_error: if err.is_finite() { err } else { f64::INFINITY },
                });
            }
        }
        Ok(())
    }
}

fn fingerprint<T: Hash>(value: &T) -> u64 {
    let mut h = DefaultHasher::new();
    value.hash(&mut h);
    h.finish()
}

fn positive_mask(t: &Tensor) -> Vec<bool> {
    t.data().iter().map(|&v| v > 0.0).collect()
}

/// Random tensor with every entry at least `gap` away from 0.
fn away_from_zero(rng: &mut Rng, shape: impl Into<Shape>, gap: f64) -> Tensor {
    let shape = shape.into();
    Tensor::from_fn(shape, |_, _, _, _| {
        let v = rng.uniform(gap, 1.0);
        if rng.next_u64() & 1 == 0 {
            v
        } else {
            -v
        }
    })
}

fn rand(rng: &mut Rng, shape: impl Into<Shape>) -> Tensor {
    rand_uniform(rng, shape, -1.0, 1.0).expect("valid range")
}

fn slice_tensor(theta: &[f64], off: &mut usize, shape: Shape) -> Tensor {
    let t = Tensor::from_vec(shape, theta[*off..*off + shape.len()].to_vec()).expect("length matches shape");
    *off += shape.len();
    t
}

/// Which analytical gradient to corrupt, for testing the checker itself.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Options {
    pub seeds: usize,
    pub base_seed: u64,
    /// Name of a check whose analytical gradient is scaled by 1.01.
    pub fault: Option<String>,
}

impl Options {
    pub fn new(base_seed: u64) -> Self {
        Options {
            seeds: 20,
            base_seed,
            fault: None,
        }
    }
}

struct Check {
    name: &'static str,
    run: fn(&mut Rng, bool) -> Result<(Vec<f64>, Vec<f64>, Segments, Box<Eval<'static>>)>,
}

fn corrupt(g: &mut [f64], on: bool) {
    if on {
        g.iter_mut().for_each(|v| *v *= 1.01);
    }
}

fn conv_check(stride: usize) -> impl Fn(&mut Rng, bool) -> Result<(Vec<f64>, Vec<f64>, Segments, Box<Eval<'static>>)> {
    move |rng, fault| {
        let xs = Shape::new(2, 2, 7, 7);
        let ws = Shape::new(3, 2, 3, 3);
        let x = rand(rng, xs);
        let p = ConvParams {
            weight: rand(rng, ws),
            bias: (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        };
        let out = conv_forward(&x, &p, stride)?;
        let r = rand(rng, out.shape());
        let (gx, g) = conv_backward(&x, &p, &r, stride)?;
        let mut analytic = [gx.data(), g.weight.data(), &g.bias].concat();
        corrupt(&mut analytic, fault);
        let theta = [x.data(), p.weight.data(), &p.bias].concat();
        let seg = Segments::new(&[("x", xs.len()), ("weight", ws.len()), ("bias", 3)]);
        let f = move |t: &[f64]| {
            let mut off = 0;
            let x = slice_tensor(t, &mut off, xs);
            let weight = slice_tensor(t, &mut off, ws);
            let p = ConvParams {
                weight,
                bias: t[off..].to_vec(),
            };
            Ok((conv_forward(&x, &p, stride)?.dot(&r)?, 0u64))
        };
        Ok((theta, analytic, seg, Box::new(f) as Box<Eval<'static>>))
    }
}

fn deconv_check(stride: usize) -> impl Fn(&mut Rng, bool) -> Result<(Vec<f64>, Vec<f64>, Segments, Box<Eval<'static>>)> {
    move |rng, fault| {
        let xs = Shape::new(2, 2, 3, 3);
        let ws = Shape::new(2, 3, 3, 3);
        let x = rand(rng, xs);
        let p = ConvParams {
            weight: rand(rng, ws),
            bias: (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        };
        let out = deconv_forward(&x, &p, stride)?;
        let r = rand(rng, out.shape());
        let (gx, g) = deconv_backward(&x, &p, &r, stride)?;
        let mut analytic = [gx.data(), g.weight.data(), &g.bias].concat();
        corrupt(&mut analytic, fault);
        let theta = [x.data(), p.weight.data(), &p.bias].concat();
        let seg = Segments::new(&[("x", xs.len()), ("weight", ws.len()), ("bias", 3)]);
        let f = move |t: &[f64]| {
            let mut off = 0;
            let x = slice_tensor(t, &mut off, xs);
            let weight = slice_tensor(t, &mut off, ws);
            let p = ConvParams {
                weight,
                bias: t[off..].to_vec(),
            };
            Ok((deconv_forward(&x, &p, stride)?.dot(&r)?, 0u64))
        };
        Ok((theta, analytic, seg, Box::new(f) as Box<Eval<'static>>))
    }
}

fn checks() -> Vec<Check> {
    vec![
        Check {
            name: "conv (stride 1)",
            run: |rng, fault| conv_check(1)(rng, fault),
        },
        Check {
            name: "conv (stride 2)",
            run: |rng, fault| conv_check(2)(rng, fault),
        },
        Check {
            name: "deconv (stride 1)",
            run: |rng, fault| deconv_check(1)(rng, fault),
        },
        Check {
            name: "deconv (stride 2)",
            run: |rng, fault| deconv_check(2)(rng, fault),
        },
        Check {
            name: "dense",
            run: |rng, fault| {
                let xs = Shape::new(3, 2, 2, 1);
                let x = rand(rng, xs);
                let p = DenseParams {
                    weight: rand(rng, (2, 4, 1, 1)),
                    bias: vec![rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)],
                };
                let r = rand(rng, (3, 2, 1, 1));
                let (gx, g) = dense_backward(&x, &p, &r)?;
                let mut analytic = [gx.data(), g.weight.data(), &g.bias].concat();
                corrupt(&mut analytic, fault);
                let theta = [x.data(), p.weight.data(), &p.bias].concat();
                let seg = Segments::new(&[("x", 12), ("weight", 8), ("bias", 2)]);
                let f = move |t: &[f64]| {
                    let mut off = 0;
                    let x = slice_tensor(t, &mut off, xs);
                    let weight = slice_tensor(t, &mut off, Shape::new(2, 4, 1, 1));
                    let p = DenseParams {
                        weight,
                        bias: t[off..].to_vec(),
                    };
                    Ok((dense_forward(&x, &p)?.dot(&r)?, 0u64))
                };
                Ok((theta, analytic, seg, Box::new(f) as Box<Eval<'static>>))
            },
        },
        Check {
            name: "relu",
            run: |rng, fault| {
                let xs = Shape::new(2, 3, 4, 4);
                let x = away_from_zero(rng, xs, 0.05);
                let r = rand(rng, xs);
                let mut analytic = relu_backward(&x, &r)?.into_vec();
                corrupt(&mut analytic, fault);
                let f = move |t: &[f64]| {
                    let x = Tensor::from_vec(xs, t.to_vec())?;
                    Ok((relu(&x).dot(&r)?, fingerprint(&positive_mask(&x))))
                };
                Ok((x.into_vec(), analytic, Segments::new(&[("x", xs.len())]), Box::new(f) as Box<Eval<'static>>))
            },
        },
        Check {
            name: "maxpool",
            run: |rng, fault| {
                let xs = Shape::new(2, 2, 7, 7);
                let x = rand(rng, xs);
                let (out, idx) = maxpool_forward(&x, 3, 2)?;
                let r = rand(rng, out.shape());
                let mut analytic = maxpool_backward(&r, &idx)?.into_vec();
                corrupt(&mut analytic, fault);
                let f = move |t: &[f64]| {
                    let x = Tensor::from_vec(xs, t.to_vec())?;
                    let (out, idx) = maxpool_forward(&x, 3, 2)?;
                    Ok((out.dot(&r)?, fingerprint(&idx.coords())))
                };
                Ok((x.into_vec(), analytic, Segments::new(&[("x", xs.len())]), Box::new(f) as Box<Eval<'static>>))
            },
        },
        Check {
            name: "unpool",
            run: |rng, fault| {
                let (pooled, idx) = maxpool_forward(&rand(rng, (2, 2, 7, 7)), 3, 2)?;
                let ps = pooled.shape();
                let r = rand(rng, idx.input_shape());
                let mut analytic = unpool_backward(&r, &idx)?.into_vec();
                corrupt(&mut analytic, fault);
                let f = move |t: &[f64]| {
                    let p = Tensor::from_vec(ps, t.to_vec())?;
                    Ok((unpool(&p, &idx, idx.input_shape())?.dot(&r)?, 0u64))
                };
                Ok((pooled.into_vec(), analytic, Segments::new(&[("pooled", ps.len())]), Box::new(f) as Box<Eval<'static>>))
            },
        },
        Check {
            name: "softmax_ce",
            run: |rng, fault| {
                let ls = Shape::new(4, 2, 1, 1);
                let logits = Tensor::from_fn(ls, |_, _, _, _| rng.uniform(-3.0, 3.0));
                let labels: Vec<usize> = (0..4).map(|_| rng.below(2)).collect();
                let mut analytic = softmax_ce(&logits, &labels)?.grad_logits.into_vec();
                corrupt(&mut analytic, fault);
                let f = move |t: &[f64]| Ok((softmax_ce(&Tensor::from_vec(ls, t.to_vec())?, &labels)?.loss, 0u64));
                Ok((logits.into_vec(), analytic, Segments::new(&[("logits", 8)]), Box::new(f) as Box<Eval<'static>>))
            },
        },
        Check {
            name: "sparsity",
            run: |rng, fault| {
                let cs = Shape::new(3, 4, 2, 2);
                let code = rand_uniform(rng, cs, 0.05, 1.0)?;
                let mut analytic = sparsity_grad(&code)?.into_vec();
                corrupt(&mut analytic, fault);
                let f = move |t: &[f64]| Ok((sparsity(&Tensor::from_vec(cs, t.to_vec())?)?, 0u64));
                Ok((code.into_vec(), analytic, Segments::new(&[("code", cs.len())]), Box::new(f) as Box<Eval<'static>>))
            },
        },
        Check {
            name: "reconstruction",
            run: |rng, fault| {
                let xs = Shape::new(3, 1, 4, 4);
                let ws = Shape::new(2, 1, 3, 3);
                let lambda = 0.05;
                let x = rand(rng, xs);
                let x_hat = rand(rng, xs);
                let w = rand(rng, ws);
                let mut analytic = [reconstruction_grad(&x, &x_hat)?.data(), weight_decay_grad(&w, lambda).data()].concat();
                corrupt(&mut analytic, fault);
                let theta = [x_hat.data(), w.data()].concat();
                let f = move |t: &[f64]| {
                    let mut off = 0;
                    let xh = slice_tensor(t, &mut off, xs);
                    let w = slice_tensor(t, &mut off, ws);
                    Ok((reconstruction_cost(&x, &xh, [&w], lambda)?, 0u64))
                };
                Ok((theta, analytic, Segments::new(&[("x_hat", xs.len()), ("weight", ws.len())]), Box::new(f) as Box<Eval<'static>>))
            },
        },
        Check {
            name: "objective (baseline)",
            run: |rng, fault| network_check(rng, fault, micro_12(Mode::Baseline)),
        },
        Check {
            name: "objective (enhanced)",
            run: |rng, fault| network_check(rng, fault, micro_12(Mode::Enhanced)),
        },
        Check {
            name: "objective (8x8)",
            run: |rng, fault| network_check(rng, fault, micro_8()),
        },
    ]
}

/// 12×12 patches, 2 + 2 filters of 5×5 and 3×3, pooling 3×3 stride 1.
pub fn micro_12(mode: Mode) -> Architecture {
    Architecture {
        patch: 12,
        conv1_filters: 2,
        conv1_kernel: 5,
        conv2_filters: 2,
        conv2_kernel: 3,
        pool_window: 3,
        pool_stride: 1,
        conv_stride: 1,
        mode,
    }
}

/// 8×8 patches, 2 + 2 filters of 3×3, pooling 2×2 stride 1.
pub fn micro_8() -> Architecture {
    Architecture {
        patch: 8,
        conv1_filters: 2,
        conv1_kernel: 3,
        conv2_filters: 2,
        conv2_kernel: 3,
        pool_window: 2,
        pool_stride: 1,
        conv_stride: 1,
        mode: Mode::Enhanced,
    }
}

fn trace_pattern(t: &ForwardTrace) -> u64 {
    let mut h = DefaultHasher::new();
    for e in std::iter::once(&t.encode).chain(&t.reencode) {
        positive_mask(&e.conv1_pre).hash(&mut h);
        positive_mask(&e.conv2_pre).hash(&mut h);
        e.idx1.coords().hash(&mut h);
        e.idx2.coords().hash(&mut h);
        // a filter whose code mass crosses zero changes the entropy's support
        e.pool2.data().iter().map(|&v| v > 0.0).collect::<Vec<_>>().hash(&mut h);
    }
    if let Some(d) = &t.decode {
        positive_mask(&d.deconv2_pre).hash(&mut h);
    }
    h.finish()
}

fn network_check(
    rng: &mut Rng,
    fault: bool,
    arch: Architecture,
) -> Result<(Vec<f64>, Vec<f64>, Segments, Box<Eval<'static>>)> {
    let mut params = NetworkParams::new(arch, rng.next_u64())?;
    // nonzero biases so the check covers them away from the zero-init point
    for s in params.slices_mut() {
        if s.len() <= 2 {
            s.iter_mut().for_each(|v| *v = rng.uniform(-0.1, 0.1));
        }
    }
    for b in [&mut params.conv1.bias, &mut params.conv2.bias] {
        b.iter_mut().for_each(|v| *v = rng.uniform(0.0, 0.2));
    }
    let n = 3;
    let x = rand_uniform(rng, arch.input_shape(n), 0.0, 1.0)?;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let weights = ObjectiveWeights {
        lambda: 0.01,
        lambda_s: 0.1,
        w_rec: 1.0,
    };
    let trace = forward(&params, &x)?;
    let mut analytic: Vec<f64> = objective_gradients(&params, &trace, &labels, &weights)?.grads.slices().concat();
    corrupt(&mut analytic, fault);
    let theta = params.flat();
    let names = params.slice_names();
    let lens: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
    let parts: Vec<(&str, usize)> = names.into_iter().zip(lens).collect();
    let seg = Segments::new(&parts);
    let f = move |t: &[f64]| {
        let mut p = params.clone();
        p.set_flat(t)?;
        let trace = forward(&p, &x)?;
        let loss = objective_value(&p, &trace, &labels, &weights)?;
        Ok((loss.total, trace_pattern(&trace)))
    };
    Ok((theta, analytic, seg, Box::new(f) as Box<Eval<'static>>))
}

/// Names of every check, in run order.
pub fn check_names() -> Vec<&'static str> {
    checks().iter().map(|c| c.name).collect()
}

/// Runs every check over `opts.seeds` seeds derived from `opts.base_seed`.
pub fn run_all(opts: &Options) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for check in checks() {
        let fault = opts.fault.as_deref() == Some(check.name);
        let mut report = CheckReport {
            name: check.name,
            seeds: opts.seeds,
            checked: 0,
            skipped: 0,
            worst: None,
        };
        for k in 0..opts.seeds {
            let seed = opts.base_seed.wrapping_add(k as u64);
            let mut rng = Rng::new(seed ^ fingerprint(&check.name));
            let (theta, analytic, seg, f) = (check.run)(&mut rng, fault)?;
            let mut tally = Tally {
                segments: &seg,
                checked: 0,
                skipped: 0,
                worst: report.worst.take(),
            };
            tally.run(seed, &theta, &analytic, &*f)?;
            report.checked += tally.checked;
            report.skipped += tally.skipped;
            report.worst = tally.worst;
        }
        out.push(report);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn every_check_passes_on_a_few_seeds() {
        let reports = run_all(&Options {
            seeds: 3,
            base_seed: 11,
            fault: None,
        })
        .unwrap();
        for r in &reports {
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn injected_fault_is_caught_and_named() {
        for name in ["conv (stride 1)", "objective (enhanced)"] {
            let reports = run_all(&Options {
                seeds: 1,
                base_seed: 2,
                fault: Some(name.into()),
            })
            .unwrap();
            let failed: Vec<_> = reports.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
            assert_eq!(failed, vec![name]);
        }
    }
}
