//! Dense rank-4 tensors and the deterministic PRNG used for every seeded
//! decision in the crate (weight init, shuffling, augmentation, synthesis).
//!
//! Layout is row-major `(n, c, h, w)`; `data[((n * c + c) * h + h) * w + w]`.

use std::fmt;

use crate::error::{Error, Result};

/// Extent of a tensor along its four axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one sample (`c * h * w`).
    pub const fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn with_batch(self, n: usize) -> Self {
        Shape { n, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl From<(usize, usize, usize, usize)> for Shape {
    fn from((n, c, h, w): (usize, usize, usize, usize)) -> Self {
        Shape { n, c, h, w }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn full(shape: impl Into<Shape>, value: f64) -> Self {
        let shape = shape.into();
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.len() {
            return Err(Error::InvalidArgument(format!(
                "tensor of shape {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor from a closure over `(n, c, h, w)` coordinates.
    pub fn from_fn(
        shape: impl Into<Shape>,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let s = self.shape;
        debug_assert!(n < s.n && c < s.c && h < s.h && w < s.w);
        ((n * s.c + c) * s.h + h) * s.w + w
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: f64) {
        let i = self.index(n, c, h, w);
        self.data[i] = value;
    }

    /// Contiguous slice holding sample `n`.
    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.shape.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.shape.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(self, shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        if shape.len() != self.shape.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    /// Flattens each sample into a `(n, c*h*w, 1, 1)` vector.
    pub fn flatten(self) -> Self {
        let s = self.shape;
        Tensor {
            shape: Shape::new(s.n, s.sample_len(), 1, 1),
            data: self.data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add_assign",
                left: self.shape,
                right: other.shape,
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Inner product over all elements.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "dot",
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks single-sample tensors of equal shape along the batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Self> {
        let first = items.first().ok_or(Error::Empty("stack"))?.shape;
        let mut data = Vec::with_capacity(first.len() * items.len());
        let mut n = 0;
        for t in items {
            if t.shape.with_batch(first.n) != first {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    left: first,
                    right: t.shape,
                });
            }
            n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: first.with_batch(n),
            data,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Max,
    SqNorm,
}

pub fn map2(a: &Tensor, b: &Tensor, op: BinaryOp) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            op: "map2",
            left: a.shape,
            right: b.shape,
        });
    }
    let f: fn(f64, f64) -> f64 = match op {
        BinaryOp::Add => |x, y| x + y,
        BinaryOp::Sub => |x, y| x - y,
        BinaryOp::Mul => |x, y| x * y,
    };
    Ok(Tensor {
        shape: a.shape,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    })
}

pub fn reduce(a: &Tensor, op: Reduction) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Empty("reduce"));
    }
    Ok(match op {
        Reduction::Sum => a.data.iter().sum(),
        Reduction::Max => a.data.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Reduction::SqNorm => a.data.iter().map(|v| v * v).sum(),
    })
}

/// SplitMix64 generator.
///
/// Each draw adds the golden-ratio increment `0x9E3779B97F4A7C15` to the
/// state and returns the state passed through the finalizer
/// `z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31`.
/// Floats take the top 53 bits: `(x >> 11) * 2^-53`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(Self::GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let v = lo + (hi - lo) * self.next_f64();
        // rounding can land exactly on `hi` for wide ranges
        if v >= hi {
            lo.max(hi - (hi - lo) * f64::EPSILON)
        } else {
            v
        }
    }

    /// Uniform integer in `[0, bound)`; `bound` must be positive.
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "Rng::below requires a positive bound");
        // Lemire's multiply-shift; bias is < 2^-32 for the bounds used here
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Child generator whose seed is the next draw of this one.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }
}

pub fn rand_uniform(rng: &mut Rng, shape: impl Into<Shape>, lo: f64, hi: f64) -> Result<Tensor> {
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "rand_uniform requires lo < hi, got [{lo}, {hi})"
        )));
    }
    let shape = shape.into();
    let data = (0..shape.len()).map(|_| rng.uniform(lo, hi)).collect();
    Ok(Tensor { shape, data })
}
