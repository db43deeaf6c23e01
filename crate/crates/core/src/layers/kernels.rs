//! Matrix kernels behind the convolution layers.
//!
//! `gemm_bias_ordered` accumulates every output cell as
//! `bias + a[0]*b[0] + a[1]*b[1] + ...` strictly in reduction order, with no
//! fused multiply-add, so its results are bit-identical to a naive nested
//! loop. The backward passes have no such constraint and go through
//! `matrixmultiply`.

/// Geometry of one valid-mode sliding window pass over a single sample.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    /// Rows of the unfolded matrix (`channels * kh * kw`).
    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    /// Columns of the unfolded matrix (`out_h * out_w`).
    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one `(c, h, w)` sample into a `(c*kh*kw, out_h*out_w)` matrix.
pub(crate) fn im2col(x: &[f64], g: &Window, cols: &mut [f64]) {
    let np = g.positions();
    debug_assert_eq!(x.len(), g.channels * g.in_h * g.in_w);
    debug_assert_eq!(cols.len(), g.patch_len() * np);
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut cols[row * np..(row + 1) * np];
                for oy in 0..g.out_h {
                    let src = &plane[(oy * g.stride + ki) * g.in_w + kj..];
                    let out = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if g.stride == 1 {
                        out.copy_from_slice(&src[..g.out_w]);
                    } else {
                        for (ox, o) in out.iter_mut().enumerate() {
                            *o = src[ox * g.stride];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into a `(c, h, w)` sample.
pub(crate) fn col2im(cols: &[f64], g: &Window, x: &mut [f64]) {
    let np = g.positions();
    debug_assert_eq!(x.len(), g.channels * g.in_h * g.in_w);
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &cols[row * np..(row + 1) * np];
                for oy in 0..g.out_h {
                    let base = (oy * g.stride + ki) * g.in_w + kj;
                    let s = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    if g.stride == 1 {
                        for (d, v) in plane[base..base + g.out_w].iter_mut().zip(s) {
                            *d += v;
                        }
                    } else {
                        for (ox, v) in s.iter().enumerate() {
                            plane[base + ox * g.stride] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// `c[m×n] = bias[m] + a[m×k] · b[k×n]`, each cell reduced in index order.
pub(crate) fn gemm_bias_ordered(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    bias: &[f64],
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && bias.len() >= m && c.len() >= m * n);
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime; the body is safe code.
            unsafe { gemm_bias_avx2(m, k, n, a, b, bias, c) };
            return;
        }
    }
    gemm_bias_body::<4>(m, k, n, a, b, bias, c);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_bias_avx2(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    bias: &[f64],
    c: &mut [f64],
) {
    gemm_bias_body::<8>(m, k, n, a, b, bias, c);
}

const MR: usize = 4;

#[inline(always)]
fn gemm_bias_body<const NR: usize>(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    bias: &[f64],
    c: &mut [f64],
) {
    let mut i = 0;
    while i + MR <= m {
        let rows: [&[f64]; MR] = std::array::from_fn(|r| &a[(i + r) * k..(i + r + 1) * k]);
        let mut j = 0;
        while j + NR <= n {
            let mut acc = [[0.0f64; NR]; MR];
            for r in 0..MR {
                acc[r] = [bias[i + r]; NR];
            }
            for p in 0..k {
                let bp: &[f64; NR] = b[p * n + j..p * n + j + NR].try_into().unwrap();
                for r in 0..MR {
                    let av = rows[r][p];
                    for q in 0..NR {
                        acc[r][q] += av * bp[q];
                    }
                }
            }
            for r in 0..MR {
                c[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(&acc[r]);
            }
            j += NR;
        }
        for jj in j..n {
            for r in 0..MR {
                let mut s = bias[i + r];
                for p in 0..k {
                    s += rows[r][p] * b[p * n + jj];
                }
                c[(i + r) * n + jj] = s;
            }
        }
        i += MR;
    }
    for ii in i..m {
        let row = &a[ii * k..(ii + 1) * k];
        let out = &mut c[ii * n..(ii + 1) * n];
        out.fill(bias[ii]);
        for (p, &av) in row.iter().enumerate() {
            for (o, &bv) in out.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// Strided read-only matrix view for [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    /// Row-major `rows × cols`.
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// Transposed view of a row-major `cols × rows` buffer.
    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn fits(&self) -> bool {
        self.rows == 0
            || self.cols == 0
            || (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < self.data.len()
    }
}

/// `c = alpha * a · b + beta * c`, with `c` row-major `a.rows × b.cols`.
pub(crate) fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert!(a.fits() && b.fits(), "gemm operand view out of bounds");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n, "gemm output too small");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every index touched is bounded by the `fits` checks above and
    // `c.len() >= m * n` for the row-major output.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = bias[i];
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn ordered_gemm_is_bit_identical_to_naive() {
        let mut rng = Rng::new(11);
        for &(m, k, n) in &[(1, 1, 1), (4, 9, 8), (7, 25, 19), (13, 3, 33), (64, 25, 100)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let bias: Vec<f64> = (0..m).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let mut c = vec![0.0; m * n];
            gemm_bias_ordered(m, k, n, &a, &b, &bias, &mut c);
            let want = naive(m, k, n, &a, &b, &bias);
            assert!(c.iter().zip(&want).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn gemm_transposed_views() {
        // a: 2×3, b stored as 2×3 and used transposed (3×2)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, -1.0, 2.0, 1.0, 0.0];
        let mut c = [0.0; 4];
        gemm(1.0, MatRef::new(&a, 2, 3), MatRef::new(&b, 2, 3).t(), 0.0, &mut c);
        assert_eq!(c, [-2.0, 4.0, -2.0, 13.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = Window {
            channels: 2,
            in_h: 7,
            in_w: 6,
            kh: 3,
            kw: 2,
            stride: 2,
            out_h: 3,
            out_w: 3,
        };
        let mut rng = Rng::new(5);
        let x: Vec<f64> = (0..2 * 7 * 6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let y: Vec<f64> = (0..g.patch_len() * g.positions()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, &g, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
