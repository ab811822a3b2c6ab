//! Dense helpers for the small symmetric systems (d ≤ 8 in the benchmarks)
//! behind the Gaussian transition densities. Matrices are row-major slices.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    // four independent accumulators; a single fold chain serializes the
    // floating-point adds and quarters the throughput
    let mut acc = [F::zero(); 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] = acc[0] + x[0] * y[0];
        acc[1] = acc[1] + x[1] * y[1];
        acc[2] = acc[2] + x[2] * y[2];
        acc[3] = acc[3] + x[3] * y[3];
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        acc[0] = acc[0] + *x * *y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// out = A x for a row-major `dim × dim` matrix.
#[inline]
pub fn mat_vec<F: Scalar>(a: &[F], x: &[F], dim: usize, out: &mut [F]) {
    debug_assert_eq!(a.len(), dim * dim);
    for (i, o) in out.iter_mut().enumerate().take(dim) {
        *o = dot(&a[i * dim..(i + 1) * dim], x);
    }
}

/// vᵀ A v for symmetric A.
#[inline]
pub fn weighted_norm_sq<F: Scalar>(a: &[F], v: &[F], dim: usize) -> F {
    let mut acc = F::zero();
    for i in 0..dim {
        acc = acc + v[i] * dot(&a[i * dim..(i + 1) * dim], v);
    }
    acc
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct SpdFactor<F> {
    dim: usize,
    lower: Vec<F>,
}

impl<F: Scalar> SpdFactor<F> {
    /// Factor `matrix = L Lᵀ`. Fails if a pivot is not strictly positive.
    pub fn new(matrix: &[F], dim: usize) -> Result<Self> {
        debug_assert_eq!(matrix.len(), dim * dim);
        let mut l = vec![F::zero(); dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let mut sum = matrix[i * dim + j];
                for k in 0..j {
                    sum = sum - l[i * dim + k] * l[j * dim + k];
                }
                if i == j {
                    if !(sum > F::zero()) || !sum.is_finite() {
                        return Err(Error::NotPositiveDefinite {
                            t: f64::NAN,
                            context: format!(" (pivot {} = {:e})", i, sum.as_f64()),
                        });
                    }
                    l[i * dim + j] = sum.sqrt();
                } else {
                    l[i * dim + j] = sum / l[j * dim + j];
                }
            }
        }
        Ok(Self { dim, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// log det of the factored matrix.
    pub fn log_det(&self) -> F {
        let mut acc = F::zero();
        for i in 0..self.dim {
            acc = acc + self.lower[i * self.dim + i].ln();
        }
        acc + acc
    }

    /// Solve L y = b in place.
    pub fn half_solve(&self, b: &mut [F]) {
        let d = self.dim;
        for i in 0..d {
            let mut sum = b[i];
            for k in 0..i {
                sum = sum - self.lower[i * d + k] * b[k];
            }
            b[i] = sum / self.lower[i * d + i];
        }
    }

    /// Solve (L Lᵀ) x = b in place.
    pub fn solve(&self, b: &mut [F]) {
        self.half_solve(b);
        let d = self.dim;
        for i in (0..d).rev() {
            let mut sum = b[i];
            for k in i + 1..d {
                sum = sum - self.lower[k * d + i] * b[k];
            }
            b[i] = sum / self.lower[i * d + i];
        }
    }
}

/// Log density of N(0, scale·A) at `centered`, with A supplied factored.
pub fn gaussian_log_density<F: Scalar>(factor: &SpdFactor<F>, scale: F, centered: &[F]) -> F {
    let d = factor.dim();
    let mut y = centered.to_vec();
    factor.half_solve(&mut y);
    let quad = dot(&y, &y) / scale;
    let ln_two_pi = F::cast(core::f64::consts::TAU).ln();
    let half = F::cast(0.5);
    let log_det = F::cast(d) * (ln_two_pi + scale.ln()) + factor.log_det();
    -half * (log_det + quad)
}
