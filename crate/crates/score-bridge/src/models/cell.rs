//! Two-gene cell differentiation model: expression levels on R² with
//! self-activation, mutual inhibition and inactivation,
//! f_i(x) = x_i⁴/(c + x_i⁴) + c/(c + x_j⁴) − x_i with c = 2⁻⁴, and isotropic
//! noise σ_X I₂. The drift is bistable: the undifferentiated state (1, 1)
//! and a swap-symmetric pair of differentiated states are all stable fixed
//! points, located numerically by Newton iteration from a coarse grid.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sde::DiffusionModel;

#[derive(Clone, Debug)]
pub struct CellModel<F> {
    pub sigma_x: F,
    pub threshold: F,
}

impl<F: Scalar> CellModel<F> {
    pub fn new(sigma_x: F) -> Result<Self> {
        if !(sigma_x > F::zero()) {
            return Err(Error::InvalidInput(format!(
                "sigma_x must be positive, got {sigma_x}"
            )));
        }
        Ok(Self {
            sigma_x,
            threshold: F::cast(0.0625),
        })
    }

    fn jacobian(&self, x: &[F]) -> [F; 4] {
        let c = self.threshold;
        let four = F::cast(4.0);
        let diag = |xi: F| {
            let xi2 = xi * xi;
            let xi3 = xi2 * xi;
            let den = c + xi2 * xi2;
            four * c * xi3 / (den * den) - F::one()
        };
        let off = |xj: F| {
            let xj2 = xj * xj;
            let xj3 = xj2 * xj;
            let den = c + xj2 * xj2;
            -four * c * xj3 / (den * den)
        };
        [diag(x[0]), off(x[1]), off(x[0]), diag(x[1])]
    }

    /// Stable fixed points of the drift, found by Newton iteration from a
    /// coarse grid over [0, 2.5]², deduplicated and sorted by first
    /// component. Stability means both Jacobian eigenvalues have negative
    /// real part.
    pub fn stable_fixed_points(&self) -> Result<Vec<Vec<F>>> {
        let mut roots: Vec<Vec<F>> = Vec::new();
        let step = F::cast(0.25);
        let res_tol = F::cast(1e-12);
        let dedup_tol = F::cast(1e-6);
        for i in 0..=10usize {
            for j in 0..=10usize {
                let mut x = vec![F::cast(i) * step, F::cast(j) * step];
                let mut converged = false;
                for _ in 0..100 {
                    let f = self.drift_vec(F::zero(), &x);
                    if f[0].abs().max(f[1].abs()) < res_tol {
                        converged = true;
                        break;
                    }
                    let jac = self.jacobian(&x);
                    let det = jac[0] * jac[3] - jac[1] * jac[2];
                    if det.abs() < F::cast(1e-14) {
                        break;
                    }
                    let dx0 = (jac[3] * f[0] - jac[1] * f[1]) / det;
                    let dx1 = (-jac[2] * f[0] + jac[0] * f[1]) / det;
                    x[0] = x[0] - dx0;
                    x[1] = x[1] - dx1;
                    if !x[0].is_finite() || !x[1].is_finite() {
                        break;
                    }
                }
                if !converged {
                    continue;
                }
                let jac = self.jacobian(&x);
                let trace = jac[0] + jac[3];
                let det = jac[0] * jac[3] - jac[1] * jac[2];
                if !(trace < F::zero() && det > F::zero()) {
                    continue;
                }
                if roots
                    .iter()
                    .any(|r| (r[0] - x[0]).abs() + (r[1] - x[1]).abs() < dedup_tol)
                {
                    continue;
                }
                roots.push(x);
            }
        }
        if roots.is_empty() {
            return Err(Error::RootSearch(
                "no stable fixed point found on the search grid".into(),
            ));
        }
        roots.sort_by(|a, b| {
            a[0].partial_cmp(&b[0])
                .unwrap()
                .then(a[1].partial_cmp(&b[1]).unwrap())
        });
        Ok(roots)
    }

    /// The differentiated target state: the stable fixed point with
    /// x₁ < x₂.
    pub fn differentiated_state(&self) -> Result<Vec<F>> {
        self.stable_fixed_points()?
            .into_iter()
            .find(|r| r[0] < r[1])
            .ok_or_else(|| Error::RootSearch("no stable fixed point with x1 < x2".into()))
    }
}

impl<F: Scalar> DiffusionModel<F> for CellModel<F> {
    fn dim(&self) -> usize {
        2
    }

    fn name(&self) -> &str {
        "cell"
    }

    fn drift(&self, _t: F, x: &[F], out: &mut [F]) {
        let c = self.threshold;
        let x0_4 = x[0] * x[0] * x[0] * x[0];
        let x1_4 = x[1] * x[1] * x[1] * x[1];
        out[0] = x0_4 / (c + x0_4) + c / (c + x1_4) - x[0];
        out[1] = x1_4 / (c + x1_4) + c / (c + x0_4) - x[1];
    }

    fn sigma(&self, _t: F, _x: &[F], out: &mut [F]) {
        out.fill(F::zero());
        out[0] = self.sigma_x;
        out[3] = self.sigma_x;
    }

    fn sigma_sq(&self, _t: F, _x: &[F], out: &mut [F]) {
        out.fill(F::zero());
        let s2 = self.sigma_x * self.sigma_x;
        out[0] = s2;
        out[3] = s2;
    }
}
