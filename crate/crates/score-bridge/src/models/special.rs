//! Modified Bessel functions of the first kind, I_ν, and their derivative
//! J_ν = I_ν' = (I_{ν−1} + I_{ν+1})/2, for real order ν ≥ 0 (internally
//! ν > −1) and x > 0.
//!
//! For x ≤ 30 the ascending power series is summed directly (all terms
//! positive, no cancellation). For x > 30 an exponentially scaled value
//! e^{−x} I_q(x) is computed from the large-argument expansion at the
//! fractional base orders q, q+1 ∈ [0, 2), then raised to the requested
//! order by the three-term recurrence I_{p+1} = I_{p−1} − (2p/x) I_p, which
//! is benign upward while p < x. Log-scale and ratio accessors avoid
//! overflow when I_ν itself exceeds the f64 range.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for z > 0 (Lanczos approximation).
pub fn ln_gamma<F: Scalar>(z: F) -> F {
    let half = F::cast(0.5);
    if z < half {
        // reflection: Γ(z)Γ(1−z) = π / sin(πz)
        let pi = F::cast(core::f64::consts::PI);
        return (pi / (pi * z).sin()).ln() - ln_gamma(F::one() - z);
    }
    let z = z - F::one();
    let mut sum = F::cast(LANCZOS[0]);
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        sum = sum + F::cast(*c) / (z + F::cast(i));
    }
    let base = z + F::cast(LANCZOS_G) + half;
    let ln_sqrt_two_pi = F::cast(0.918_938_533_204_672_74);
    ln_sqrt_two_pi + (z + half) * base.ln() - base + sum.ln()
}

const SERIES_CUTOFF: f64 = 30.0;
const MAX_SERIES_TERMS: usize = 200;

fn check_args<F: Scalar>(nu: F, x: F) -> Result<()> {
    if !(x > F::zero()) || !x.is_finite() {
        return Err(Error::InvalidInput(format!(
            "bessel_i needs x > 0, got {}",
            x
        )));
    }
    if !(nu > -F::one()) || !nu.is_finite() {
        return Err(Error::InvalidInput(format!(
            "bessel_i supports order > -1, got {}",
            nu
        )));
    }
    Ok(())
}

/// Ascending series at order ν > −1, unscaled.
fn series<F: Scalar>(nu: F, x: F) -> F {
    let half_x = x * F::cast(0.5);
    let mut term = (nu * half_x.ln() - ln_gamma(nu + F::one())).exp();
    let mut sum = term;
    let q = half_x * half_x;
    let eps = F::cast(1e-17);
    for k in 1..=MAX_SERIES_TERMS {
        let k_f = F::cast(k);
        term = term * q / (k_f * (k_f + nu));
        sum = sum + term;
        if term < eps * sum {
            break;
        }
    }
    sum
}

/// Large-argument expansion of e^{−x} I_q(x), accurate for |q| < 2, x ≥ 30.
fn asymptotic_scaled<F: Scalar>(q: F, x: F) -> F {
    let mu = F::cast(4.0) * q * q;
    let eight_x = F::cast(8.0) * x;
    let mut sum = F::one();
    let mut term = F::one();
    let eps = F::cast(1e-17);
    for k in 1..=40usize {
        let two_k_m1 = F::cast(2 * k - 1);
        let next = -term * (mu - two_k_m1 * two_k_m1) / (eight_x * F::cast(k));
        if next.abs() >= term.abs() && k > 1 {
            break; // the expansion started diverging
        }
        term = next;
        sum = sum + term;
        if term.abs() < eps * sum.abs() {
            break;
        }
    }
    sum / (F::cast(core::f64::consts::TAU) * x).sqrt()
}

/// e^{−x} I_ν(x) for ν > −1, x > 0.
fn scaled<F: Scalar>(nu: F, x: F) -> F {
    if x <= F::cast(SERIES_CUTOFF) {
        return series(nu, x) * (-x).exp();
    }
    if nu < F::one() {
        return asymptotic_scaled(nu, x);
    }
    let steps = nu.floor();
    let base = nu - steps;
    let mut prev = asymptotic_scaled(base, x);
    let mut cur = asymptotic_scaled(base + F::one(), x);
    let two = F::cast(2.0);
    let n = steps.as_f64() as usize;
    for j in 0..n - 1 {
        let p = base + F::cast(j + 1);
        let next = prev - two * p / x * cur;
        prev = cur;
        cur = next;
    }
    cur
}

/// I_ν(x). Overflows to infinity for x beyond ≈709; use [`bessel_i_log`]
/// when only the logarithm is needed.
pub fn bessel_i<F: Scalar>(nu: F, x: F) -> Result<F> {
    check_args(nu, x)?;
    Ok(scaled(nu, x) * x.exp())
}

/// ln I_ν(x), stable for large x.
pub fn bessel_i_log<F: Scalar>(nu: F, x: F) -> Result<F> {
    check_args(nu, x)?;
    Ok(scaled(nu, x).ln() + x)
}

/// Derivative J_ν(x) = (I_{ν−1}(x) + I_{ν+1}(x)) / 2.
pub fn bessel_i_dx<F: Scalar>(nu: F, x: F) -> Result<F> {
    check_args(nu, x)?;
    if nu == F::zero() {
        // I_{-1} = I_1
        return bessel_i(F::one(), x);
    }
    let lo = scaled(nu - F::one(), x);
    let hi = scaled(nu + F::one(), x);
    Ok((lo + hi) * F::cast(0.5) * x.exp())
}

/// J_ν(x)/I_ν(x), stable for large arguments where both factors overflow.
pub fn bessel_i_dx_over_i<F: Scalar>(nu: F, x: F) -> Result<F> {
    check_args(nu, x)?;
    let center = scaled(nu, x);
    let paired = if nu == F::zero() {
        scaled(F::one(), x) + scaled(F::one(), x)
    } else {
        scaled(nu - F::one(), x) + scaled(nu + F::one(), x)
    };
    Ok(paired * F::cast(0.5) / center)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ln_gamma_known_values() {
        assert_relative_eq!(ln_gamma(1.0f64), 0.0, epsilon = 1e-13);
        assert_relative_eq!(ln_gamma(2.0f64), 0.0, epsilon = 1e-13);
        assert_relative_eq!(ln_gamma(5.0f64), 24.0f64.ln(), max_relative = 1e-13);
        assert_relative_eq!(
            ln_gamma(0.5f64),
            core::f64::consts::PI.sqrt().ln(),
            max_relative = 1e-13
        );
        // Γ(4.5) = 3.5·2.5·1.5·0.5·√π
        let g45 = (3.5 * 2.5 * 1.5 * 0.5) * core::f64::consts::PI.sqrt();
        assert_relative_eq!(ln_gamma(4.5f64), g45.ln(), max_relative = 1e-13);
    }

    #[test]
    fn half_order_closed_form() {
        // I_{1/2}(x) = sqrt(2/(πx)) sinh(x)
        for &x in &[0.5f64, 2.0, 10.0, 35.0] {
            let expect = (2.0 / (core::f64::consts::PI * x)).sqrt() * x.sinh();
            let got = bessel_i(0.5, x).unwrap();
            assert_relative_eq!(got, expect, max_relative = 1e-10);
            assert_relative_eq!(bessel_i_log(0.5, x).unwrap(), expect.ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn three_half_order_closed_form() {
        // I_{3/2}(x) = sqrt(2/(πx)) (cosh x − sinh x / x)
        for &x in &[0.5f64, 2.0, 10.0, 35.0, 50.0] {
            let expect = (2.0 / (core::f64::consts::PI * x)).sqrt() * (x.cosh() - x.sinh() / x);
            assert_relative_eq!(bessel_i(1.5, x).unwrap(), expect, max_relative = 1e-10);
        }
    }

    #[test]
    fn reference_values() {
        // mpmath.besseli at 30 digits
        let cases: [(f64, f64, f64); 7] = [
            (0.0, 1.0, 1.266_065_877_752_008_335_6),
            (3.5, 0.5, 6.810_359_708_579_381_586_3e-4),
            (3.5, 5.0, 7.417_560_126_111_555_081_7),
            (3.5, 20.0, 3.183_766_335_165_553_059_3e7),
            (3.5, 35.0, 8.988_832_827_971_386_095_3e13),
            (10.0, 35.0, 2.544_947_001_853_476_535_7e13),
            (10.0, 50.0, 1.071_597_159_477_637_046_5e20),
        ];
        for (nu, x, expect) in cases {
            assert_relative_eq!(bessel_i(nu, x).unwrap(), expect, max_relative = 1e-10);
        }
    }

    #[test]
    fn positivity() {
        for &nu in &[0.0f64, 0.3, 1.0, 3.5, 7.25, 10.0] {
            for &x in &[1e-3f64, 0.7, 5.0, 29.9, 30.1, 50.0] {
                assert!(bessel_i(nu, x).unwrap() > 0.0, "I_{nu}({x}) must be positive");
            }
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for &nu in &[0.0f64, 0.5, 2.0, 3.5, 9.0] {
            for &x in &[0.4f64, 3.0, 12.0, 34.0, 48.0] {
                let h = x * 1e-6;
                let up = bessel_i(nu, x + h).unwrap();
                let dn = bessel_i(nu, x - h).unwrap();
                let fd = (up - dn) / (2.0 * h);
                let got = bessel_i_dx(nu, x).unwrap();
                assert_relative_eq!(got, fd, max_relative = 1e-7);
            }
        }
    }

    #[test]
    fn ratio_is_stable_for_huge_arguments() {
        // J/I → 1 as x → ∞; both factors overflow past x ≈ 709.
        let r = bessel_i_dx_over_i(3.5f64, 500.0).unwrap();
        assert!(r.is_finite() && (r - 1.0).abs() < 0.01);
        let r = bessel_i_dx_over_i(3.5f64, 2000.0).unwrap();
        assert!((r - 1.0).abs() < 0.005);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(bessel_i(1.0f64, 0.0).is_err());
        assert!(bessel_i(1.0f64, -2.0).is_err());
        assert!(bessel_i(-1.5f64, 1.0).is_err());
    }
}
