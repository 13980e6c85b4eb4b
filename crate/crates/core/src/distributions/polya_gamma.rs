//! Exact PG(1, c) variates.
//!
//! Devroye's alternating-series method for the Jacobi J*(1, z) law with
//! z = |c|/2, returning J*/4. The proposal is split at `TRUNCATION`: a
//! truncated exponential to the right and a truncated inverse Gaussian to
//! the left. Acceptance is decided by squeezing a uniform between
//! successive partial sums of the density series.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use statrs::function::erf::erfc;

use crate::error::{Result, ZidmError};

const TRUNCATION: f64 = 0.64;
const PI2_8: f64 = PI * PI / 8.0;

fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// n-th coefficient of the alternating series for the J*(1) density,
/// including the piecewise switch at the truncation point.
fn series_coef(n: u32, x: f64) -> f64 {
    let k = n as f64 + 0.5;
    if x > TRUNCATION {
        PI * k * (-0.5 * k * k * PI * PI * x).exp()
    } else {
        let ln = (PI * k).ln() + 1.5 * (2.0 / (PI * x)).ln() - 2.0 * k * k / x;
        ln.exp()
    }
}

/// P(X < t) for X ~ InverseGaussian(mean 1/z, shape 1).
fn inverse_gaussian_cdf(t: f64, z: f64) -> f64 {
    let root = (1.0 / t).sqrt();
    if z == 0.0 {
        return 2.0 * norm_cdf(-root);
    }
    let left = norm_cdf(root * (t * z - 1.0));
    let tail = norm_cdf(-root * (t * z + 1.0));
    let right = if tail > 0.0 { (2.0 * z + tail.ln()).exp() } else { 0.0 };
    left + right
}

/// Inverse Gaussian (mean 1/z, shape 1) restricted to (0, TRUNCATION).
fn sample_truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = TRUNCATION;
    if z < 1.0 / t {
        // Mean beyond the truncation point: propose from the z = 0 law
        // (a truncated Lévy) and thin by exp(-z² x / 2).
        loop {
            let e1 = loop {
                let e1: f64 = Exp1.sample(rng);
                let e2: f64 = Exp1.sample(rng);
                if e1 * e1 <= 2.0 * e2 / t {
                    break e1;
                }
            };
            let s = 1.0 + t * e1;
            let x = t / (s * s);
            let u: f64 = rng.random();
            if u <= (-0.5 * z * z * x).exp() {
                return x;
            }
        }
    } else {
        let mu = 1.0 / z;
        loop {
            let n: f64 = StandardNormal.sample(rng);
            let y = n * n;
            let my = mu * y;
            let mut x = mu + 0.5 * mu * my - 0.5 * mu * (4.0 * my + my * my).sqrt();
            let u: f64 = rng.random();
            if u > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x < t {
                return x;
            }
        }
    }
}

/// Draws from PG(1, c). Symmetric in the sign of `c`.
pub fn sample_polya_gamma_1<R: Rng + ?Sized>(c: f64, rng: &mut R) -> Result<f64> {
    if !c.is_finite() {
        return Err(ZidmError::domain(format!("polya-gamma tilt must be finite, got {c}")));
    }
    let z = 0.5 * c.abs();
    let k = PI2_8 + 0.5 * z * z;
    let p = PI / (2.0 * k) * (-k * TRUNCATION).exp();
    let q = 2.0 * (-z).exp() * inverse_gaussian_cdf(TRUNCATION, z);
    let right_mass = p / (p + q);

    loop {
        let u: f64 = rng.random();
        let x = if u < right_mass {
            let e: f64 = Exp1.sample(rng);
            TRUNCATION + e / k
        } else {
            sample_truncated_inverse_gaussian(z, rng)
        };

        let mut s = series_coef(0, x);
        let v: f64 = rng.random();
        let y = v * s;
        let mut n = 0u32;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return Ok(0.25 * x);
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// E[PG(1, c)] = tanh(c/2) / (2c), with limit 1/4 at c = 0.
pub fn polya_gamma_1_mean(c: f64) -> f64 {
    if c.abs() < 1e-8 {
        0.25 - c * c / 96.0
    } else {
        (0.5 * c).tanh() / (2.0 * c)
    }
}

/// Var[PG(1, c)] from the infinite-convolution representation, truncated
/// after `terms` gamma components.
pub fn polya_gamma_1_variance(c: f64, terms: usize) -> f64 {
    let shift = c * c / (4.0 * PI * PI);
    let sum: f64 = (1..=terms)
        .map(|k| {
            let d = (k as f64 - 0.5).powi(2) + shift;
            1.0 / (d * d)
        })
        .sum();
    sum / (4.0 * PI.powi(4))
}
