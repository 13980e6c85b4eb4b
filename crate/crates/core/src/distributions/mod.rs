//! Random variate generation and log-densities used by the sampler and the
//! data simulators.
//!
//! Every sampler takes a generic [`Rng`], so any generator works, but chains
//! and simulators are always driven by an [`RngStream`] so that a
//! `(seed, stream)` pair pins down the complete sequence of draws.

mod polya_gamma;
mod rng;

pub use polya_gamma::{polya_gamma_1_mean, polya_gamma_1_variance, sample_polya_gamma_1};
pub use rng::RngStream;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Result, ZidmError};

/// Tolerance on `Σ probs = 1` accepted by [`sample_multinomial`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ZidmError::domain(format!("{name} must be finite and > 0, got {v}")))
    }
}

/// Draws from Gamma(shape, rate).
///
/// Shapes below one are boosted to `shape + 1` and corrected with a uniform
/// power. A draw that underflows to zero is clamped to `f64::MIN_POSITIVE`:
/// an at-risk cell must keep a strictly positive latent value.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    check_positive("gamma shape", shape)?;
    check_positive("gamma rate", rate)?;
    let dist = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| ZidmError::domain(format!("gamma({shape}, {rate}): {e}")))?;
    Ok(dist.sample(rng).max(f64::MIN_POSITIVE))
}

/// Log-density of Gamma(shape, rate) at `x`.
pub fn logpdf_gamma(x: f64, shape: f64, rate: f64) -> Result<f64> {
    check_positive("gamma x", x)?;
    check_positive("gamma shape", shape)?;
    check_positive("gamma rate", rate)?;
    Ok(shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x)
}

/// Draws a point on the simplex by normalizing independent Gamma(alpha_j, 1)
/// draws, consuming the generator in component order.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if alpha.len() < 2 {
        return Err(ZidmError::domain("dirichlet needs at least two components"));
    }
    let mut draws = alpha
        .iter()
        .map(|&a| sample_gamma(a, 1.0, rng))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = draws.iter().sum();
    for d in draws.iter_mut() {
        *d /= total;
    }
    Ok(draws)
}

/// Draws `n` trials over the categories of `probs` by sequential
/// conditional binomials. Categories with zero probability never receive
/// a count and the result always sums to exactly `n`.
pub fn sample_multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    if probs.is_empty() {
        return Err(ZidmError::domain("multinomial needs at least one category"));
    }
    if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(ZidmError::domain(format!("multinomial probability {p} is invalid")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(ZidmError::domain(format!("multinomial probabilities sum to {total}")));
    }

    let mut counts = vec![0u64; probs.len()];
    // suffix[j] = Σ_{k ≥ j} probs[k]; computing it from the back keeps
    // suffix[j] == probs[j] exactly when every later category is empty.
    let mut suffix = vec![0.0; probs.len() + 1];
    for j in (0..probs.len()).rev() {
        suffix[j] = suffix[j + 1] + probs[j];
    }
    let mut remaining = n;
    let last = probs.len() - 1;
    for j in 0..last {
        if remaining == 0 {
            break;
        }
        if probs[j] == 0.0 {
            continue;
        }
        let p = (probs[j] / suffix[j]).clamp(0.0, 1.0);
        let k = Binomial::new(remaining, p)
            .map_err(|e| ZidmError::domain(format!("binomial({remaining}, {p}): {e}")))?
            .sample(rng);
        counts[j] = k;
        remaining -= k;
    }
    if remaining > 0 {
        if probs[last] > 0.0 {
            counts[last] = remaining;
        } else {
            // Rounding left mass on an empty tail; give it to the last
            // category that can receive counts.
            let j = (0..last)
                .rev()
                .find(|&j| probs[j] > 0.0)
                .ok_or_else(|| ZidmError::domain("multinomial has no positive category"))?;
            counts[j] += remaining;
        }
    }
    Ok(counts)
}

/// Multinomial log-mass of counts `z` under probabilities `c / Σc`.
///
/// `c` need not be normalized. Cells with `z_j = c_j = 0` contribute
/// nothing; a positive count on a zero-mass cell yields `-∞`.
pub fn logpmf_multinomial(z: &[u64], c: &[f64]) -> Result<f64> {
    if z.len() != c.len() {
        return Err(ZidmError::shape(format!(
            "counts have {} cells but weights have {}",
            z.len(),
            c.len()
        )));
    }
    if let Some(v) = c.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(ZidmError::domain(format!("multinomial weight {v} is invalid")));
    }
    let total: f64 = c.iter().sum();
    if total <= 0.0 {
        return Err(ZidmError::domain("multinomial weights sum to zero"));
    }
    let ln_total = total.ln();
    let n: u64 = z.iter().sum();
    let mut lp = ln_gamma(n as f64 + 1.0);
    for (&zj, &cj) in z.iter().zip(c) {
        if zj == 0 {
            continue;
        }
        if cj == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let zf = zj as f64;
        lp += zf * (cj.ln() - ln_total) - ln_gamma(zf + 1.0);
    }
    Ok(lp)
}

/// `ln B(a, b)`.
pub fn log_beta_fn(a: f64, b: f64) -> Result<f64> {
    check_positive("beta a", a)?;
    check_positive("beta b", b)?;
    Ok(ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b))
}

/// Log-density of N(mean, var) at `x`.
pub fn logpdf_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (std::f64::consts::TAU * var).ln() - 0.5 * d * d / var
}

pub fn sample_normal<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + sd * z
}

/// `ln(1 / (1 + e^{-x}))` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}
