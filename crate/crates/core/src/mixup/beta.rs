//! Beta(α, α) draws built from two Gamma variates.
//!
//! Gamma(shape, 1) uses the Marsaglia–Tsang squeeze for shape ≥ 1 and
//! the `Gamma(shape + 1) * U^(1/shape)` boost below that.

use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

fn gamma_large<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v_cbrt = 1.0 + c * x;
        if v_cbrt <= 0.0 {
            continue;
        }
        let v = v_cbrt * v_cbrt * v_cbrt;
        let u: f64 = rng.sample(Open01);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// One Gamma(shape, 1) draw. `shape` must be positive.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        gamma_large(shape, rng)
    } else {
        let u: f64 = rng.sample(Open01);
        gamma_large(shape + 1.0, rng) * u.powf(1.0 / shape)
    }
}

/// One Beta(a, b) draw via `X / (X + Y)`.
pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    loop {
        let x = sample_gamma(a, rng);
        let y = sample_gamma(b, rng);
        let s = x + y;
        // both underflow only for extremely small shapes
        if s > 0.0 {
            return x / s;
        }
    }
}

/// `n` i.i.d. draws from Beta(α, α).
pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config(format!("alpha must be positive, got {alpha}")));
    }
    Ok((0..n).map(|_| sample_beta(alpha, alpha, rng)).collect())
}
