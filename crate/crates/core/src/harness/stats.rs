//! Small-sample statistics for comparing runs.

use crate::error::{Error, Result};

/// Mean and sample standard deviation (`n - 1` denominator), computed with
/// Welford's update so that a constant list has exactly zero spread.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, &x) in xs.iter().enumerate() {
        let d = x - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (x - mean);
    }
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    (mean, (m2 / (xs.len() - 1) as f64).sqrt())
}

/// Relative improvement `(base - ours) / base * 100`. `None` when `base`
/// is zero.
pub fn relative_improvement(base: f64, ours: f64) -> Option<f64> {
    if base == 0.0 {
        None
    } else {
        Some((base - ours) / base * 100.0)
    }
}

/// Midranks of `|d|` for the nonzero differences.
fn signed_ranks(diffs: &[f64]) -> Vec<(f64, bool)> {
    let mut nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    nz.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let mut out = Vec::with_capacity(nz.len());
    let mut i = 0;
    while i < nz.len() {
        let mut j = i;
        while j + 1 < nz.len() && nz[j + 1].abs() == nz[i].abs() {
            j += 1;
        }
        let rank = (i + j + 2) as f64 / 2.0;
        for d in &nz[i..=j] {
            out.push((rank, *d > 0.0));
        }
        i = j + 1;
    }
    out
}

/// One-sided Wilcoxon signed-rank test of `H1: median(diffs) > 0`.
///
/// Zero differences are dropped; ties get midranks. The p-value is exact
/// (enumeration of all sign assignments) up to 20 nonzero differences and
/// uses the normal approximation beyond. Returns `(W+, p)`.
pub fn wilcoxon_signed_rank_greater(diffs: &[f64]) -> Result<(f64, f64)> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Precondition("non-finite difference".into()));
    }
    let ranked = signed_ranks(diffs);
    let n = ranked.len();
    let w_plus: f64 = ranked.iter().filter(|(_, pos)| *pos).map(|(r, _)| r).sum();
    if n == 0 {
        return Ok((0.0, 1.0));
    }
    if n <= 20 {
        // Twice the ranks are integers, so sums are exact.
        let ranks2: Vec<usize> = ranked.iter().map(|(r, _)| (2.0 * r) as usize).collect();
        let total: usize = ranks2.iter().sum();
        let mut counts = vec![0u64; total + 1];
        counts[0] = 1;
        for &r in &ranks2 {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let observed = (2.0 * w_plus).round() as usize;
        let hits: u64 = counts[observed..].iter().sum();
        let p = hits as f64 / 2f64.powi(n as i32);
        return Ok((w_plus, p));
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0).sqrt();
    let z = (w_plus - mean - 0.5) / sd;
    Ok((w_plus, 1.0 - standard_normal_cdf(z)))
}

fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

// Numerical Recipes erfc, relative error below 1.2e-7.
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98
                                + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Kolmogorov–Smirnov statistic of `samples` against Uniform(0, 1).
pub fn ks_uniform(samples: &[f64]) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = x.clamp(0.0, 1.0);
            (((i + 1) as f64 / n) - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Large-sample KS critical value at the 1% level.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}
