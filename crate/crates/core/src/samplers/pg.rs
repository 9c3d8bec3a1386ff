//! Polya-Gamma `PG(1, c)` draws.
//!
//! The exact sampler is the alternating-series accept/reject scheme for the
//! Jacobi distribution `J*(1, z)` with `z = |c|/2` and `PG(1, c) = J*(1, z)/4`:
//! the proposal is a mixture of a truncated inverse Gaussian on `(0, t]` and
//! an exponential tail on `(t, ∞)`, with `t = 0.64`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

const TRUNC: f64 = 0.64;

/// Number of gamma terms used by [`sample_pg_truncated`].
pub const TRUNCATED_TERMS: usize = 200;

/// `E[PG(1, c)] = tanh(c/2) / (2c)`, with the limit `1/4` at zero.
pub fn pg_mean(c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-4 {
        0.25 - c * c / 48.0
    } else {
        (0.5 * c).tanh() / (2.0 * c)
    }
}

/// One exact draw from `PG(1, c)`.
pub fn sample_pg<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    0.25 * sample_jacobi_star(0.5 * c.abs(), rng)
}

fn sample_jacobi_star<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let k = PI * PI / 8.0 + 0.5 * z * z;
    let log_p = (PI / (2.0 * k)).ln() - k * TRUNC;
    let log_q = std::f64::consts::LN_2 + log_ig_cdf_mass(TRUNC, z);
    // probability of proposing from the exponential tail
    let tail_prob = 1.0 / (1.0 + (log_q - log_p).exp());
    loop {
        let x = if rng.random::<f64>() < tail_prob {
            let e: f64 = Exp1.sample(rng);
            TRUNC + e / k
        } else {
            truncated_inverse_gaussian(z, TRUNC, rng)
        };
        let mut s = series_coef(0, x);
        let u = rng.random::<f64>() * s;
        let mut n = 0u32;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if u <= s {
                    return x;
                }
            } else {
                s += series_coef(n, x);
                if u > s {
                    break;
                }
            }
        }
    }
}

/// Piecewise coefficients of the alternating series for the `J*(1, 0)` density.
fn series_coef(n: u32, x: f64) -> f64 {
    let np = n as f64 + 0.5;
    if x > TRUNC {
        PI * np * (-0.5 * np * np * PI * PI * x).exp()
    } else {
        (2.0 / (PI * x)).powf(1.5) * PI * np * (-2.0 * np * np / x).exp()
    }
}

/// `log( e^{-z} · P[IG(1/z, 1) ≤ t] )`, continuous at `z = 0`.
fn log_ig_cdf_mass(t: f64, z: f64) -> f64 {
    let rt = (1.0 / t).sqrt();
    let b = rt * (t * z - 1.0);
    let a = -rt * (t * z + 1.0);
    let first = -z + log_ndtr(b);
    let second = z + log_ndtr(a);
    let hi = first.max(second);
    hi + ((first - hi).exp() + (second - hi).exp()).ln()
}

/// `log Φ(x)`, accurate in the far lower tail.
fn log_ndtr(x: f64) -> f64 {
    if x > -30.0 {
        (0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)).ln()
    } else {
        // Mills-ratio asymptotic
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// Inverse Gaussian `IG(1/z, 1)` restricted to `(0, t)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, t: f64, rng: &mut R) -> f64 {
    let mu = if z > 0.0 { 1.0 / z } else { f64::INFINITY };
    if mu > t {
        // right-truncated Lévy proposal, tilted by exp(-z² x / 2)
        loop {
            let x = loop {
                let e1: f64 = Exp1.sample(rng);
                let e2: f64 = Exp1.sample(rng);
                if e1 * e1 <= 2.0 * e2 / t {
                    let d = 1.0 + t * e1;
                    break t / (d * d);
                }
            };
            if rng.random::<f64>() <= (-0.5 * z * z * x).exp() {
                return x;
            }
        }
    } else {
        loop {
            let n: f64 = StandardNormal.sample(rng);
            let y = n * n;
            let my = mu * y;
            let mut x = mu + 0.5 * mu * my - 0.5 * mu * (4.0 * my + my * my).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x < t {
                return x;
            }
        }
    }
}

/// Approximate `PG(1, c)` draw from the first `terms` terms of the
/// infinite-convolution representation
/// `ω = (2π²)⁻¹ Σ g_k / ((k − ½)² + c²/(4π²))`, `g_k ~ Gamma(1, 1)`,
/// with the omitted tail replaced by its mean.
pub fn sample_pg_truncated<R: Rng + ?Sized>(c: f64, terms: usize, rng: &mut R) -> f64 {
    let c2 = c * c / (4.0 * PI * PI);
    let norm = 1.0 / (2.0 * PI * PI);
    let mut draw = 0.0;
    let mut head_mean = 0.0;
    for k in 1..=terms {
        let h = k as f64 - 0.5;
        let w = norm / (h * h + c2);
        let g: f64 = Exp1.sample(rng);
        draw += g * w;
        head_mean += w;
    }
    draw + (pg_mean(c) - head_mean).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::rng_from_seed;

    fn mean_of(n: usize, mut f: impl FnMut() -> f64) -> f64 {
        (0..n).map(|_| f()).sum::<f64>() / n as f64
    }

    #[test]
    fn mean_identity_small_sample() {
        let mut rng = rng_from_seed(11);
        for &c in &[0.0, 1.0, 5.0, -5.0] {
            let m = mean_of(20_000, || sample_pg(c, &mut rng));
            assert!((m - pg_mean(c)).abs() < 0.006, "c={c}: {m} vs {}", pg_mean(c));
        }
    }

    #[test]
    fn draws_are_positive_even_for_large_c() {
        let mut rng = rng_from_seed(3);
        for &c in &[0.0, 1e-8, 0.3, 40.0, 300.0] {
            for _ in 0..2000 {
                let w = sample_pg(c, &mut rng);
                assert!(w > 0.0 && w.is_finite(), "c={c} gave {w}");
            }
        }
        let m = mean_of(5000, || sample_pg(300.0, &mut rng));
        assert!((m - pg_mean(300.0)).abs() < 0.02 * pg_mean(300.0));
    }

    #[test]
    fn mean_identity_matches_series_sum() {
        // Σ_k 1/(2π²((k-½)² + c²/4π²)) evaluated far out
        for &c in &[0.1f64, 1.0, 5.0] {
            let c2 = c * c / (4.0 * PI * PI);
            let series: f64 = (1..2_000_000)
                .map(|k| {
                    let h = k as f64 - 0.5;
                    1.0 / (2.0 * PI * PI * (h * h + c2))
                })
                .sum();
            assert!((series - pg_mean(c)).abs() < 1e-7);
        }
        assert!((pg_mean(1.0) - 0.231059).abs() < 1e-6);
        assert!((pg_mean(5.0) - 0.098661).abs() < 1e-6);
    }

    #[test]
    fn log_ndtr_is_continuous_at_switch() {
        let a = log_ndtr(-29.999_999);
        let b = log_ndtr(-30.000_001);
        assert!((a - b).abs() < 1e-4);
    }
}
