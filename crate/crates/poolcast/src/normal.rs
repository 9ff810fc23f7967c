//! Scalar Gaussian primitives.
//!
//! Everything downstream (scores, predictive CDFs, tail masses) is built on
//! these. Tail masses are always computed from the complementary error
//! function or a Mills-ratio expansion, never as `1 - cdf`, so deep tails
//! keep full relative accuracy.

use libm::erfc;

pub const LN_2PI: f64 = 1.837_877_066_409_345_6;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Log density of N(mean, sd^2) at `y`.
#[inline]
pub fn ln_pdf(y: f64, mean: f64, sd: f64) -> f64 {
    let z = (y - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * LN_2PI
}

/// Standard normal log density.
#[inline]
pub fn std_ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * LN_2PI
}

/// Standard normal CDF.
#[inline]
pub fn std_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal survival function P(Z > z).
#[inline]
pub fn std_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// CDF of N(mean, sd^2).
#[inline]
pub fn cdf(y: f64, mean: f64, sd: f64) -> f64 {
    std_cdf((y - mean) / sd)
}

/// Survival function of N(mean, sd^2).
#[inline]
pub fn sf(y: f64, mean: f64, sd: f64) -> f64 {
    std_sf((y - mean) / sd)
}

/// log P(Z > z) for standard normal, finite for all finite `z`.
///
/// Below the erfc underflow region the direct formula is exact; beyond it the
/// asymptotic Mills expansion log phi(z) - log z + log(1 - z^-2 + 3 z^-4 - 15 z^-6)
/// takes over.
pub fn std_ln_sf(z: f64) -> f64 {
    if z < 30.0 {
        (0.5 * erfc(z * FRAC_1_SQRT_2)).ln()
    } else {
        let zi = 1.0 / (z * z);
        let series = 1.0 + zi * (-1.0 + zi * (3.0 - 15.0 * zi));
        std_ln_pdf(z) - z.ln() + series.ln()
    }
}

/// log P(Z <= z) for standard normal.
#[inline]
pub fn std_ln_cdf(z: f64) -> f64 {
    std_ln_sf(-z)
}

/// log P(Y > y) for Y ~ N(mean, sd^2).
#[inline]
pub fn ln_sf(y: f64, mean: f64, sd: f64) -> f64 {
    std_ln_sf((y - mean) / sd)
}

/// log P(Y <= y) for Y ~ N(mean, sd^2).
#[inline]
pub fn ln_cdf(y: f64, mean: f64, sd: f64) -> f64 {
    std_ln_cdf((y - mean) / sd)
}

/// Hazard (inverse Mills) ratio phi(z) / (1 - Phi(z)), stable for large z.
#[inline]
pub fn std_hazard(z: f64) -> f64 {
    (std_ln_pdf(z) - std_ln_sf(z)).exp()
}

/// log(exp(a) + exp(b)) without overflow; handles -inf arguments.
#[inline]
pub fn log_sum_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Composite-Simpson quadrature of the standard normal pdf, used as an
    // implementation-independent oracle for the erf-based CDF.
    fn cdf_quadrature(z: f64) -> f64 {
        // Mass below -14 is ~1e-44, far under the comparison tolerance.
        let (a, b) = (-14.0, z);
        let n = 60_000usize; // even
        let h = (b - a) / n as f64;
        let pdf = |x: f64| std_ln_pdf(x).exp();
        let mut acc = pdf(a) + pdf(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 * pdf(x) } else { 2.0 * pdf(x) };
        }
        acc * h / 3.0
    }

    #[test]
    fn cdf_matches_quadrature_oracle() {
        // 1000 deterministic points across [-8, 8].
        for i in 0..1000 {
            let z = -8.0 + 16.0 * (i as f64 + 0.5) / 1000.0;
            let q = cdf_quadrature(z);
            assert!(
                (std_cdf(z) - q).abs() < 1e-12,
                "z={z}: cdf={} quad={q}",
                std_cdf(z)
            );
        }
    }

    #[test]
    fn known_values() {
        assert_relative_eq!(std_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(std_ln_pdf(0.0), -0.918_938_533_204_672_7, epsilon = 1e-15);
        // 1 - Phi(5)
        assert_relative_eq!(std_sf(5.0), 2.866_515_719_235_352e-7, max_relative = 1e-12);
    }

    #[test]
    fn ln_sf_continuous_across_asymptotic_switch() {
        // Direct erfc formula and Mills expansion must agree near the switch.
        for &z in &[29.0, 29.5, 29.9] {
            let direct = (0.5 * erfc(z * FRAC_1_SQRT_2)).ln();
            let zi = 1.0 / (z * z);
            let series = 1.0 + zi * (-1.0 + zi * (3.0 - 15.0 * zi));
            let asym = std_ln_pdf(z) - z.ln() + series.ln();
            assert_relative_eq!(direct, asym, max_relative = 1e-10);
        }
        // Far past the switch it must stay finite.
        assert!(std_ln_sf(100.0).is_finite());
        assert!(std_ln_sf(1e4).is_finite());
    }

    #[test]
    fn ln_sf_matches_sf_in_moderate_range() {
        for i in 0..200 {
            let z = -10.0 + 20.0 * i as f64 / 199.0;
            assert_relative_eq!(std_ln_sf(z), std_sf(z).ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn hazard_large_z_asymptote() {
        // phi/Phi-bar ~ z for large z.
        let z = 50.0;
        let h = std_hazard(z);
        assert!((h - (z + 1.0 / z)).abs() / z < 1e-3, "h={h}");
    }

    #[test]
    fn log_sum_exp_edge_cases() {
        assert_eq!(log_sum_exp(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert_relative_eq!(log_sum_exp(f64::NEG_INFINITY, -1.5), -1.5);
        assert_relative_eq!(log_sum_exp(0.0, 0.0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_relative_eq!(
            log_sum_exp(-1000.0, -1001.0),
            -1000.0 + (1.0 + (-1.0_f64).exp()).ln(),
            epsilon = 1e-12
        );
    }
}
