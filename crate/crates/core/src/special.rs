//! Normal-distribution special functions evaluated in a numerically stable way.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// ln(2π).
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Log density of N(mean, var) at `x`.
#[inline]
pub fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Scaled complementary error function, exp(x²)·erfc(x).
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        // erfc(-y) = 2 - erfc(y)
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < 5.0 {
        return (x * x).exp() * libm::erfc(x);
    }
    // Laplace continued fraction, converged to machine precision for x >= 5.
    let mut t = 0.0;
    for k in (1..=30).rev() {
        t = (0.5 * k as f64) / (x + t);
    }
    FRAC_1_SQRT_PI / (x + t)
}

/// ln Φ(z) for the standard normal CDF Φ, accurate deep into both tails.
pub fn ln_ndtr(z: f64) -> f64 {
    if z >= 0.0 {
        (-0.5 * libm::erfc(z * FRAC_1_SQRT_2)).ln_1p()
    } else {
        let y = -z * FRAC_1_SQRT_2;
        (0.5 * erfcx(y)).ln() - y * y
    }
}

/// Inverse Mills ratio φ(α)/(1 − Φ(α)).
#[inline]
pub fn inv_mills(alpha: f64) -> f64 {
    SQRT_2_OVER_PI / erfcx(alpha * FRAC_1_SQRT_2)
}

/// First and second moments of N(mu, sd²) truncated to [0, ∞).
///
/// For a standardized lower bound α = −mu/sd above 3 the moments come from
/// the tail of the Mills-ratio continued fraction, which avoids the
/// cancellation in `mu + sd·λ(α)`.
pub fn trunc_normal_moments(mu: f64, sd: f64) -> (f64, f64) {
    let alpha = -mu / sd;
    if alpha > 3.0 {
        let mut t = 0.0;
        for j in (2..=40).rev() {
            t = j as f64 / (alpha + t);
        }
        let c = 1.0 / (alpha + t);
        let mean = sd * c;
        let var = sd * sd * c * (t - c);
        return (mean, var + mean * mean);
    }
    let lambda = inv_mills(alpha);
    let mean = mu + sd * lambda;
    let var = (sd * sd * (1.0 + alpha * lambda - lambda * lambda)).max(0.0);
    (mean, var + mean * mean)
}

/// ln Σ exp(xᵢ); returns −∞ for an empty slice or all −∞ inputs.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Reference values computed with 40-digit arbitrary precision arithmetic.
    #[test]
    fn erfcx_reference_values() {
        let cases = [
            (-3.0, 16205.988853999586625),
            (-0.5, 1.9523604891825570933),
            (0.0, 1.0),
            (0.7, 0.52593033734944095732),
            (4.9, 0.11287909055975893179),
            (5.1, 0.10861102631393297927),
            (30.0, 0.018795888861416751497),
        ];
        for (x, want) in cases {
            assert_relative_eq!(erfcx(x), want, max_relative = 1e-13);
        }
    }

    #[test]
    fn ln_ndtr_reference_values() {
        let cases = [
            (-40.0, -804.60844201375378817),
            (-10.0, -53.231285150512470578),
            (-1.0, -1.8410216450092635058),
            (0.0, -0.69314718055994530942),
            (3.0, -0.0013508099647481937988),
            (12.0, -1.7764821155218760004e-33),
        ];
        for (z, want) in cases {
            assert_relative_eq!(ln_ndtr(z), want, max_relative = 1e-12);
        }
    }

    #[test]
    fn truncated_moments_reference_values() {
        let cases = [
            (1.0, 1.0, 1.2875999709391783612, 2.2875999709391783612),
            (-2.0, 0.5, 0.11280357224473553638, 0.024392855510528927249),
            (-30.0, 1.0, 0.033259667433677037071, 0.0022099769896888878663),
            (0.0, 2.0, 1.5957691216057307118, 4.0),
            (5.0, 0.1, 5.0, 25.01),
        ];
        for (mu, sd, m1, m2) in cases {
            let (a, b) = trunc_normal_moments(mu, sd);
            assert_relative_eq!(a, m1, max_relative = 1e-11);
            assert_relative_eq!(b, m2, max_relative = 1e-11);
        }
    }

    #[test]
    fn truncated_moments_continuous_at_switch() {
        let below = trunc_normal_moments(-2.999_999_9, 1.0);
        let above = trunc_normal_moments(-3.000_000_1, 1.0);
        assert_relative_eq!(below.0, above.0, max_relative = 1e-6);
        assert_relative_eq!(below.1, above.1, max_relative = 1e-6);
    }

    #[test]
    fn logsumexp_handles_extremes() {
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_relative_eq!(logsumexp(&[-1000.0, -1000.0]), -1000.0 + 2f64.ln());
        assert_relative_eq!(logsumexp(&[0.0, f64::NEG_INFINITY]), 0.0);
    }

    #[test]
    fn sigmoid_symmetry() {
        for x in [-800.0, -3.0, 0.0, 2.5, 800.0] {
            assert_relative_eq!(sigmoid(x) + sigmoid(-x), 1.0);
        }
    }
}
