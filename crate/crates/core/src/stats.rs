//! Chi-squared CDF and quantile, self-contained on the regularized lower
//! incomplete gamma function (power series below a+1, Lentz continued
//! fraction above).

use crate::error::{Error, Result};

/// Lanczos approximation (g = 7, n = 9 coefficients).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection formula
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma P(a, x) = γ(a,x)/Γ(a).
fn gamma_p(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series representation
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..500 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        sum * (-x + a * x.ln() - ln_gamma(a)).exp()
    } else {
        // continued fraction for Q(a,x), modified Lentz
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = (-x + a * x.ln() - ln_gamma(a)).exp() * h;
        1.0 - q
    }
}

/// CDF of the chi-squared distribution with `dof` degrees of freedom.
pub fn chi2_cdf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_p(dof as f64 / 2.0, x / 2.0)
}

/// Quantile (inverse CDF) of the chi-squared distribution, by bisection.
/// Accurate to better than 1e-8 in the CDF sense.
pub fn chi2_quantile(dof: usize, tau: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::Domain("chi2 quantile needs dof >= 1".into()));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!(
            "chi2 quantile needs tau in (0,1), got {tau}"
        )));
    }
    let mut lo = 0.0_f64;
    let mut hi = (dof as f64).max(1.0);
    while chi2_cdf(dof, hi) < tau {
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(dof, mid) < tau {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_dof_closed_form() {
        // CDF for 2 dof is 1 − exp(−x/2); quantile(0.95) = −2 ln(0.05)
        let q = chi2_quantile(2, 0.95).unwrap();
        assert_relative_eq!(q, -2.0 * 0.05_f64.ln(), epsilon = 1e-9);
        assert_relative_eq!(q, 5.991_464_547_107_98, epsilon = 1e-8);
        for tau in [0.01, 0.3, 0.6, 0.99] {
            assert_relative_eq!(
                chi2_quantile(2, tau).unwrap(),
                -2.0 * (1.0 - tau).ln(),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn one_dof_median() {
        assert_relative_eq!(chi2_quantile(1, 0.5).unwrap(), 0.454_936, epsilon = 1e-6);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let dof = rng.gen_range(1..40);
            let tau = rng.gen_range(0.001..0.999);
            let q = chi2_quantile(dof, tau).unwrap();
            assert!((chi2_cdf(dof, q) - tau).abs() < 1e-8, "dof={dof} tau={tau}");
        }
    }

    #[test]
    fn quantile_monotone_in_tau() {
        let mut prev = 0.0;
        for i in 1..100 {
            let tau = i as f64 / 100.0;
            let q = chi2_quantile(5, tau).unwrap();
            assert!(q > prev);
            prev = q;
        }
    }

    #[test]
    fn quantile_domain_errors() {
        assert!(chi2_quantile(3, 0.0).is_err());
        assert!(chi2_quantile(3, 1.0).is_err());
        assert!(chi2_quantile(3, -0.5).is_err());
        assert!(chi2_quantile(0, 0.5).is_err());
    }

    #[test]
    fn quantile_tends_to_zero() {
        assert!(chi2_quantile(4, 1e-9).unwrap() < 1e-3);
    }
}
