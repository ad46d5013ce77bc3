//! Standard normal distribution functions without an external special-function
//! dependency.

use std::f64::consts::{PI, SQRT_2};

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Error function. Below |x| = 2.5 it uses the all-positive series
/// `erf x = 2/√π · e^{-x²} · Σ 2ⁿ x^{2n+1} / (2n+1)!!`; beyond that it
/// goes through the continued fraction for `erfc`.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let a = x.abs();
    let v = if a < 2.5 { erf_series(a) } else { 1.0 - erfc_cf(a) };
    v.copysign(x)
}

/// Complementary error function, accurate in relative terms for large x.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x >= 2.5 {
        erfc_cf(x)
    } else if x <= -2.5 {
        2.0 - erfc_cf(-x)
    } else {
        1.0 - erf(x)
    }
}

fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    FRAC_2_SQRT_PI * (-x2).exp() * sum
}

/// `erfc x = e^{-x²}/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + …))))`,
/// evaluated with the modified Lentz algorithm.
fn erfc_cf(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..500 {
        let a = n as f64 / 2.0;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (PI.sqrt() * f)
}

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF.
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Acklam's rational approximation to Φ⁻¹ (relative error ≈ 1.15e-9).
fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// Inverse standard normal CDF for `p ∈ (0, 1)`: Acklam's approximation
/// followed by one Halley step on `Φ(x) − p`. Returns NaN outside (0, 1)
/// and ±∞ at the endpoints.
pub fn inverse_cdf(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let x = acklam(p);
    // Work with the smaller tail so the residual keeps its relative precision.
    let e = if x <= 0.0 {
        cdf(x) - p
    } else {
        (1.0 - p) - 0.5 * erfc(x / SQRT_2)
    };
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};
    use statrs::function::erf as sf;

    #[test]
    fn erf_matches_reference_implementation() {
        let mut x = -6.0;
        while x <= 6.0 {
            // statrs is only good to ~1e-10 in places; the tight check is the table below
            assert!((erf(x) - sf::erf(x)).abs() < 1e-9, "erf({x})");
            let (a, b) = (erfc(x), sf::erfc(x));
            assert!((a - b).abs() <= 1e-9 * b.max(1e-300), "erfc({x}) {a} vs {b}");
            x += 0.0625;
        }
    }

    #[test]
    fn erfc_matches_high_precision_values() {
        // 30-digit reference values
        let table = [
            (0.1, 0.887_537_083_981_715_1),
            (0.5, 0.479_500_122_186_953_46),
            (1.7, 0.016_209_541_409_225_439),
            (2.4999, 4.071_699_003_334_513_8e-4),
            (2.6875, 1.442_885_174_254_800_5e-4),
            (3.5, 7.430_983_723_414_127_5e-7),
            (5.0, 1.537_459_794_428_034_9e-12),
            (8.0, 1.122_429_717_298_292_7e-29),
        ];
        for (x, want) in table {
            assert!((erfc(x) - want).abs() <= f64::max(1e-15, 1e-13 * want), "erfc({x})");
        }
        for (x, want) in [
            (0.3, 0.328_626_759_459_127_416_19),
            (1.5625, 0.972_874_613_820_933_537_37),
            (1.9375, 0.993_856_806_395_213_2),
            (2.25, 0.998_537_283_413_318_848_3),
            (0.5, 0.520_499_877_813_046_537_68),
        ] {
            assert!((erf(x) - want).abs() < 1e-15, "erf({x})");
        }
    }

    #[test]
    fn known_values() {
        assert!((erf(1.0) - 0.842_700_792_949_714_9).abs() < 1e-15);
        assert_eq!(cdf(0.0), 0.5);
        assert!((inverse_cdf(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert_eq!(inverse_cdf(0.5), 0.0);
    }

    #[test]
    fn inverse_is_accurate_to_1e9_everywhere() {
        let n = Normal::standard();
        let mut worst: f64 = 0.0;
        for i in 1..10_000 {
            let p = i as f64 / 10_000.0;
            worst = worst.max((inverse_cdf(p) - n.inverse_cdf(p)).abs());
        }
        for p in [1e-10, 1e-6, 1e-4, 1.0 - 1e-4, 1.0 - 1e-6] {
            worst = worst.max((inverse_cdf(p) - n.inverse_cdf(p)).abs());
        }
        assert!(worst < 1e-9, "worst {worst}");
    }

    #[test]
    fn inverse_round_trips_through_cdf() {
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            assert!((cdf(inverse_cdf(p)) - p).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetry_and_edges() {
        for p in [0.01, 0.1, 0.3] {
            assert!((inverse_cdf(p) + inverse_cdf(1.0 - p)).abs() < 1e-12);
        }
        assert!(inverse_cdf(1.5).is_nan());
        assert_eq!(inverse_cdf(0.0), f64::NEG_INFINITY);
    }
}
