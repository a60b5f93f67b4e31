//! Standard normal distribution function and its inverse.
//!
//! `std_normal_cdf` evaluates Phi through Cody's rational Chebyshev
//! approximations for erf/erfc (absolute error well below 1e-14 across the
//! real line). `std_normal_quantile` starts from Acklam's rational
//! approximation and polishes with two Halley steps against the CDF, which
//! brings the round-trip error to machine precision.

// Published approximation coefficients are kept verbatim even where they
// exceed f64 resolution.
#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

// Cody (1969) coefficients, region |x| <= 0.46875.
const ERF_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];

// Region 0.46875 < x <= 4.0 (erfc).
const ERFC_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
const ERFC_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];

// Region x > 4.0 (erfc, in terms of 1/x^2).
const ERFC_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const ERFC_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];

const ONE_OVER_SQRT_PI: f64 = 5.641_895_835_477_562_9e-1;

fn erf_small(x: f64) -> f64 {
    let z = x * x;
    let mut num = ERF_A[4] * z;
    let mut den = z;
    for i in 0..3 {
        num = (num + ERF_A[i]) * z;
        den = (den + ERF_B[i]) * z;
    }
    x * (num + ERF_A[3]) / (den + ERF_B[3])
}

/// exp(-y^2) split so the argument of the large exponential is exactly
/// representable, per Cody's algorithm.
fn exp_neg_sq(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

/// Complementary error function for y >= 0.46875.
fn erfc_pos(y: f64) -> f64 {
    if y <= 4.0 {
        let mut num = ERFC_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERFC_C[i]) * y;
            den = (den + ERFC_D[i]) * y;
        }
        exp_neg_sq(y) * (num + ERFC_C[7]) / (den + ERFC_D[7])
    } else if y >= 26.5 {
        0.0
    } else {
        let z = 1.0 / (y * y);
        let mut num = ERFC_P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + ERFC_P[i]) * z;
            den = (den + ERFC_Q[i]) * z;
        }
        let r = z * (num + ERFC_P[4]) / (den + ERFC_Q[4]);
        exp_neg_sq(y) * (ONE_OVER_SQRT_PI - r) / y
    }
}

fn erfc(x: f64) -> f64 {
    let y = x.abs();
    let v = if y <= 0.46875 {
        1.0 - erf_small(y)
    } else {
        erfc_pos(y)
    };
    if x < 0.0 {
        2.0 - v
    } else {
        v
    }
}

/// Standard normal cumulative distribution function.
///
/// Total on finite inputs; absolute error below 1e-14.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

// Acklam's inverse normal CDF approximation (relative error < 1.15e-9),
// used as the starting point for Halley refinement.
fn quantile_seed(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239e0,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838e0,
        -2.549732539343734e0,
        4.374664141464968e0,
        2.938163982698783e0,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996e0,
        3.754408661907416e0,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Inverse of [`std_normal_cdf`] on (0, 1).
///
/// Returns `Error::Domain` for p outside the open unit interval.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "quantile argument must lie strictly in (0,1), got {p}"
        )));
    }
    // Work on the lower half where the CDF has full relative resolution;
    // 1 - p is exact for p in [0.5, 1] (Sterbenz), so the reflection loses
    // nothing.
    let (pp, sign) = if p > 0.5 { (1.0 - p, -1.0) } else { (p, 1.0) };
    let mut x = quantile_seed(pp);
    // Two Halley steps; skipped in the far tail where exp(x^2/2) would
    // overflow (the seed alone is accurate to ~1e-9 relative there).
    for _ in 0..2 {
        if x * x >= 1400.0 {
            break;
        }
        let err = std_normal_cdf(x) - pp;
        let u = err * SQRT_2PI * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(sign * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values computed with 40-digit arithmetic (erfc series).
    const CASES_CDF: [(f64, f64); 7] = [
        (0.0, 0.5),
        (3.0902, 0.998_999_891_216_792_9),
        (-2.3263, 0.010_001_276_016_798_608),
        (1.0, 0.841_344_746_068_542_9),
        (0.2, 0.579_259_709_439_103_0),
        (-5.5, 1.898_956_246_588_771_9e-8),
        (-8.0, 6.220_960_574_271_784e-16),
    ];

    #[test]
    fn cdf_matches_reference_values() {
        for (x, want) in CASES_CDF {
            let got = std_normal_cdf(x);
            assert!(
                (got - want).abs() <= 1e-14,
                "cdf({x}) = {got:e}, want {want:e}"
            );
        }
    }

    #[test]
    fn cdf_symmetry() {
        for x in [0.1, 0.7, 1.3, 2.9, 4.5] {
            let s = std_normal_cdf(x) + std_normal_cdf(-x);
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn quantile_matches_reference_values() {
        let cases = [
            (0.5, 0.0),
            (0.999, 3.090_232_306_167_813_5),
            (0.02, -2.053_748_910_631_823_0),
            (0.01, -2.326_347_874_040_841_1),
            (0.975, 1.959_963_984_540_054_2),
            (1e-9, -5.997_807_015_007_687),
        ];
        for (p, want) in cases {
            let got = std_normal_quantile(p).unwrap();
            assert!(
                (got - want).abs() <= 1e-10,
                "quantile({p}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn quantile_rejects_boundary() {
        assert!(std_normal_quantile(0.0).is_err());
        assert!(std_normal_quantile(1.0).is_err());
        assert!(std_normal_quantile(-0.3).is_err());
        assert!(std_normal_quantile(1.5).is_err());
        assert!(std_normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn round_trip_over_working_range() {
        // Above x ~ 4.5 the rounding of p = Phi(x) toward 1 already costs
        // ~5e-17 / phi(x) in the recovered x, so the achievable round-trip
        // error grows toward the upper tail regardless of implementation.
        let mut x = -6.0;
        while x <= 6.0 {
            let p = std_normal_cdf(x);
            let back = std_normal_quantile(p).unwrap();
            let tol = if x <= 4.0 { 1e-11 } else { 1e-8 };
            assert!((back - x).abs() < tol, "round trip at x={x}: got {back}");
            x += 0.0137;
        }
    }

    #[test]
    fn cdf_strictly_increasing() {
        // Strict up to x ~ 7.5; beyond that consecutive values collapse to
        // the same double because 1 - Phi(x) drops under the ulp of 1.
        let mut prev = std_normal_cdf(-8.0);
        let mut x = -7.99;
        while x <= 7.5 {
            let v = std_normal_cdf(x);
            assert!(v > prev, "cdf not increasing at {x}");
            prev = v;
            x += 0.01;
        }
        while x <= 9.0 {
            let v = std_normal_cdf(x);
            assert!(v >= prev, "cdf decreased at {x}");
            prev = v;
            x += 0.01;
        }
    }
}
