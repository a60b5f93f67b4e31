//! Shared test infrastructure: an independent high-precision oracle for the
//! normal-distribution formulas, a brute-force constrained grid minimizer,
//! and random mask generators for the two classic availability families.
//!
//! Everything here deliberately avoids the implementation paths it is used
//! to check: the CDF is a non-alternating erf series plus a Lentz continued
//! fraction in the tail, the quantile is bisection polished by Newton on the
//! oracle CDF, and the minimizer is a zooming dense grid search.

#![allow(dead_code)]
// mpmath reference constants keep their full printed precision.
#![allow(clippy::excessive_precision)]

pub mod oracle {
    const SQRT_PI: f64 = 1.772_453_850_905_516;
    const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
    const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

    /// erf(z) for z >= 0 by the non-alternating confluent series
    /// erf(z) = 2/sqrt(pi) * z * e^(-z^2) * sum_n (2 z^2)^n / (2n+1)!!.
    fn erf_series(z: f64) -> f64 {
        if z == 0.0 {
            return 0.0;
        }
        let z2 = 2.0 * z * z;
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..700 {
            term *= z2 / (2.0 * n as f64 + 1.0);
            sum += term;
            if term < sum * 1e-18 {
                break;
            }
        }
        2.0 / SQRT_PI * z * (-z * z).exp() * sum
    }

    /// erfc(z) for z >= 3 by the DLMF 7.9.1 continued fraction (modified
    /// Lentz).
    fn erfc_cf(z: f64) -> f64 {
        let tiny = 1e-300;
        let mut f = z;
        let mut c = f;
        let mut d = 0.0;
        for n in 1..500 {
            let a = n as f64 / 2.0;
            d = z + a * d;
            if d == 0.0 {
                d = tiny;
            }
            d = 1.0 / d;
            c = z + a / c;
            if c == 0.0 {
                c = tiny;
            }
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-17 {
                break;
            }
        }
        (-z * z).exp() / (SQRT_PI * f)
    }

    fn erfc_pos(z: f64) -> f64 {
        if z >= 3.0 {
            erfc_cf(z)
        } else {
            1.0 - erf_series(z)
        }
    }

    /// Standard normal CDF.
    pub fn phi(x: f64) -> f64 {
        if x < 0.0 {
            0.5 * erfc_pos(-x * FRAC_1_SQRT_2)
        } else {
            0.5 + 0.5 * erf_series(x * FRAC_1_SQRT_2)
        }
    }

    pub fn pdf(x: f64) -> f64 {
        (-0.5 * x * x).exp() / SQRT_2PI
    }

    /// Quantile by bisection on [-40, 40] refined with Newton steps.
    pub fn phi_inv(p: f64) -> f64 {
        assert!(p > 0.0 && p < 1.0, "oracle quantile domain");
        let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if phi(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..4 {
            let d = pdf(x);
            if d <= 0.0 {
                break;
            }
            x -= (phi(x) - p) / d;
        }
        x
    }

    pub fn pit(p: f64, rho: f64, f: f64) -> f64 {
        phi((phi_inv(p) - rho.sqrt() * f) / (1.0 - rho).sqrt())
    }

    pub fn wcdr(p: f64, rho: f64, confidence: f64) -> f64 {
        phi((phi_inv(p) + rho.sqrt() * phi_inv(confidence)) / (1.0 - rho).sqrt())
    }

    pub fn basel(pd: f64, rho_min: f64, rho_max: f64, w: f64) -> f64 {
        let g = (1.0 - (-w * pd).exp()) / (1.0 - (-w).exp());
        rho_min * g + rho_max * (1.0 - g)
    }

    pub fn eta(d: f64, rho: f64) -> f64 {
        (1.0 - rho).sqrt() * phi_inv(d)
    }
}

pub mod grid {
    /// Dense zooming grid minimizer. Evaluates `points`^dim objective calls
    /// per round over a box of half-width `hw` around `center`, recenters on
    /// the best point, and halves the box. Suitable for smooth unimodal
    /// objectives of small dimension.
    pub fn minimize<F>(
        obj: F,
        center: &[f64],
        hw: f64,
        points: usize,
        rounds: usize,
    ) -> (Vec<f64>, f64)
    where
        F: Fn(&[f64]) -> f64,
    {
        let dim = center.len();
        let mut center = center.to_vec();
        let mut hw = hw;
        let mut best_x = center.clone();
        let mut best_v = obj(&center);
        for _ in 0..rounds {
            let step = 2.0 * hw / (points - 1) as f64;
            let mut idx = vec![0usize; dim];
            let mut x = vec![0.0; dim];
            loop {
                for d in 0..dim {
                    x[d] = center[d] - hw + step * idx[d] as f64;
                }
                let v = obj(&x);
                if v < best_v {
                    best_v = v;
                    best_x.copy_from_slice(&x);
                }
                // Odometer over the cartesian grid.
                let mut d = 0;
                loop {
                    if d == dim {
                        break;
                    }
                    idx[d] += 1;
                    if idx[d] < points {
                        break;
                    }
                    idx[d] = 0;
                    d += 1;
                }
                if d == dim {
                    break;
                }
            }
            center.copy_from_slice(&best_x);
            hw *= 0.5;
        }
        (best_x, best_v)
    }
}

pub mod masks {
    use rand::Rng;
    use ttcpd_core::AvailabilityMask;

    /// Two complementary observation blocks: portfolios in I0 are observed
    /// exactly on the year set S, the rest exactly on its complement. Always
    /// unidentifiable.
    pub fn block_disjoint<R: Rng>(rng: &mut R, n_p: usize, n_t: usize) -> AvailabilityMask {
        assert!(n_p >= 2 && n_t >= 2);
        let i0_size = rng.gen_range(1..n_p);
        let s_size = rng.gen_range(1..n_t);
        let mut portfolios: Vec<usize> = (0..n_p).collect();
        for i in (1..n_p).rev() {
            portfolios.swap(i, rng.gen_range(0..=i));
        }
        let i0: Vec<usize> = portfolios[..i0_size].to_vec();
        let mut years: Vec<usize> = (0..n_t).collect();
        for i in (1..n_t).rev() {
            years.swap(i, rng.gen_range(0..=i));
        }
        let s: Vec<usize> = years[..s_size].to_vec();
        let mut grid = vec![vec![false; n_t]; n_p];
        for (i, row) in grid.iter_mut().enumerate() {
            let in_block = i0.contains(&i);
            for (t, cell) in row.iter_mut().enumerate() {
                *cell = in_block == s.contains(&t);
            }
        }
        AvailabilityMask::from_grid(grid).unwrap()
    }

    /// Random overlapping windows that jointly cover every year: each window
    /// starts no later than the previous one ends and the last reaches T.
    /// Always identifiable.
    pub fn overlapping_chain<R: Rng>(rng: &mut R, n_p: usize, n_t: usize) -> AvailabilityMask {
        assert!(n_p >= 1 && n_t >= 1);
        let mut grid = vec![vec![false; n_t]; n_p];
        let mut start = 0usize;
        let mut end = rng.gen_range(0..n_t);
        for (i, row) in grid.iter_mut().enumerate() {
            if i + 1 == n_p {
                end = n_t - 1;
            }
            for cell in row.iter_mut().take(end + 1).skip(start) {
                *cell = true;
            }
            if i + 1 < n_p {
                let next_start = rng.gen_range(start..=end);
                let next_end = rng.gen_range(end..n_t);
                start = next_start;
                end = next_end;
            }
        }
        AvailabilityMask::from_grid(grid).unwrap()
    }
}

#[cfg(test)]
mod self_checks {
    use super::oracle;

    // 40-digit mpmath references across all oracle regimes.
    const PHI_REFS: [(f64, f64); 11] = [
        (-12.0, 1.776_482_112_077_679e-33),
        (-8.0, 6.220_960_574_271_784_1e-16),
        (-5.5, 1.898_956_246_588_771_9e-8),
        (-3.2, 0.000_687_137_937_915_848_46),
        (-1.0, 0.158_655_253_931_457_05),
        (-0.3, 0.382_088_577_811_047_36),
        (0.0, 0.5),
        (0.7, 0.758_036_347_776_926_99),
        (2.4, 0.991_802_464_075_403_87),
        (4.1, 0.999_979_342_493_087_45),
        (6.5, 0.999_999_999_959_839_99),
    ];

    #[test]
    fn oracle_phi_matches_mpmath() {
        for (x, want) in PHI_REFS {
            let got = oracle::phi(x);
            let tol = want.abs().max(1e-16) * 1e-13;
            assert!(
                (got - want).abs() <= tol,
                "oracle phi({x}) = {got:e}, want {want:e}"
            );
        }
    }

    #[test]
    fn oracle_quantile_round_trips() {
        for p in [1e-12, 1e-6, 0.02, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-9] {
            let x = oracle::phi_inv(p);
            assert!((oracle::phi(x) - p).abs() < 1e-14 * p.max(1e-3));
        }
    }

    #[test]
    fn grid_minimizer_finds_quadratic_minimum() {
        let obj = |x: &[f64]| (x[0] - 1.3).powi(2) + 2.0 * (x[1] + 0.4).powi(2) + 5.0;
        let (xmin, vmin) = super::grid::minimize(obj, &[0.0, 0.0], 4.0, 7, 30);
        assert!((xmin[0] - 1.3).abs() < 1e-6);
        assert!((xmin[1] + 0.4).abs() < 1e-6);
        assert!((vmin - 5.0).abs() < 1e-10);
    }
}
