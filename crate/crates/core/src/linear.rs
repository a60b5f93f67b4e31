//! Equality-constrained linear least squares for fixed correlations.
//!
//! Each observed cell (i, t) contributes one regression row
//! `K_i - sqrt(rho_i) f_t = eta_{i,t}`; the factor path is tied down by the
//! exact constraint `sum_t f_t = T * alpha`. The constraint is enforced by
//! variable elimination (substituting the last factor), not as a soft row, so
//! it holds to rounding error on every solvable instance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::identifiability::{self, AvailabilityMask};
use crate::model::{
    clamped_rates, CalibrationConfig, CalibrationResult, CellResidual, ClampWarning,
    DefaultRatePanel, FactorPath,
};
use crate::normal::std_normal_cdf;

/// Relative singular-value cutoff below which the system counts as
/// rank-deficient. Shared with the identifiability module so "solvable" and
/// "identifiable" coincide.
pub const RANK_RTOL: f64 = 1e-8;

/// One regression row of the design system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignRow {
    pub portfolio: usize,
    pub year: usize,
    pub rho_sqrt: f64,
    pub eta: f64,
    /// Relative row weight; 1 unless obligor-count weighting is requested.
    pub weight: f64,
}

/// The linear system: one row per observed cell plus the exact mean
/// constraint over the factor block. Columns are ordered K block then f
/// block.
#[derive(Debug, Clone)]
pub struct DesignSystem {
    pub n_portfolios: usize,
    pub n_years: usize,
    pub alpha_mean: f64,
    pub rows: Vec<DesignRow>,
    pub clamp_warnings: Vec<ClampWarning>,
}

impl DesignSystem {
    /// Number of regression rows (observed cells), excluding the constraint.
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Number of unknowns: |I| + T.
    pub fn n_cols(&self) -> usize {
        self.n_portfolios + self.n_years
    }

    /// Right-hand side of the constraint row, T * alpha.
    pub fn constraint_rhs(&self) -> f64 {
        self.n_years as f64 * self.alpha_mean
    }

    /// Observation pattern of the rows.
    pub fn mask(&self) -> AvailabilityMask {
        let mut grid = vec![vec![false; self.n_years]; self.n_portfolios];
        for row in &self.rows {
            grid[row.portfolio][row.year] = true;
        }
        AvailabilityMask::from_grid(grid).expect("design system rows form a valid mask")
    }

    /// Per-portfolio sqrt(rho) as implied by the rows (every portfolio is
    /// guaranteed at least one row by construction).
    fn rho_sqrts(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_portfolios];
        for row in &self.rows {
            out[row.portfolio] = row.rho_sqrt;
        }
        out
    }

    /// Dense coefficient matrix including the constraint row, laid out as in
    /// the regression display: K block, then f block, constraint last.
    pub fn full_matrix(&self) -> DMatrix<f64> {
        let m = self.n_rows();
        let cols = self.n_cols();
        let mut a = DMatrix::zeros(m + 1, cols);
        for (r, row) in self.rows.iter().enumerate() {
            a[(r, row.portfolio)] = 1.0;
            a[(r, self.n_portfolios + row.year)] = -row.rho_sqrt;
        }
        for t in 0..self.n_years {
            a[(m, self.n_portfolios + t)] = 1.0;
        }
        a
    }

    /// Right-hand side matching [`DesignSystem::full_matrix`].
    pub fn full_rhs(&self) -> DVector<f64> {
        let m = self.n_rows();
        let mut b = DVector::zeros(m + 1);
        for (r, row) in self.rows.iter().enumerate() {
            b[r] = row.eta;
        }
        b[m] = self.constraint_rhs();
        b
    }

    /// Reduced system with the last factor eliminated through the
    /// constraint. Rows are scaled by sqrt(weight).
    fn reduced(&self) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.n_rows();
        let i_count = self.n_portfolios;
        let t_count = self.n_years;
        let p = i_count + t_count - 1;
        let mut a = DMatrix::zeros(m, p);
        let mut b = DVector::zeros(m);
        for (r, row) in self.rows.iter().enumerate() {
            let s = row.weight.sqrt();
            a[(r, row.portfolio)] = s;
            if row.year + 1 < t_count {
                a[(r, i_count + row.year)] = -s * row.rho_sqrt;
                b[r] = s * row.eta;
            } else {
                // K_i + sqrt(rho) * sum_{t<T} f_t = eta + sqrt(rho) * T * alpha
                for t in 0..t_count - 1 {
                    a[(r, i_count + t)] = s * row.rho_sqrt;
                }
                b[r] = s * (row.eta + row.rho_sqrt * self.constraint_rhs());
            }
        }
        (a, b)
    }

    /// Sum of squared row residuals (unweighted) at the given parameters.
    pub fn sum_squared_residuals(&self, k: &[f64], factor: &FactorPath) -> f64 {
        self.rows
            .iter()
            .map(|row| {
                let r = k[row.portfolio] - row.rho_sqrt * factor.values[row.year] - row.eta;
                r * r
            })
            .sum()
    }

    /// Attach obligor-count weights (n_{i,t} relative to the mean count).
    pub fn weight_by_obligors(&mut self, panel: &DefaultRatePanel) -> Result<()> {
        let mut counts = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            match panel.obligors(row.portfolio, row.year) {
                Some(n) => counts.push(n as f64),
                None => {
                    return Err(Error::Invalid(format!(
                        "obligor-count weighting requested but cell ({}, {}) has no count",
                        panel.portfolio_ids()[row.portfolio],
                        panel.years()[row.year]
                    )))
                }
            }
        }
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        for (row, n) in self.rows.iter_mut().zip(counts) {
            row.weight = n / mean;
        }
        Ok(())
    }
}

/// Assemble the design system for a panel under fixed correlations.
///
/// Rows for missing cells are simply omitted. Degenerate rates are clamped
/// first; the warnings ride along on the returned system.
pub fn build_system(
    panel: &DefaultRatePanel,
    rho: &[f64],
    alpha_mean: f64,
    clamp_eps: f64,
) -> Result<DesignSystem> {
    if rho.len() != panel.n_portfolios() {
        return Err(Error::Invalid(format!(
            "{} correlations supplied for {} portfolios",
            rho.len(),
            panel.n_portfolios()
        )));
    }
    for &r in rho {
        if !(r.is_finite() && (0.0..1.0).contains(&r)) {
            return Err(Error::Domain(format!(
                "correlation must lie in [0,1), got {r}"
            )));
        }
    }
    if let Some(i) = panel.first_empty_portfolio() {
        return Err(Error::EmptyPortfolio(panel.portfolio_ids()[i].clone()));
    }
    let (rates, clamp_warnings) = clamped_rates(panel, clamp_eps);
    let mut rows = Vec::with_capacity(panel.observed_count());
    for i in 0..panel.n_portfolios() {
        let rho_sqrt = rho[i].sqrt();
        for (t, cell) in rates[i].iter().enumerate() {
            if let Some(d) = cell {
                rows.push(DesignRow {
                    portfolio: i,
                    year: t,
                    rho_sqrt,
                    eta: crate::model::eta_transform(*d, rho[i])?,
                    weight: 1.0,
                });
            }
        }
    }
    Ok(DesignSystem {
        n_portfolios: panel.n_portfolios(),
        n_years: panel.n_years(),
        alpha_mean,
        rows,
        clamp_warnings,
    })
}

/// Solution of one constrained least-squares solve.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub k: Vec<f64>,
    pub factor: FactorPath,
    pub residuals: Vec<CellResidual>,
}

/// Minimize the sum of squared row residuals subject to the exact mean
/// constraint.
///
/// Returns `Error::Singular` with a full identifiability report when the
/// system is numerically rank-deficient.
pub fn solve_constrained_ls(system: &DesignSystem) -> Result<LinearSolution> {
    if system.rows.is_empty() {
        return Err(Error::Invalid("design system has no rows".into()));
    }
    let (a, b) = system.reduced();
    let p = a.ncols();
    let svd = a.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let rank = if sigma_max > 0.0 {
        svd.rank(RANK_RTOL * sigma_max)
    } else {
        0
    };
    if rank < p {
        let report =
            identifiability::check_identifiability(&system.mask(), &system.rho_sqrts_squared());
        return Err(Error::Singular(Box::new(report)));
    }
    let x = svd
        .solve(&b, sigma_max * 1e-14)
        .map_err(|e| Error::Invalid(format!("SVD solve failed: {e}")))?;

    let i_count = system.n_portfolios;
    let t_count = system.n_years;
    let k: Vec<f64> = x.iter().take(i_count).copied().collect();
    let mut f: Vec<f64> = x.iter().skip(i_count).copied().collect();
    let last = system.constraint_rhs() - f.iter().sum::<f64>();
    f.push(last);
    debug_assert_eq!(f.len(), t_count);
    let factor = FactorPath::new(f);

    let residuals = system
        .rows
        .iter()
        .map(|row| CellResidual {
            portfolio: row.portfolio,
            year: row.year,
            value: k[row.portfolio] - row.rho_sqrt * factor.values[row.year] - row.eta,
        })
        .collect();
    Ok(LinearSolution {
        k,
        factor,
        residuals,
    })
}

impl DesignSystem {
    fn rho_sqrts_squared(&self) -> Vec<f64> {
        self.rho_sqrts().iter().map(|s| s * s).collect()
    }
}

/// Full linear calibration: build the system, solve it, and assemble the
/// result with the fitted PIT matrix substituted for every cell, observed or
/// not.
pub fn fit_linear(
    panel: &DefaultRatePanel,
    rho: &[f64],
    config: &CalibrationConfig,
) -> Result<CalibrationResult> {
    config.validate()?;
    let mut system = build_system(panel, rho, config.alpha_mean, config.clamp_eps)?;
    if config.weight_by_obligors {
        system.weight_by_obligors(panel)?;
    }
    let solution = solve_constrained_ls(&system)?;
    Ok(assemble_result(panel, rho, &system, solution, 1, true))
}

/// Shared result assembly for the linear and nonlinear paths.
pub(crate) fn assemble_result(
    panel: &DefaultRatePanel,
    rho: &[f64],
    system: &DesignSystem,
    solution: LinearSolution,
    iterations: usize,
    converged: bool,
) -> CalibrationResult {
    let ttc_pd: Vec<f64> = solution.k.iter().map(|&k| std_normal_cdf(k)).collect();
    let pit_pd = (0..panel.n_portfolios())
        .map(|i| {
            let denom = (1.0 - rho[i]).sqrt();
            let shift = rho[i].sqrt();
            solution
                .factor
                .values
                .iter()
                .map(|&f| std_normal_cdf((solution.k[i] - shift * f) / denom))
                .collect()
        })
        .collect();
    CalibrationResult {
        k: solution.k,
        ttc_pd,
        rho: rho.to_vec(),
        factor: solution.factor,
        pit_pd,
        residuals: solution.residuals,
        iterations,
        converged,
        warnings: system.clamp_warnings.clone(),
    }
}
