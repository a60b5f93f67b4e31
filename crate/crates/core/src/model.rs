//! Domain types and the closed-form Vasicek/Basel transforms.
//!
//! Everything here is a pure function on immutable data; the solver and
//! simulator modules build on these primitives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal::{std_normal_cdf, std_normal_quantile};

fn check_unit_open(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{name} must lie strictly in (0,1), got {v}"
        )))
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_finite() && (0.0..1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "correlation must lie in [0,1), got {rho}"
        )))
    }
}

/// Conditional (point-in-time) default probability given the systematic
/// factor realization `f`: Phi((Phi^-1(p) - sqrt(rho) f) / sqrt(1 - rho)).
///
/// Decreasing in `f`; reduces to `ttc_pd` when `rho` is zero.
pub fn pit_pd(ttc_pd: f64, rho: f64, f: f64) -> Result<f64> {
    check_unit_open("ttc_pd", ttc_pd)?;
    check_rho(rho)?;
    if !f.is_finite() {
        return Err(Error::Domain(format!("factor must be finite, got {f}")));
    }
    let k = std_normal_quantile(ttc_pd)?;
    Ok(std_normal_cdf((k - rho.sqrt() * f) / (1.0 - rho).sqrt()))
}

/// Worst-case default rate at the given confidence level:
/// Phi((Phi^-1(p) + sqrt(rho) Phi^-1(confidence)) / sqrt(1 - rho)).
pub fn wcdr(ttc_pd: f64, rho: f64, confidence: f64) -> Result<f64> {
    check_unit_open("ttc_pd", ttc_pd)?;
    check_rho(rho)?;
    check_unit_open("confidence", confidence)?;
    let k = std_normal_quantile(ttc_pd)?;
    let q = std_normal_quantile(confidence)?;
    Ok(std_normal_cdf((k + rho.sqrt() * q) / (1.0 - rho).sqrt()))
}

/// Basel IRB asset correlation as a function of the TTC PD:
/// rho_min * g + rho_max * (1 - g) with g = (1 - e^(-W PD)) / (1 - e^(-W)).
///
/// Decreasing in PD, bounded by [rho_min, rho_max].
pub fn basel_rho(ttc_pd: f64, params: &AssetClassParams) -> Result<f64> {
    check_unit_open("ttc_pd", ttc_pd)?;
    let g = (-params.w * ttc_pd).exp_m1() / (-params.w).exp_m1();
    Ok(params.rho_min * g + params.rho_max * (1.0 - g))
}

/// Transform of an observed default rate into regression units:
/// eta = sqrt(1 - rho) * Phi^-1(d).
pub fn eta_transform(d: f64, rho: f64) -> Result<f64> {
    check_unit_open("default rate", d)?;
    check_rho(rho)?;
    Ok((1.0 - rho).sqrt() * std_normal_quantile(d)?)
}

/// Basel correlation-function parameters for one exposure class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssetClassParams {
    pub rho_min: f64,
    pub rho_max: f64,
    pub w: f64,
}

impl AssetClassParams {
    pub fn new(rho_min: f64, rho_max: f64, w: f64) -> Result<Self> {
        if !(rho_min.is_finite() && rho_max.is_finite() && w.is_finite()) {
            return Err(Error::Domain(
                "asset class parameters must be finite".into(),
            ));
        }
        if !(0.0 < rho_min && rho_min <= rho_max && rho_max < 1.0) {
            return Err(Error::Domain(format!(
                "need 0 < rho_min <= rho_max < 1, got rho_min={rho_min}, rho_max={rho_max}"
            )));
        }
        if w <= 0.0 {
            return Err(Error::Domain(format!("decay W must be positive, got {w}")));
        }
        Ok(Self {
            rho_min,
            rho_max,
            w,
        })
    }

    /// Regulatory parameters for corporate exposures.
    pub fn corporate() -> Self {
        Self {
            rho_min: 0.12,
            rho_max: 0.24,
            w: 50.0,
        }
    }

    /// Regulatory parameters for retail exposures.
    pub fn retail() -> Self {
        Self {
            rho_min: 0.03,
            rho_max: 0.16,
            w: 35.0,
        }
    }
}

/// How correlations enter the calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RhoMode {
    /// Exogenously fixed per-portfolio correlations (linear model).
    Fixed(Vec<f64>),
    /// Correlations tied to the fitted TTC PD via the Basel function.
    BaselLinked(AssetClassParams),
}

/// Solver configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Target time-mean of the factor path (0 for a representative cycle,
    /// slightly positive when the sample covers a boom).
    pub alpha_mean: f64,
    /// Convergence tolerance for the fixed-point loop.
    pub tol: f64,
    /// Iteration cap for the fixed-point loop.
    pub max_iter: usize,
    /// Floor/ceiling offset applied to degenerate rates when no obligor
    /// counts are available.
    pub clamp_eps: f64,
    pub rho_mode: RhoMode,
    /// Weight each observed cell by its obligor count (off by default;
    /// the plain objective counts every cell equally).
    pub weight_by_obligors: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            alpha_mean: 0.0,
            tol: 1e-8,
            max_iter: 100,
            clamp_eps: 1e-6,
            rho_mode: RhoMode::BaselLinked(AssetClassParams::corporate()),
            weight_by_obligors: false,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Domain(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Domain("max_iter must be at least 1".into()));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::Domain(format!(
                "clamp_eps must lie in (0, 0.5), got {}",
                self.clamp_eps
            )));
        }
        if !self.alpha_mean.is_finite() {
            return Err(Error::Domain("alpha_mean must be finite".into()));
        }
        if let RhoMode::Fixed(rhos) = &self.rho_mode {
            for &r in rhos {
                check_rho(r)?;
            }
        }
        Ok(())
    }
}

/// Systematic factor trajectory over the panel horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorPath {
    pub values: Vec<f64>,
}

impl FactorPath {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

/// Rectangular panel of observed annual default rates with explicit missing
/// cells, optionally carrying obligor counts.
///
/// Rows are sub-portfolios, columns are consecutive years. A `None` cell is a
/// missing observation. Raw rates may touch 0 or 1 (e.g. zero defaults in a
/// small book); they are clamped into the open interval at calibration time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultRatePanel {
    portfolio_ids: Vec<String>,
    years: Vec<i32>,
    cells: Vec<Vec<Option<f64>>>,
    obligor_counts: Option<Vec<Vec<Option<u64>>>>,
}

impl DefaultRatePanel {
    pub fn new(
        portfolio_ids: Vec<String>,
        years: Vec<i32>,
        cells: Vec<Vec<Option<f64>>>,
        obligor_counts: Option<Vec<Vec<Option<u64>>>>,
    ) -> Result<Self> {
        if portfolio_ids.is_empty() {
            return Err(Error::Invalid("panel has no portfolios".into()));
        }
        if years.is_empty() {
            return Err(Error::Invalid("panel has no years".into()));
        }
        for w in years.windows(2) {
            if w[1] != w[0] + 1 {
                return Err(Error::Invalid(format!(
                    "years must be consecutive and strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for id in &portfolio_ids {
            if !seen.insert(id.clone()) {
                return Err(Error::Invalid(format!("duplicate portfolio id {id:?}")));
            }
        }
        if cells.len() != portfolio_ids.len() {
            return Err(Error::Invalid(format!(
                "cell grid has {} rows for {} portfolios",
                cells.len(),
                portfolio_ids.len()
            )));
        }
        for (i, row) in cells.iter().enumerate() {
            if row.len() != years.len() {
                return Err(Error::Invalid(format!(
                    "cell row {} has {} columns for {} years",
                    i,
                    row.len(),
                    years.len()
                )));
            }
            for (t, cell) in row.iter().enumerate() {
                if let Some(d) = cell {
                    if !d.is_finite() || !(0.0..=1.0).contains(d) {
                        return Err(Error::Invalid(format!(
                            "default rate for ({}, {}) out of [0,1]: {d}",
                            portfolio_ids[i], years[t]
                        )));
                    }
                }
            }
        }
        if let Some(counts) = &obligor_counts {
            if counts.len() != portfolio_ids.len()
                || counts.iter().any(|row| row.len() != years.len())
            {
                return Err(Error::Invalid("obligor count grid shape mismatch".into()));
            }
            for (i, row) in counts.iter().enumerate() {
                for (t, c) in row.iter().enumerate() {
                    match (c, cells[i][t]) {
                        (Some(0), _) => {
                            return Err(Error::Invalid(format!(
                                "obligor count for ({}, {}) must be positive",
                                portfolio_ids[i], years[t]
                            )))
                        }
                        (None, Some(_)) => {
                            return Err(Error::Invalid(format!(
                                "cell ({}, {}) has a rate but no obligor count",
                                portfolio_ids[i], years[t]
                            )))
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(Self {
            portfolio_ids,
            years,
            cells,
            obligor_counts,
        })
    }

    pub fn n_portfolios(&self) -> usize {
        self.portfolio_ids.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn portfolio_ids(&self) -> &[String] {
        &self.portfolio_ids
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn rate(&self, portfolio: usize, year: usize) -> Option<f64> {
        self.cells[portfolio][year]
    }

    pub fn obligors(&self, portfolio: usize, year: usize) -> Option<u64> {
        self.obligor_counts
            .as_ref()
            .and_then(|c| c[portfolio][year])
    }

    pub fn has_obligor_counts(&self) -> bool {
        self.obligor_counts.is_some()
    }

    pub fn is_observed(&self, portfolio: usize, year: usize) -> bool {
        self.cells[portfolio][year].is_some()
    }

    /// Observed cells in canonical (portfolio, year) order.
    pub fn observed_cells(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.cells.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter_map(move |(t, c)| c.map(|d| (i, t, d)))
        })
    }

    pub fn observed_count(&self) -> usize {
        self.observed_cells().count()
    }

    pub fn observed_count_for(&self, portfolio: usize) -> usize {
        self.cells[portfolio].iter().filter(|c| c.is_some()).count()
    }

    /// Index of the first portfolio with no observed cells, if any.
    pub fn first_empty_portfolio(&self) -> Option<usize> {
        (0..self.n_portfolios()).find(|&i| self.observed_count_for(i) == 0)
    }

    /// Returns a copy with all cells outside the mask deleted.
    pub fn masked(&self, mask: &crate::identifiability::AvailabilityMask) -> Result<Self> {
        if mask.n_portfolios() != self.n_portfolios() || mask.n_years() != self.n_years() {
            return Err(Error::Invalid(format!(
                "mask is {}x{} but panel is {}x{}",
                mask.n_portfolios(),
                mask.n_years(),
                self.n_portfolios(),
                self.n_years()
            )));
        }
        let cells = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(t, c)| if mask.is_observed(i, t) { *c } else { None })
                    .collect()
            })
            .collect();
        let counts = self.obligor_counts.as_ref().map(|grid| {
            grid.iter()
                .enumerate()
                .map(|(i, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(t, c)| if mask.is_observed(i, t) { *c } else { None })
                        .collect()
                })
                .collect()
        });
        Self::new(
            self.portfolio_ids.clone(),
            self.years.clone(),
            cells,
            counts,
        )
    }
}

/// Record of one degenerate rate pushed into the open interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampWarning {
    pub portfolio: usize,
    pub year: usize,
    pub raw: f64,
    pub clamped: f64,
}

/// Clamp degenerate rates (exactly 0 or 1) into the open interval.
///
/// With obligor counts the floor is 1/(2n); otherwise `clamp_eps`.
pub(crate) fn clamped_rates(
    panel: &DefaultRatePanel,
    clamp_eps: f64,
) -> (Vec<Vec<Option<f64>>>, Vec<ClampWarning>) {
    let mut warnings = Vec::new();
    let cells = (0..panel.n_portfolios())
        .map(|i| {
            (0..panel.n_years())
                .map(|t| {
                    panel.rate(i, t).map(|d| {
                        let lo = match panel.obligors(i, t) {
                            Some(n) => 1.0 / (2.0 * n as f64),
                            None => clamp_eps,
                        };
                        if d <= 0.0 {
                            warnings.push(ClampWarning {
                                portfolio: i,
                                year: t,
                                raw: d,
                                clamped: lo,
                            });
                            lo
                        } else if d >= 1.0 {
                            let hi = 1.0 - lo;
                            warnings.push(ClampWarning {
                                portfolio: i,
                                year: t,
                                raw: d,
                                clamped: hi,
                            });
                            hi
                        } else {
                            d
                        }
                    })
                })
                .collect()
        })
        .collect();
    (cells, warnings)
}

/// Residual of one observed cell, fitted minus empirical, in transformed
/// (y) units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellResidual {
    pub portfolio: usize,
    pub year: usize,
    pub value: f64,
}

/// Output of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Transformed TTC level per portfolio (probit units).
    pub k: Vec<f64>,
    /// TTC PD per portfolio, Phi(K_i).
    pub ttc_pd: Vec<f64>,
    /// Asset correlation per portfolio.
    pub rho: Vec<f64>,
    /// Fitted systematic factor path.
    pub factor: FactorPath,
    /// Fitted PIT PD for every (portfolio, year), including cells that were
    /// missing from the input panel.
    pub pit_pd: Vec<Vec<f64>>,
    /// Residuals for observed cells only.
    pub residuals: Vec<CellResidual>,
    pub iterations: usize,
    pub converged: bool,
    /// Degenerate rates that were clamped before transforming.
    pub warnings: Vec<ClampWarning>,
}

/// Calibration output with the convergence trace when the nonlinear path ran.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationOutput {
    pub result: CalibrationResult,
    pub trace: Option<crate::nonlinear::ConvergenceTrace>,
}

/// Calibrate a panel according to `config.rho_mode`: the linear solver for
/// fixed correlations, the Basel-linked fixed-point loop otherwise.
pub fn calibrate(
    panel: &DefaultRatePanel,
    config: &CalibrationConfig,
) -> Result<CalibrationOutput> {
    config.validate()?;
    match &config.rho_mode {
        RhoMode::Fixed(rhos) => {
            let result = crate::linear::fit_linear(panel, rhos, config)?;
            Ok(CalibrationOutput {
                result,
                trace: None,
            })
        }
        RhoMode::BaselLinked(params) => {
            let (result, trace) = crate::nonlinear::fit_nonlinear(panel, params, config)?;
            Ok(CalibrationOutput {
                result,
                trace: Some(trace),
            })
        }
    }
}
