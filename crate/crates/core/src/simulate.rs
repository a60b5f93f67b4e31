//! Synthetic factor paths, binomial default panels, and the Monte Carlo
//! experiments that validate the estimator end to end.
//!
//! # RNG streams
//!
//! All randomness flows from a single 64-bit master seed through a
//! splittable [`SeedStream`]. The stream tree is fixed:
//!
//! * `master.child(1)` — factor path draws (AR(1) innovations, in year order);
//! * `master.child(2).child(i).child(t)` — the binomial default draw for
//!   portfolio `i` in year `t`;
//! * `master.child(3).child(size_index).child(replication)` — the seed of one
//!   sweep replication.
//!
//! Because every draw has its own stream, generation never depends on loop
//! or thread order: serial and parallel sweeps produce identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identifiability::{check_identifiability, AvailabilityMask};
use crate::model::{
    basel_rho, AssetClassParams, CalibrationConfig, CalibrationResult, DefaultRatePanel, FactorPath,
};
use crate::nonlinear::{fit_nonlinear, ConvergenceTrace};
use crate::normal::{std_normal_cdf, std_normal_quantile};

const TAG_FACTOR: u64 = 1;
const TAG_PANEL: u64 = 2;
const TAG_SWEEP: u64 = 3;

/// The six theoretical TTC PDs of the reference simulation study.
pub const PAPER_TTC_PDS: [f64; 6] = [0.005, 0.017, 0.034, 0.056, 0.07, 0.09];

/// Horizon of the reference simulation study.
pub const PAPER_HORIZON: usize = 20;

/// Splittable deterministic seed stream (SplitMix64 mixing).
///
/// `child(tag)` derives an independent stream; `rng()` instantiates a
/// counter-based ChaCha12 generator on the stream's state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream(u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self(splitmix64(seed))
    }

    pub fn child(self, tag: u64) -> Self {
        Self(splitmix64(
            self.0 ^ splitmix64(tag.wrapping_add(0xA076_1D64_78BD_642F)),
        ))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(self.0)
    }
}

/// How the systematic factor path is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FactorSpec {
    /// Use this path verbatim.
    ExplicitPath(FactorPath),
    /// First-order autoregression with standard normal marginals:
    /// f_1 ~ N(0,1), f_t = phi f_{t-1} + sqrt(1 - phi^2) eps_t.
    Ar1 { persistence: f64 },
}

/// Data-generating process for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub true_ttc_pds: Vec<f64>,
    pub horizon: usize,
    pub factor_spec: FactorSpec,
    /// Obligor count per portfolio.
    pub n_obligors: Vec<u64>,
    pub asset_class: AssetClassParams,
    /// Availability pattern applied after generation; `None` keeps the panel
    /// complete.
    pub mask: Option<AvailabilityMask>,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.true_ttc_pds.is_empty() {
            return Err(Error::Invalid(
                "simulation needs at least one portfolio".into(),
            ));
        }
        for &p in &self.true_ttc_pds {
            if !(p.is_finite() && p > 0.0 && p < 1.0) {
                return Err(Error::Invalid(format!("true TTC PD out of (0,1): {p}")));
            }
        }
        if self.horizon == 0 {
            return Err(Error::Invalid("horizon must be at least one year".into()));
        }
        if self.n_obligors.len() != self.true_ttc_pds.len() {
            return Err(Error::Invalid(format!(
                "{} obligor counts for {} portfolios",
                self.n_obligors.len(),
                self.true_ttc_pds.len()
            )));
        }
        if self.n_obligors.contains(&0) {
            return Err(Error::Invalid("obligor counts must be positive".into()));
        }
        if let FactorSpec::Ar1 { persistence } = self.factor_spec {
            if !(persistence.is_finite() && persistence.abs() < 1.0) {
                return Err(Error::Domain(format!(
                    "AR(1) persistence must lie in (-1,1), got {persistence}"
                )));
            }
        }
        if let FactorSpec::ExplicitPath(p) = &self.factor_spec {
            if p.len() != self.horizon {
                return Err(Error::Invalid(format!(
                    "explicit factor path has {} years but horizon is {}",
                    p.len(),
                    self.horizon
                )));
            }
        }
        if let Some(mask) = &self.mask {
            if mask.n_portfolios() != self.true_ttc_pds.len() || mask.n_years() != self.horizon {
                return Err(Error::Invalid(format!(
                    "mask is {}x{} but spec is {}x{}",
                    mask.n_portfolios(),
                    mask.n_years(),
                    self.true_ttc_pds.len(),
                    self.horizon
                )));
            }
        }
        AssetClassParams::new(
            self.asset_class.rho_min,
            self.asset_class.rho_max,
            self.asset_class.w,
        )?;
        Ok(())
    }

    /// The reference study: six portfolios, twenty years, corporate Basel
    /// correlations, and the shipped factor path.
    pub fn paper_setup(n_obligors: u64, seed: u64) -> Self {
        Self {
            true_ttc_pds: PAPER_TTC_PDS.to_vec(),
            horizon: PAPER_HORIZON,
            factor_spec: FactorSpec::ExplicitPath(reference_factor_path()),
            n_obligors: vec![n_obligors; PAPER_TTC_PDS.len()],
            asset_class: AssetClassParams::corporate(),
            mask: None,
            seed,
        }
    }

    fn true_rho(&self) -> Result<Vec<f64>> {
        self.true_ttc_pds
            .iter()
            .map(|&p| basel_rho(p, &self.asset_class))
            .collect()
    }
}

/// The shipped 20-year realization of the AR(1) factor, centered so its
/// time-mean is zero. Experiments that reproduce the reference figures use
/// this path so their outputs are stable across runs and machines.
pub fn reference_factor_path() -> FactorPath {
    let text = include_str!("../../../data/reference_factor_path.csv");
    let values = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .nth(1)
                .expect("reference path line must be `t,f`")
                .trim()
                .parse::<f64>()
                .expect("reference path value must parse")
        })
        .collect();
    FactorPath::new(values)
}

/// The shipped availability mask used by the incomplete-data experiments:
/// six portfolios, twenty years, no portfolio complete, overlapping
/// coverage of every year.
pub fn paper_availability_mask() -> AvailabilityMask {
    AvailabilityMask::from_text(include_str!("../../../data/paper_fig4.mask"))
        .expect("shipped mask must parse")
}

/// Stored truth behind one generated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelTruth {
    pub ttc_pd: Vec<f64>,
    pub k: Vec<f64>,
    pub rho: Vec<f64>,
    pub factor: FactorPath,
    /// True PIT PD for every (portfolio, year), before masking.
    pub pit: Vec<Vec<f64>>,
}

/// Draw the factor path prescribed by the spec.
pub fn gen_factor_path(spec: &SimulationSpec) -> Result<FactorPath> {
    spec.validate()?;
    match &spec.factor_spec {
        FactorSpec::ExplicitPath(p) => Ok(p.clone()),
        FactorSpec::Ar1 { persistence } => {
            let phi = *persistence;
            let mut rng = SeedStream::new(spec.seed).child(TAG_FACTOR).rng();
            let scale = (1.0 - phi * phi).sqrt();
            let mut values = Vec::with_capacity(spec.horizon);
            let mut prev: f64 = StandardNormal.sample(&mut rng);
            values.push(prev);
            for _ in 1..spec.horizon {
                let eps: f64 = StandardNormal.sample(&mut rng);
                prev = phi * prev + scale * eps;
                values.push(prev);
            }
            Ok(FactorPath::new(values))
        }
    }
}

/// Generate one default-rate panel: binomial defaults around the true PIT
/// PDs, rates as defaults/obligors, the mask (if any) applied afterwards.
///
/// Returns the panel together with the full (unmasked) truth.
pub fn gen_default_panel(
    spec: &SimulationSpec,
    factor: &FactorPath,
) -> Result<(DefaultRatePanel, PanelTruth)> {
    spec.validate()?;
    if factor.len() != spec.horizon {
        return Err(Error::Invalid(format!(
            "factor path has {} years but horizon is {}",
            factor.len(),
            spec.horizon
        )));
    }
    let n_p = spec.true_ttc_pds.len();
    let rho = spec.true_rho()?;
    let k: Vec<f64> = spec
        .true_ttc_pds
        .iter()
        .map(|&p| std_normal_quantile(p))
        .collect::<Result<_>>()?;

    let pit: Vec<Vec<f64>> = (0..n_p)
        .map(|i| {
            let denom = (1.0 - rho[i]).sqrt();
            let shift = rho[i].sqrt();
            factor
                .values
                .iter()
                .map(|&f| std_normal_cdf((k[i] - shift * f) / denom))
                .collect()
        })
        .collect();

    let panel_stream = SeedStream::new(spec.seed).child(TAG_PANEL);
    let mut cells = vec![vec![None; spec.horizon]; n_p];
    let mut counts = vec![vec![None; spec.horizon]; n_p];
    for i in 0..n_p {
        let n = spec.n_obligors[i];
        for t in 0..spec.horizon {
            let mut rng = panel_stream.child(i as u64).child(t as u64).rng();
            let binom = Binomial::new(n, pit[i][t])
                .map_err(|e| Error::Invalid(format!("binomial draw failed: {e}")))?;
            let defaults = binom.sample(&mut rng);
            cells[i][t] = Some(defaults as f64 / n as f64);
            counts[i][t] = Some(n);
        }
    }
    let ids = (0..n_p).map(|i| format!("P{}", i + 1)).collect();
    let years = (1..=spec.horizon as i32).collect();
    let mut panel = DefaultRatePanel::new(ids, years, cells, Some(counts))?;
    if let Some(mask) = &spec.mask {
        panel = panel.masked(mask)?;
    }
    let truth = PanelTruth {
        ttc_pd: spec.true_ttc_pds.clone(),
        k,
        rho,
        factor: factor.clone(),
        pit,
    };
    Ok((panel, truth))
}

/// Per-portfolio recovery errors of one calibration against stored truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Fitted minus true TTC PD.
    pub ttc_error: Vec<f64>,
    /// (fitted - true) / true TTC PD.
    pub ttc_rel_error: Vec<f64>,
    pub max_abs_k_error: f64,
}

/// One sweep replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub size: u64,
    pub replication: usize,
    pub seed: u64,
    /// Fitted TTC PDs, absent when the replication failed.
    pub ttc_estimates: Option<Vec<f64>>,
    pub error: Option<String>,
}

/// Per-size aggregate of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummaryRow {
    pub size: u64,
    pub successes: usize,
    pub failures: usize,
    /// Mean fitted TTC PD per portfolio over successful replications.
    pub mean_estimate: Vec<f64>,
    /// Standard deviation of the fitted TTC PD per portfolio.
    pub sd_estimate: Vec<f64>,
    /// Mean absolute estimation error per portfolio.
    pub mean_abs_error: Vec<f64>,
}

/// All replications of a sample-size sweep plus per-size aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
    pub summary: Vec<SweepSummaryRow>,
}

/// Output of one experiment run. Reproducible: the same spec and seed give
/// a bit-identical value (there is no timing metadata).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: SimulationSpec,
    pub truth: PanelTruth,
    pub panel: Option<DefaultRatePanel>,
    pub calibration: Option<CalibrationResult>,
    pub trace: Option<ConvergenceTrace>,
    pub recovery: Option<RecoveryReport>,
    pub sweep: Option<SweepTable>,
}

fn recovery_report(truth: &PanelTruth, result: &CalibrationResult) -> RecoveryReport {
    let ttc_error: Vec<f64> = result
        .ttc_pd
        .iter()
        .zip(&truth.ttc_pd)
        .map(|(fit, tru)| fit - tru)
        .collect();
    let ttc_rel_error = ttc_error
        .iter()
        .zip(&truth.ttc_pd)
        .map(|(err, tru)| err / tru)
        .collect();
    let max_abs_k_error = result
        .k
        .iter()
        .zip(&truth.k)
        .map(|(fit, tru)| (fit - tru).abs())
        .fold(0.0_f64, f64::max);
    RecoveryReport {
        ttc_error,
        ttc_rel_error,
        max_abs_k_error,
    }
}

fn reject_unidentifiable_mask(spec: &SimulationSpec) -> Result<()> {
    if let Some(mask) = &spec.mask {
        let rho = spec.true_rho()?;
        let report = check_identifiability(mask, &rho);
        if !report.identifiable {
            return Err(Error::Singular(Box::new(report)));
        }
    }
    Ok(())
}

/// Generate one panel and calibrate it, reporting fitted against true
/// parameters. Unidentifiable masks are rejected before any generation.
pub fn run_recovery_experiment(
    spec: &SimulationSpec,
    config: &CalibrationConfig,
) -> Result<ExperimentResult> {
    spec.validate()?;
    config.validate()?;
    reject_unidentifiable_mask(spec)?;
    let factor = gen_factor_path(spec)?;
    let (panel, truth) = gen_default_panel(spec, &factor)?;
    let (calibration, trace) = fit_nonlinear(&panel, &spec.asset_class, config)?;
    let recovery = recovery_report(&truth, &calibration);
    Ok(ExperimentResult {
        spec: spec.clone(),
        truth,
        panel: Some(panel),
        calibration: Some(calibration),
        trace: Some(trace),
        recovery: Some(recovery),
        sweep: None,
    })
}

fn run_one_sweep_job(
    spec: &SimulationSpec,
    factor: &FactorPath,
    config: &CalibrationConfig,
    sizes: &[u64],
    replications: usize,
    job: usize,
) -> SweepCell {
    let size_idx = job / replications;
    let rep = job % replications;
    let size = sizes[size_idx];
    let rep_seed = SeedStream::new(spec.seed)
        .child(TAG_SWEEP)
        .child(size_idx as u64)
        .child(rep as u64)
        .value();
    let rep_spec = SimulationSpec {
        n_obligors: vec![size; spec.true_ttc_pds.len()],
        seed: rep_seed,
        factor_spec: FactorSpec::ExplicitPath(factor.clone()),
        ..spec.clone()
    };
    let outcome = gen_default_panel(&rep_spec, factor)
        .and_then(|(panel, _)| fit_nonlinear(&panel, &spec.asset_class, config));
    match outcome {
        Ok((result, _)) => SweepCell {
            size,
            replication: rep,
            seed: rep_seed,
            ttc_estimates: Some(result.ttc_pd),
            error: None,
        },
        Err(e) => SweepCell {
            size,
            replication: rep,
            seed: rep_seed,
            ttc_estimates: None,
            error: Some(e.to_string()),
        },
    }
}

#[cfg(feature = "parallel")]
fn map_jobs<F>(n: usize, parallel: bool, f: F) -> Vec<SweepCell>
where
    F: Fn(usize) -> SweepCell + Sync + Send,
{
    use rayon::prelude::*;
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn map_jobs<F>(n: usize, _parallel: bool, f: F) -> Vec<SweepCell>
where
    F: Fn(usize) -> SweepCell + Sync + Send,
{
    (0..n).map(f).collect()
}

fn run_sweep_impl(
    spec: &SimulationSpec,
    sizes: &[u64],
    replications: usize,
    config: &CalibrationConfig,
    parallel: bool,
) -> Result<ExperimentResult> {
    spec.validate()?;
    config.validate()?;
    if sizes.is_empty() {
        return Err(Error::Invalid(
            "sweep needs at least one sample size".into(),
        ));
    }
    if sizes.contains(&0) {
        return Err(Error::Invalid("sample sizes must be positive".into()));
    }
    if replications == 0 {
        return Err(Error::Invalid(
            "sweep needs at least one replication".into(),
        ));
    }
    reject_unidentifiable_mask(spec)?;
    let factor = gen_factor_path(spec)?;
    // Truth is size-independent; materialize it from a one-obligor variant.
    let truth_spec = SimulationSpec {
        n_obligors: vec![1; spec.true_ttc_pds.len()],
        factor_spec: FactorSpec::ExplicitPath(factor.clone()),
        ..spec.clone()
    };
    let (_, truth) = gen_default_panel(&truth_spec, &factor)?;

    let n_jobs = sizes.len() * replications;
    let cells = map_jobs(n_jobs, parallel, |job| {
        run_one_sweep_job(spec, &factor, config, sizes, replications, job)
    });

    let n_p = spec.true_ttc_pds.len();
    let mut summary = Vec::with_capacity(sizes.len());
    for (s_idx, &size) in sizes.iter().enumerate() {
        let block = &cells[s_idx * replications..(s_idx + 1) * replications];
        let ok: Vec<&Vec<f64>> = block
            .iter()
            .filter_map(|c| c.ttc_estimates.as_ref())
            .collect();
        if ok.is_empty() {
            let first_err = block
                .iter()
                .find_map(|c| c.error.clone())
                .unwrap_or_else(|| "unknown".into());
            return Err(Error::Invalid(format!(
                "all {replications} replications failed at size {size}: {first_err}"
            )));
        }
        let m = ok.len() as f64;
        let mut mean_estimate = vec![0.0; n_p];
        for est in &ok {
            for i in 0..n_p {
                mean_estimate[i] += est[i] / m;
            }
        }
        let mut sd_estimate = vec![0.0; n_p];
        if ok.len() > 1 {
            for est in &ok {
                for i in 0..n_p {
                    let d = est[i] - mean_estimate[i];
                    sd_estimate[i] += d * d / (m - 1.0);
                }
            }
            for s in &mut sd_estimate {
                *s = s.sqrt();
            }
        }
        let mut mean_abs_error = vec![0.0; n_p];
        for est in &ok {
            for i in 0..n_p {
                mean_abs_error[i] += (est[i] - spec.true_ttc_pds[i]).abs() / m;
            }
        }
        summary.push(SweepSummaryRow {
            size,
            successes: ok.len(),
            failures: replications - ok.len(),
            mean_estimate,
            sd_estimate,
            mean_abs_error,
        });
    }

    Ok(ExperimentResult {
        spec: spec.clone(),
        truth,
        panel: None,
        calibration: None,
        trace: None,
        recovery: None,
        sweep: Some(SweepTable { cells, summary }),
    })
}

/// Sample-size sweep: for every size and replication, regenerate the
/// binomial defaults around the fixed factor path and recalibrate.
///
/// Individual replication failures are recorded in the table; the sweep
/// itself fails only when every replication of some size fails. With the
/// `parallel` feature the replications run on the rayon pool; results are
/// identical to serial execution.
pub fn run_sample_size_sweep(
    spec: &SimulationSpec,
    sizes: &[u64],
    replications: usize,
    config: &CalibrationConfig,
) -> Result<ExperimentResult> {
    run_sweep_impl(
        spec,
        sizes,
        replications,
        config,
        cfg!(feature = "parallel"),
    )
}

/// Sequential variant of [`run_sample_size_sweep`], always available; used
/// by the determinism checks and benchmarks.
pub fn run_sample_size_sweep_serial(
    spec: &SimulationSpec,
    sizes: &[u64],
    replications: usize,
    config: &CalibrationConfig,
) -> Result<ExperimentResult> {
    run_sweep_impl(spec, sizes, replications, config, false)
}
