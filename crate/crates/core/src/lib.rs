//! Calibration engine for through-the-cycle (TTC) and point-in-time (PIT)
//! default probabilities under the dynamic Vasicek single-risk-factor model.
//!
//! The library estimates, from a possibly incomplete panel of annual default
//! rates, three things at once:
//!
//! * per-portfolio unconditional (TTC) default probabilities,
//! * per-year conditional (PIT) default probabilities, and
//! * the latent systematic factor path shared by all portfolios,
//!
//! subject to an exact constraint on the time-mean of the factor. Asset
//! correlations can be fixed per portfolio or tied to the TTC PD through the
//! Basel IRB correlation function, in which case an outer fixed-point loop
//! wraps the linear solver.
//!
//! Crate layout:
//!
//! * [`normal`] — standard normal CDF and quantile.
//! * [`model`] — domain types and the closed-form Vasicek/Basel transforms.
//! * [`linear`] — the equality-constrained least-squares solver for fixed
//!   correlations.
//! * [`identifiability`] — rank tests and graph diagnostics for missing-data
//!   patterns.
//! * [`nonlinear`] — the Basel-linked fixed-point calibration.
//! * [`simulate`] — synthetic panel generation and Monte Carlo experiments.
//!
//! The `parallel` feature (on by default) runs Monte Carlo replications on a
//! rayon pool. Replication RNG streams are derived from the master seed, so
//! serial and parallel execution produce identical results.

pub mod error;
pub mod identifiability;
pub mod linear;
pub mod model;
pub mod nonlinear;
pub mod normal;
pub mod simulate;

pub use error::{Error, Result};
pub use identifiability::{
    check_identifiability, observed_factor_mean, AvailabilityMask, GraphComponent,
    IdentifiabilityReport,
};
pub use linear::{build_system, fit_linear, solve_constrained_ls, DesignSystem, LinearSolution};
pub use model::{
    basel_rho, calibrate, eta_transform, pit_pd, wcdr, AssetClassParams, CalibrationConfig,
    CalibrationOutput, CalibrationResult, CellResidual, ClampWarning, DefaultRatePanel, FactorPath,
    RhoMode,
};
pub use nonlinear::{fit_nonlinear, objective, ConvergenceTrace, IterationRecord};
pub use normal::{std_normal_cdf, std_normal_quantile};
pub use simulate::{
    gen_default_panel, gen_factor_path, run_recovery_experiment, run_sample_size_sweep,
    run_sample_size_sweep_serial, ExperimentResult, FactorSpec, PanelTruth, RecoveryReport,
    SeedStream, SimulationSpec, SweepCell, SweepSummaryRow, SweepTable,
};
