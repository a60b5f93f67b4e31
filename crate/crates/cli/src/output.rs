//! Structured result documents and plot-ready CSV emission.
//!
//! The JSON result file round-trips losslessly (serde_json prints shortest
//! round-trip doubles). Plot files are long-format `series,x,y` tables, one
//! series per fitted/true quantity, ready for any plotting frontend.

use serde::{Deserialize, Serialize};
use ttcpd_core::{
    CalibrationConfig, CalibrationOutput, CalibrationResult, ConvergenceTrace, DefaultRatePanel,
    ExperimentResult, IdentifiabilityReport,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PortfolioResult {
    pub id: String,
    pub k: f64,
    pub ttc_pd: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PitRow {
    pub id: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledResidual {
    pub id: String,
    pub year: i32,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledWarning {
    pub id: String,
    pub year: i32,
    pub raw: f64,
    pub clamped: f64,
}

/// The calibrate command's structured output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultFile {
    pub config: CalibrationConfig,
    pub portfolios: Vec<PortfolioResult>,
    pub years: Vec<i32>,
    pub factor: Vec<f64>,
    pub pit_pd: Vec<PitRow>,
    pub residuals: Vec<LabeledResidual>,
    pub identifiability: IdentifiabilityReport,
    pub convergence: Option<ConvergenceTrace>,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<LabeledWarning>,
}

pub fn build_result_file(
    panel: &DefaultRatePanel,
    config: &CalibrationConfig,
    output: &CalibrationOutput,
    identifiability: IdentifiabilityReport,
) -> ResultFile {
    let r = &output.result;
    let ids = panel.portfolio_ids();
    let years = panel.years();
    ResultFile {
        config: config.clone(),
        portfolios: (0..panel.n_portfolios())
            .map(|i| PortfolioResult {
                id: ids[i].clone(),
                k: r.k[i],
                ttc_pd: r.ttc_pd[i],
                rho: r.rho[i],
            })
            .collect(),
        years: years.to_vec(),
        factor: r.factor.values.clone(),
        pit_pd: (0..panel.n_portfolios())
            .map(|i| PitRow {
                id: ids[i].clone(),
                values: r.pit_pd[i].clone(),
            })
            .collect(),
        residuals: r
            .residuals
            .iter()
            .map(|c| LabeledResidual {
                id: ids[c.portfolio].clone(),
                year: years[c.year],
                value: c.value,
            })
            .collect(),
        identifiability,
        convergence: output.trace.clone(),
        iterations: r.iterations,
        converged: r.converged,
        warnings: r
            .warnings
            .iter()
            .map(|w| LabeledWarning {
                id: ids[w.portfolio].clone(),
                year: years[w.year],
                raw: w.raw,
                clamped: w.clamped,
            })
            .collect(),
    }
}

pub fn result_to_json(result: &ResultFile) -> String {
    let mut s = serde_json::to_string_pretty(result).expect("result serializes");
    s.push('\n');
    s
}

/// Flat CSV rendering of the result: `record,portfolio_id,year,value` rows,
/// section by section.
pub fn result_to_csv(result: &ResultFile) -> String {
    let mut out = String::from("record,portfolio_id,year,value\n");
    for p in &result.portfolios {
        out.push_str(&format!("k,{},,{}\n", p.id, p.k));
        out.push_str(&format!("ttc_pd,{},,{}\n", p.id, p.ttc_pd));
        out.push_str(&format!("rho,{},,{}\n", p.id, p.rho));
    }
    for (t, f) in result.factor.iter().enumerate() {
        out.push_str(&format!("factor,,{},{}\n", result.years[t], f));
    }
    for row in &result.pit_pd {
        for (t, v) in row.values.iter().enumerate() {
            out.push_str(&format!("pit_pd,{},{},{}\n", row.id, result.years[t], v));
        }
    }
    for r in &result.residuals {
        out.push_str(&format!("residual,{},{},{}\n", r.id, r.year, r.value));
    }
    for w in &result.warnings {
        out.push_str(&format!("warning_raw,{},{},{}\n", w.id, w.year, w.raw));
        out.push_str(&format!(
            "warning_clamped,{},{},{}\n",
            w.id, w.year, w.clamped
        ));
    }
    out.push_str(&format!(
        "identifiable,,,{}\n",
        u8::from(result.identifiability.identifiable)
    ));
    out.push_str(&format!("iterations,,,{}\n", result.iterations));
    out.push_str(&format!("converged,,,{}\n", u8::from(result.converged)));
    out
}

/// Truth sidecar written by the simulate command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthFile {
    pub spec: ttcpd_core::SimulationSpec,
    pub truth: ttcpd_core::PanelTruth,
}

fn push_series(out: &mut String, series: &str, x: impl std::fmt::Display, y: f64) {
    out.push_str(&format!("{series},{x},{y}\n"));
}

/// Long-format plot data for a recovery experiment: the factor trajectory,
/// per-portfolio true and fitted PIT/TTC series, and the observed rates.
pub fn recovery_plot_csv(exp: &ExperimentResult) -> String {
    let mut out = String::from("series,x,y\n");
    let truth = &exp.truth;
    let calib: &CalibrationResult = exp.calibration.as_ref().expect("recovery result");
    let panel = exp.panel.as_ref().expect("recovery panel");
    let years = panel.years();
    for (t, &y) in years.iter().enumerate() {
        push_series(&mut out, "factor_true", y, truth.factor.values[t]);
    }
    for (t, &y) in years.iter().enumerate() {
        push_series(&mut out, "factor_fitted", y, calib.factor.values[t]);
    }
    for (i, id) in panel.portfolio_ids().iter().enumerate() {
        for (t, &y) in years.iter().enumerate() {
            push_series(&mut out, &format!("pit_true[{id}]"), y, truth.pit[i][t]);
        }
        for (t, &y) in years.iter().enumerate() {
            push_series(
                &mut out,
                &format!("pit_fitted[{id}]"),
                y,
                calib.pit_pd[i][t],
            );
        }
        for (t, &y) in years.iter().enumerate() {
            if let Some(rate) = panel.rate(i, t) {
                push_series(&mut out, &format!("rate_observed[{id}]"), y, rate);
            }
        }
        for &y in years {
            push_series(&mut out, &format!("ttc_true[{id}]"), y, truth.ttc_pd[i]);
        }
        for &y in years {
            push_series(&mut out, &format!("ttc_fitted[{id}]"), y, calib.ttc_pd[i]);
        }
    }
    out
}

/// Long-format plot data for a sample-size sweep: per-replication estimates
/// with truth and per-size mean reference series.
pub fn sweep_plot_csv(exp: &ExperimentResult) -> String {
    let mut out = String::from("series,x,y\n");
    let table = exp.sweep.as_ref().expect("sweep table");
    let n_p = exp.truth.ttc_pd.len();
    let id = |i: usize| format!("P{}", i + 1);
    for cell in &table.cells {
        if let Some(est) = &cell.ttc_estimates {
            for (i, &e) in est.iter().enumerate() {
                push_series(&mut out, &format!("ttc_estimate[{}]", id(i)), cell.size, e);
            }
        }
    }
    for row in &table.summary {
        for i in 0..n_p {
            push_series(
                &mut out,
                &format!("ttc_mean[{}]", id(i)),
                row.size,
                row.mean_estimate[i],
            );
            push_series(
                &mut out,
                &format!("ttc_true[{}]", id(i)),
                row.size,
                exp.truth.ttc_pd[i],
            );
        }
    }
    out
}

/// Per-size aggregate table of a sweep.
pub fn sweep_summary_csv(exp: &ExperimentResult) -> String {
    let mut out = String::from(
        "size,portfolio_id,successes,failures,mean_estimate,sd_estimate,mean_abs_error\n",
    );
    let table = exp.sweep.as_ref().expect("sweep table");
    for row in &table.summary {
        for i in 0..exp.truth.ttc_pd.len() {
            out.push_str(&format!(
                "{},P{},{},{},{},{},{}\n",
                row.size,
                i + 1,
                row.successes,
                row.failures,
                row.mean_estimate[i],
                row.sd_estimate[i],
                row.mean_abs_error[i]
            ));
        }
    }
    out
}
