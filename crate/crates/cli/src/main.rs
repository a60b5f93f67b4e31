//! ttcpd: calibrate through-the-cycle and point-in-time default
//! probabilities from annual default-rate panels, simulate synthetic
//! panels, and run the validation experiments.
//!
//! Exit codes: 0 success, 1 I/O, 2 parse, 3 unidentifiable, 4 not
//! converged, 5 domain/validation (see `error.rs`).

mod error;
mod output;
mod panel_csv;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::{CliError, CliResult};
use ttcpd_core::{
    basel_rho, calibrate, check_identifiability, gen_default_panel, gen_factor_path,
    run_recovery_experiment, run_sample_size_sweep, run_sample_size_sweep_serial, wcdr,
    AssetClassParams, AvailabilityMask, CalibrationConfig, DefaultRatePanel, FactorPath,
    FactorSpec, IdentifiabilityReport, RhoMode, SimulationSpec,
};

#[derive(Parser)]
#[command(
    name = "ttcpd",
    version,
    about = "Through-the-cycle PD calibration under the dynamic Vasicek single-risk-factor model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate TTC PDs, PIT PDs, and the factor path from a panel CSV
    Calibrate(CalibrateArgs),
    /// Generate a synthetic default panel plus a truth sidecar
    Simulate(SimulateArgs),
    /// Report whether a panel's missing-data pattern is identifiable
    Check(CheckArgs),
    /// Evaluate the worst-case default rate for one exposure
    Wcdr(WcdrArgs),
    /// Run the recovery or sample-size-sweep experiment with plot output
    Experiment(ExperimentArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ExperimentMode {
    Recovery,
    Sweep,
}

fn parse_asset_class(s: &str) -> Result<AssetClassParams, String> {
    match s {
        "corporate" => Ok(AssetClassParams::corporate()),
        "retail" => Ok(AssetClassParams::retail()),
        other => {
            let spec = other.strip_prefix("custom:").ok_or_else(|| {
                format!("expected corporate, retail, or custom:RHO_MIN,RHO_MAX,W (got {other:?})")
            })?;
            let parts: Vec<&str> = spec.split(',').collect();
            if parts.len() != 3 {
                return Err("custom asset class needs three values: RHO_MIN,RHO_MAX,W".into());
            }
            let nums: Result<Vec<f64>, _> = parts.iter().map(|p| p.trim().parse()).collect();
            let nums = nums.map_err(|e| format!("bad custom asset class number: {e}"))?;
            AssetClassParams::new(nums[0], nums[1], nums[2]).map_err(|e| e.to_string())
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    /// Panel CSV: portfolio_id,year,defaults,obligors or
    /// portfolio_id,year,default_rate
    input: PathBuf,
    /// Basel exposure class: corporate, retail, or custom:RHO_MIN,RHO_MAX,W
    #[arg(long, value_parser = parse_asset_class, default_value = "corporate")]
    asset_class: AssetClassParams,
    /// Fixed per-portfolio correlations, comma separated (selects the
    /// linear model; portfolios in sorted-id order)
    #[arg(long, value_delimiter = ',', conflicts_with = "asset_class")]
    fixed_rho: Option<Vec<f64>>,
    /// Target time-mean of the factor path (slightly positive when the
    /// sample covers a boom)
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Floor applied to degenerate rates when no obligor counts exist
    #[arg(long, default_value_t = 1e-6)]
    clamp_eps: f64,
    /// Weight each observed cell by its obligor count
    #[arg(long)]
    weight_by_obligors: bool,
    /// Output path (stdout when omitted); relative paths resolve against
    /// $TTCPD_OUT_DIR
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

/// Data-generating flags shared by `simulate` and `experiment`.
#[derive(Args)]
struct SpecArgs {
    /// Master seed; all randomness derives from it
    #[arg(long)]
    seed: u64,
    /// Reference study: six portfolios, twenty years, corporate
    /// correlations, the shipped factor path
    #[arg(long)]
    paper_setup: bool,
    /// True TTC PDs, comma separated
    #[arg(long, value_delimiter = ',')]
    ttc_pds: Option<Vec<f64>>,
    /// Horizon in years
    #[arg(long)]
    horizon: Option<usize>,
    /// AR(1) persistence for a generated factor path
    #[arg(long)]
    phi: Option<f64>,
    /// CSV file (t,f) holding an explicit factor path
    #[arg(long)]
    factor_file: Option<PathBuf>,
    /// Obligors per portfolio
    #[arg(long, default_value_t = 10_000)]
    n: u64,
    #[arg(long, value_parser = parse_asset_class, default_value = "corporate")]
    asset_class: AssetClassParams,
    /// Availability mask file: one line of 0/1 characters per portfolio
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, default_value = "panel.csv")]
    out_panel: PathBuf,
    #[arg(long, default_value = "truth.json")]
    out_truth: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    input: PathBuf,
    #[arg(long, value_parser = parse_asset_class, default_value = "corporate")]
    asset_class: AssetClassParams,
    /// Fixed per-portfolio correlations for the rank test
    #[arg(long, value_delimiter = ',', conflicts_with = "asset_class")]
    fixed_rho: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    format: ReportFormat,
}

#[derive(Args)]
struct WcdrArgs {
    #[arg(long)]
    pd: f64,
    /// Asset correlation (alternative: derive it with --asset-class)
    #[arg(long, conflicts_with = "asset_class")]
    rho: Option<f64>,
    #[arg(long, value_parser = parse_asset_class)]
    asset_class: Option<AssetClassParams>,
    #[arg(long, default_value_t = 0.999)]
    confidence: f64,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_enum)]
    mode: ExperimentMode,
    #[command(flatten)]
    spec: SpecArgs,
    /// Sample sizes for the sweep, comma separated
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<u64>>,
    #[arg(long, default_value_t = 20)]
    replications: usize,
    /// Run sweep replications sequentially (results are identical)
    #[arg(long)]
    serial: bool,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Directory receiving the result and plot files
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    if code != 0 {
        std::process::exit(code);
    }
}

fn run(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Check(args) => cmd_check(args),
        Command::Wcdr(args) => cmd_wcdr(args),
        Command::Experiment(args) => cmd_experiment(args),
    }
}

/// Relative output paths resolve against $TTCPD_OUT_DIR when it is set.
fn resolve_out(path: &Path) -> PathBuf {
    if path.is_relative() {
        if let Ok(dir) = std::env::var("TTCPD_OUT_DIR") {
            if !dir.is_empty() {
                return PathBuf::from(dir).join(path);
            }
        }
    }
    path.to_path_buf()
}

fn write_file(path: &Path, content: &str) -> CliResult<()> {
    let full = resolve_out(path);
    if let Some(parent) = full.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::Io(full.clone(), e))?;
        }
    }
    std::fs::write(&full, content).map_err(|e| CliError::Io(full.clone(), e))?;
    eprintln!("wrote {}", full.display());
    Ok(())
}

fn read_to_string(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn cmd_calibrate(args: CalibrateArgs) -> CliResult<i32> {
    let panel = panel_csv::read_panel(&args.input)?;
    if let Some(rhos) = &args.fixed_rho {
        if rhos.len() != panel.n_portfolios() {
            return Err(CliError::Parse(format!(
                "--fixed-rho has {} values but the panel has {} portfolios",
                rhos.len(),
                panel.n_portfolios()
            )));
        }
    }
    let config = CalibrationConfig {
        alpha_mean: args.alpha,
        tol: args.tol,
        max_iter: args.max_iter,
        clamp_eps: args.clamp_eps,
        rho_mode: match args.fixed_rho {
            Some(rhos) => RhoMode::Fixed(rhos),
            None => RhoMode::BaselLinked(args.asset_class),
        },
        weight_by_obligors: args.weight_by_obligors,
    };
    let out = calibrate(&panel, &config)?;
    let report = check_identifiability(&AvailabilityMask::from_panel(&panel), &out.result.rho);
    let file = output::build_result_file(&panel, &config, &out, report);
    for w in &file.warnings {
        eprintln!(
            "warning: clamped degenerate rate ({}, {}): {} -> {}",
            w.id, w.year, w.raw, w.clamped
        );
    }
    for note in &file.identifiability.notes {
        eprintln!("note: {note}");
    }
    let rendered = match args.format {
        Format::Json => output::result_to_json(&file),
        Format::Csv => output::result_to_csv(&file),
    };
    match &args.output {
        Some(path) => write_file(path, &rendered)?,
        None => print!("{rendered}"),
    }
    Ok(0)
}

fn read_factor_file(path: &Path) -> CliResult<FactorPath> {
    let text = read_to_string(path)?;
    let mut values = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(CliError::Parse(format!(
                "factor file line must be `t,f`, got {line:?}"
            )));
        }
        if fields[0].trim().parse::<i64>().is_err() {
            continue; // header line
        }
        let f: f64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| CliError::Parse(format!("bad factor value in {line:?}")))?;
        values.push(f);
    }
    if values.is_empty() {
        return Err(CliError::Parse("factor file has no values".into()));
    }
    Ok(FactorPath::new(values))
}

fn build_spec(args: &SpecArgs) -> CliResult<SimulationSpec> {
    let mask = match &args.mask {
        Some(path) => Some(
            AvailabilityMask::from_text(&read_to_string(path)?)
                .map_err(|e| CliError::Parse(e.to_string()))?,
        ),
        None => None,
    };
    let spec = if args.paper_setup {
        if args.ttc_pds.is_some()
            || args.horizon.is_some()
            || args.phi.is_some()
            || args.factor_file.is_some()
        {
            return Err(CliError::Parse(
                "--paper-setup conflicts with --ttc-pds/--horizon/--phi/--factor-file".into(),
            ));
        }
        let mut spec = SimulationSpec::paper_setup(args.n, args.seed);
        spec.asset_class = args.asset_class;
        spec.mask = mask;
        spec
    } else {
        let true_ttc_pds = args
            .ttc_pds
            .clone()
            .ok_or_else(|| CliError::Parse("--ttc-pds is required without --paper-setup".into()))?;
        let horizon = args
            .horizon
            .ok_or_else(|| CliError::Parse("--horizon is required without --paper-setup".into()))?;
        let factor_spec = match (args.phi, &args.factor_file) {
            (Some(phi), None) => FactorSpec::Ar1 { persistence: phi },
            (None, Some(path)) => FactorSpec::ExplicitPath(read_factor_file(path)?),
            (None, None) => {
                return Err(CliError::Parse(
                    "one of --phi or --factor-file is required without --paper-setup".into(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(CliError::Parse("--phi conflicts with --factor-file".into()))
            }
        };
        let n_obligors = vec![args.n; true_ttc_pds.len()];
        SimulationSpec {
            true_ttc_pds,
            horizon,
            factor_spec,
            n_obligors,
            asset_class: args.asset_class,
            mask,
            seed: args.seed,
        }
    };
    spec.validate()?;
    Ok(spec)
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<i32> {
    let spec = build_spec(&args.spec)?;
    let factor = gen_factor_path(&spec)?;
    let (panel, truth) = gen_default_panel(&spec, &factor)?;
    write_file(&args.out_panel, &panel_csv::panel_to_csv(&panel))?;
    let sidecar = output::TruthFile { spec, truth };
    let mut json = serde_json::to_string_pretty(&sidecar).expect("truth serializes");
    json.push('\n');
    write_file(&args.out_truth, &json)?;
    Ok(0)
}

/// Correlations for the rank test: fixed if given, otherwise Basel at each
/// portfolio's mean observed rate.
fn rho_for_check(
    panel: &DefaultRatePanel,
    fixed: &Option<Vec<f64>>,
    asset_class: &AssetClassParams,
) -> CliResult<Vec<f64>> {
    if let Some(rhos) = fixed {
        if rhos.len() != panel.n_portfolios() {
            return Err(CliError::Parse(format!(
                "--fixed-rho has {} values but the panel has {} portfolios",
                rhos.len(),
                panel.n_portfolios()
            )));
        }
        return Ok(rhos.clone());
    }
    (0..panel.n_portfolios())
        .map(|i| {
            let observed: Vec<f64> = (0..panel.n_years())
                .filter_map(|t| panel.rate(i, t))
                .collect();
            let mean = if observed.is_empty() {
                0.5 // portfolio with no data; rho value is immaterial
            } else {
                (observed.iter().sum::<f64>() / observed.len() as f64).clamp(1e-6, 1.0 - 1e-6)
            };
            basel_rho(mean, asset_class).map_err(CliError::Core)
        })
        .collect()
}

fn print_report_text(panel: &DefaultRatePanel, report: &IdentifiabilityReport) {
    println!(
        "identifiable: {}",
        if report.identifiable { "yes" } else { "no" }
    );
    println!(
        "numerical rank: {} of {} columns (deficiency {})",
        report.numerical_rank,
        report.n_columns(),
        report.deficiency
    );
    let year_labels: Vec<i32> = report
        .unobserved_years
        .iter()
        .map(|&t| panel.years()[t])
        .collect();
    println!("unobserved years: {year_labels:?}");
    println!("observation graph components: {}", report.components.len());
    for (idx, comp) in report.components.iter().enumerate() {
        let ids: Vec<&str> = comp
            .portfolios
            .iter()
            .map(|&i| panel.portfolio_ids()[i].as_str())
            .collect();
        let years: Vec<i32> = comp.years.iter().map(|&t| panel.years()[t]).collect();
        println!("  group {}: portfolios {ids:?}, years {years:?}", idx + 1);
    }
    for note in &report.notes {
        println!("note: {note}");
    }
}

fn cmd_check(args: CheckArgs) -> CliResult<i32> {
    let panel = panel_csv::read_panel(&args.input)?;
    let rho = rho_for_check(&panel, &args.fixed_rho, &args.asset_class)?;
    let report = check_identifiability(&AvailabilityMask::from_panel(&panel), &rho);
    match args.format {
        ReportFormat::Text => print_report_text(&panel, &report),
        ReportFormat::Json => {
            let doc = serde_json::json!({
                "portfolio_ids": panel.portfolio_ids(),
                "years": panel.years(),
                "report": report,
            });
            println!(
                "{}",
                serde_json::to_string_pretty(&doc).expect("report serializes")
            );
        }
    }
    Ok(if report.identifiable { 0 } else { 3 })
}

fn cmd_wcdr(args: WcdrArgs) -> CliResult<i32> {
    let (rho, derived) = match (args.rho, &args.asset_class) {
        (Some(r), None) => (r, false),
        (None, Some(ac)) => (basel_rho(args.pd, ac)?, true),
        (None, None) => {
            return Err(CliError::Parse(
                "one of --rho or --asset-class is required".into(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap conflict"),
    };
    let w = wcdr(args.pd, rho, args.confidence)?;
    if derived {
        println!("rho = {rho:.11e}");
    }
    println!("wcdr = {w:.11e}");
    Ok(0)
}

fn cmd_experiment(args: ExperimentArgs) -> CliResult<i32> {
    let spec = build_spec(&args.spec)?;
    let config = CalibrationConfig {
        alpha_mean: args.alpha,
        tol: args.tol,
        max_iter: args.max_iter,
        rho_mode: RhoMode::BaselLinked(spec.asset_class),
        ..CalibrationConfig::default()
    };
    match args.mode {
        ExperimentMode::Recovery => {
            let exp = run_recovery_experiment(&spec, &config)?;
            let mut json = serde_json::to_string_pretty(&exp).expect("experiment serializes");
            json.push('\n');
            write_file(&args.out_dir.join("recovery.json"), &json)?;
            write_file(
                &args.out_dir.join("recovery_plot.csv"),
                &output::recovery_plot_csv(&exp),
            )?;
            let recovery = exp.recovery.as_ref().expect("recovery report");
            let calib = exp.calibration.as_ref().expect("calibration");
            println!("portfolio,true_ttc_pd,fitted_ttc_pd,rel_error");
            for (i, &p) in exp.truth.ttc_pd.iter().enumerate() {
                println!(
                    "P{},{},{},{:.6}",
                    i + 1,
                    p,
                    calib.ttc_pd[i],
                    recovery.ttc_rel_error[i]
                );
            }
        }
        ExperimentMode::Sweep => {
            let sizes = args.sizes.ok_or_else(|| {
                CliError::Parse("--sizes is required for the sweep experiment".into())
            })?;
            let exp = if args.serial {
                run_sample_size_sweep_serial(&spec, &sizes, args.replications, &config)?
            } else {
                run_sample_size_sweep(&spec, &sizes, args.replications, &config)?
            };
            let mut json = serde_json::to_string_pretty(&exp).expect("experiment serializes");
            json.push('\n');
            write_file(&args.out_dir.join("sweep.json"), &json)?;
            write_file(
                &args.out_dir.join("sweep_plot.csv"),
                &output::sweep_plot_csv(&exp),
            )?;
            write_file(
                &args.out_dir.join("sweep_summary.csv"),
                &output::sweep_summary_csv(&exp),
            )?;
            print!("{}", output::sweep_summary_csv(&exp));
        }
    }
    Ok(0)
}
