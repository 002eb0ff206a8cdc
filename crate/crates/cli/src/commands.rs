//! Subcommand definitions and drivers.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde_json::json;

use sdfm::sim::{self, DgpSpec, ExperimentConfig, ExperimentReport, RotationNorm};
use sdfm::tuning::TuningReport;
use sdfm::{AlphaGrid, FitConfig, FitResult, TimeSeriesPanel};

use crate::io::{self, num, CsvPanel};
use crate::manifest::{strip_out, RunManifest};
use crate::model::{forecast_rows, ModelFile};
use crate::CliError;

#[derive(Debug, Clone, Parser)]
#[command(name = "sdfm", version, about = "Sparse dynamic factor models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Estimate a model from a CSV panel.
    Fit(FitArgs),
    /// Run the factor-count and penalty searches without writing a model.
    Tune(TuneArgs),
    /// Forecast from a fitted model directory.
    Forecast(ForecastArgs),
    /// Fill the missing cells of a panel with a fitted model.
    Impute(ImputeArgs),
    /// Draw a panel from the synthetic two-factor design.
    Simulate(SimulateArgs),
    /// Monte-Carlo experiments and the rotation demonstration.
    Benchmark(BenchmarkArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct EmArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub em_tol: f64,
    #[arg(long, default_value_t = 100)]
    pub em_max_iter: usize,
    #[arg(long, default_value_t = 2000)]
    pub admm_max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub admm_tol_abs: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub admm_tol_rel: f64,
    /// ADMM augmentation parameter.
    #[arg(long, default_value_t = 1.0)]
    pub nu: f64,
    #[arg(long, default_value_t = sdfm::DEFAULT_VARIANCE_FLOOR)]
    pub variance_floor: f64,
}

impl EmArgs {
    fn config(&self, r: usize, alpha: f64) -> FitConfig {
        FitConfig {
            admm_nu: self.nu,
            em_max_iter: self.em_max_iter,
            em_tol: self.em_tol,
            admm_max_iter: self.admm_max_iter,
            admm_tol_abs: self.admm_tol_abs,
            admm_tol_rel: self.admm_tol_rel,
            variance_floor: self.variance_floor,
            ..FitConfig::new(r, alpha)
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub alpha_min: f64,
    #[arg(long, default_value_t = 1e2)]
    pub alpha_max: f64,
    #[arg(long, default_value_t = 20)]
    pub alpha_points: usize,
}

impl GridArgs {
    fn grid(&self) -> AlphaGrid {
        AlphaGrid { min: self.alpha_min, max: self.alpha_max, points: self.alpha_points }
    }
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("rank").required(true).args(["factors", "auto_r"])))]
pub struct FitArgs {
    /// Panel CSV: time column, then one column per series.
    pub input: PathBuf,
    /// Number of factors.
    #[arg(short = 'r', long)]
    pub factors: Option<usize>,
    /// Choose the number of factors by the information criterion.
    #[arg(long)]
    pub auto_r: bool,
    #[arg(long, default_value_t = 8)]
    pub r_max: usize,
    /// ℓ₁ penalty on the loadings.
    #[arg(long, default_value_t = 0.0, conflicts_with = "auto_alpha")]
    pub alpha: f64,
    /// Choose the penalty by BIC over a log grid.
    #[arg(long)]
    pub auto_alpha: bool,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub em: EmArgs,
    #[arg(short = 'o', long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    pub input: PathBuf,
    /// Fix the number of factors instead of selecting it.
    #[arg(short = 'r', long)]
    pub factors: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub r_max: usize,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub em: EmArgs,
    #[arg(short = 'o', long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ForecastArgs {
    /// Directory written by `fit`.
    pub model: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub horizon: u64,
    #[arg(short = 'o', long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ImputeArgs {
    pub input: PathBuf,
    /// Directory written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(short = 'o', long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 60)]
    pub p: usize,
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.8)]
    pub a: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Probability that a cell is blanked.
    #[arg(long, default_value_t = 0.0)]
    pub missing_frac: f64,
    #[arg(short = 'o', long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Recovery,
    Forecast,
    Timing,
    Rotation,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated series counts.
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub rho: Option<Vec<f64>>,
    #[arg(long)]
    pub a: Option<f64>,
    /// Comma-separated factor counts (timing only).
    #[arg(long, value_delimiter = ',')]
    pub r: Option<Vec<usize>>,
    /// Comma-separated final-row missingness fractions (forecast only).
    #[arg(long, value_delimiter = ',')]
    pub missing: Option<Vec<f64>>,
    #[arg(long)]
    pub alpha_min: Option<f64>,
    #[arg(long)]
    pub alpha_max: Option<f64>,
    #[arg(long)]
    pub alpha_points: Option<usize>,
    #[arg(long)]
    pub em_tol: Option<f64>,
    /// Angles for the rotation curves.
    #[arg(long, default_value_t = 360)]
    pub theta_points: usize,
    #[arg(short = 'o', long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    #[arg(short = 'o', long)]
    pub out: PathBuf,
}

/// What a successful run reports back to `main`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub converged: bool,
    pub out_dir: PathBuf,
    pub warnings: Vec<String>,
}

/// Collects the files written to one output directory.
struct OutputDir {
    dir: PathBuf,
    files: Vec<String>,
    started: Instant,
}

impl OutputDir {
    fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new(), started: Instant::now() }
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        io::write_atomic(&self.dir.join(name), bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        io::write_json(&self.dir.join(name), value)?;
        self.files.push(name.to_string());
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        mut self,
        subcommand: &str,
        input: Option<&Path>,
        args: &[String],
        config: serde_json::Value,
        seed: Option<u64>,
        converged: bool,
        warnings: Vec<String>,
    ) -> Result<Outcome, CliError> {
        self.files.push("manifest.json".into());
        let manifest = RunManifest {
            tool: "sdfm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            input: input.map(|p| p.display().to_string()),
            args: strip_out(args),
            config,
            seed,
            converged,
            warnings: warnings.clone(),
            outputs: self.files.clone(),
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        io::write_json(&self.dir.join("manifest.json"), &manifest)?;
        Ok(Outcome { converged, out_dir: self.dir, warnings })
    }
}

/// Run a parsed command. `args` is the raw command line after the program
/// name and is recorded in the manifest.
pub fn execute(cli: Cli, args: &[String]) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a, args),
        Command::Tune(a) => cmd_tune(&a, args),
        Command::Forecast(a) => cmd_forecast(&a, args),
        Command::Impute(a) => cmd_impute(&a, args),
        Command::Simulate(a) => cmd_simulate(&a, args),
        Command::Benchmark(a) => cmd_benchmark(&a, args),
        Command::Replay(a) => cmd_replay(&a),
    }
}

/// Parse and run a full argument list (program name excluded).
pub fn run_args(args: &[String]) -> Result<Outcome, CliError> {
    let argv = std::iter::once("sdfm".to_string()).chain(args.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Usage(e.to_string()))?;
    execute(cli, args)
}

fn load_panel(path: &Path) -> Result<(CsvPanel, TimeSeriesPanel), CliError> {
    let csv = io::read_panel(path)?;
    let panel = TimeSeriesPanel::standardise(&csv.values, Some(csv.names.clone()))?;
    Ok((csv, panel))
}

fn factor_header(r: usize) -> Vec<String> {
    (1..=r).map(|k| format!("factor_{k}")).collect()
}

fn choose_r(panel: &TimeSeriesPanel, r_max: usize, out: &mut OutputDir, warnings: &mut Vec<String>) -> Result<usize, CliError> {
    let cap = panel.n().min(panel.p());
    if r_max > cap {
        warnings.push(format!("r_max lowered from {r_max} to {cap}"));
    }
    let report = sdfm::select_num_factors(panel, r_max.min(cap))?;
    warnings.extend(report.warnings.iter().cloned());
    let rows = report.ic_values.iter().map(|pt| vec![pt.r.to_string(), num(pt.ic), num(pt.residual_variance)]);
    out.write("ic.csv", &io::table_bytes(&["r", "ic", "residual_variance"], rows)?)?;
    report.chosen_r.ok_or_else(|| CliError::Data("information criterion selected no factor count".into()))
}

fn tuning_bytes(report: &TuningReport) -> Result<Vec<u8>, CliError> {
    let chosen = report.chosen_alpha;
    let rows = report.bic_values.iter().map(|b| {
        vec![
            num(b.alpha),
            num(b.bic),
            num(b.residual_variance),
            b.nonzero.to_string(),
            b.converged.to_string(),
            b.em_iterations.to_string(),
            (Some(b.alpha) == chosen).to_string(),
        ]
    });
    io::table_bytes(&["alpha", "bic", "residual_variance", "nonzero", "converged", "em_iterations", "chosen"], rows)
}

fn write_fit(out: &mut OutputDir, csv: &CsvPanel, panel: &TimeSeriesPanel, fit: &FitResult) -> Result<(), CliError> {
    let r = fit.num_factors;
    let fh = factor_header(r);

    let mut header = vec!["series"];
    header.extend(fh.iter().map(String::as_str));
    let lam = fit.loadings();
    let rows = (0..lam.nrows()).map(|i| {
        let mut row = vec![csv.names[i].clone()];
        row.extend(lam.row(i).iter().map(|v| num(*v)));
        row
    });
    out.write("loadings.csv", &io::table_bytes(&header, rows)?)?;

    header[0] = "t";
    let f = &fit.smoother.smoothed_mean;
    let rows = (0..f.nrows()).map(|t| {
        let mut row = vec![csv.time[t].clone()];
        row.extend(f.row(t).iter().map(|v| num(*v)));
        row
    });
    out.write("factors.csv", &io::table_bytes(&header, rows)?)?;

    let mut rows = Vec::new();
    for (t, cov) in fit.smoother.smoothed_cov.iter().enumerate() {
        for i in 0..r {
            for j in i..r {
                rows.push(vec![csv.time[t].clone(), (i + 1).to_string(), (j + 1).to_string(), num(cov[(i, j)])]);
            }
        }
    }
    out.write("factor_cov.csv", &io::table_bytes(&["t", "factor_i", "factor_j", "cov"], rows)?)?;

    let rows = fit.objective_trace.iter().enumerate().map(|(k, v)| vec![k.to_string(), num(*v)]);
    out.write("objective_trace.csv", &io::table_bytes(&["iteration", "objective"], rows)?)?;

    let last = csv.time.last().map_or("", String::as_str);
    out.json("params.json", &ModelFile::new(panel, last, fit))
}

fn cmd_fit(a: &FitArgs, args: &[String]) -> Result<Outcome, CliError> {
    let mut out = OutputDir::new(&a.out);
    let (csv, panel) = load_panel(&a.input)?;
    let mut warnings = Vec::new();
    let r = match a.factors {
        Some(r) => r,
        None => choose_r(&panel, a.r_max, &mut out, &mut warnings)?,
    };
    let base = a.em.config(r, a.alpha);
    let fit = if a.auto_alpha {
        let sel = sdfm::select_alpha(&panel, &base, &a.grid.grid())?;
        out.write("tuning.csv", &tuning_bytes(&sel.report)?)?;
        warnings.extend(sel.report.warnings.iter().cloned());
        sel.fit
    } else {
        sdfm::fit(&panel, &base)?
    };
    warnings.extend(fit.warnings.iter().cloned());
    write_fit(&mut out, &csv, &panel, &fit)?;
    let config = json!({
        "fit": a.em.config(r, fit.alpha),
        "auto_r": a.auto_r,
        "r_max": a.r_max,
        "auto_alpha": a.auto_alpha,
        "alpha_grid": a.auto_alpha.then(|| a.grid.grid()),
    });
    out.finish("fit", Some(&a.input), args, config, None, fit.converged, warnings)
}

fn cmd_tune(a: &TuneArgs, args: &[String]) -> Result<Outcome, CliError> {
    let mut out = OutputDir::new(&a.out);
    let (_, panel) = load_panel(&a.input)?;
    let mut warnings = Vec::new();
    let r = match a.factors {
        Some(r) => r,
        None => choose_r(&panel, a.r_max, &mut out, &mut warnings)?,
    };
    let sel = sdfm::select_alpha(&panel, &a.em.config(r, 0.0), &a.grid.grid())?;
    out.write("tuning.csv", &tuning_bytes(&sel.report)?)?;
    warnings.extend(sel.report.warnings.iter().cloned());
    let config = json!({
        "fit": a.em.config(r, 0.0),
        "r_selected": a.factors.is_none(),
        "r_max": a.r_max,
        "alpha_grid": a.grid.grid(),
        "chosen_r": r,
        "chosen_alpha": sel.report.chosen_alpha,
        "terminated_early": sel.report.terminated_early,
    });
    out.finish("tune", Some(&a.input), args, config, None, sel.fit.converged, warnings)
}

fn read_model(dir: &Path) -> Result<ModelFile, CliError> {
    io::read_json(&dir.join("params.json"))
}

fn cmd_forecast(a: &ForecastArgs, args: &[String]) -> Result<Outcome, CliError> {
    let mut out = OutputDir::new(&a.out);
    let model = read_model(&a.model)?;
    let rows = forecast_rows(&model, a.horizon as usize)?;
    let table = rows.iter().map(|row| {
        vec![row.t.to_string(), model.series[row.series].clone(), num(row.mean), num(row.lower95), num(row.upper95)]
    });
    out.write("forecast.csv", &io::table_bytes(&["t", "series", "mean", "lower95", "upper95"], table)?)?;
    let config = json!({ "horizon": a.horizon, "model_converged": model.converged });
    out.finish("forecast", Some(&a.model), args, config, None, true, Vec::new())
}

fn cmd_impute(a: &ImputeArgs, args: &[String]) -> Result<Outcome, CliError> {
    let mut out = OutputDir::new(&a.out);
    let model = read_model(&a.model)?;
    let csv = io::read_panel(&a.input)?;
    if csv.names != model.series {
        return Err(CliError::Data(format!(
            "{}: series do not match the model ({} columns, model has {})",
            a.input.display(),
            csv.names.len(),
            model.series.len()
        )));
    }
    let panel = TimeSeriesPanel::with_statistics(&csv.values, model.means.clone(), model.sds.clone(), csv.names.clone())?;
    let params = model.params()?;
    let smoother = sdfm::filter_smooth(&panel, &params)?;
    let filled = panel.destandardise(&sdfm::impute_with(&params, &smoother, &panel)?)?;
    // observed cells are copied through untouched
    let values = csv.values.zip_map(&filled, |raw, fill| if raw.is_nan() { fill } else { raw });
    let imputed = CsvPanel { values, ..csv };
    out.write("imputed.csv", &io::panel_bytes(&imputed)?)?;
    out.finish("impute", Some(&a.input), args, json!({ "model": a.model.display().to_string() }), None, true, Vec::new())
}

fn cmd_simulate(a: &SimulateArgs, args: &[String]) -> Result<Outcome, CliError> {
    if !(0.0..1.0).contains(&a.missing_frac) {
        return Err(CliError::Usage("--missing-frac must lie in [0, 1)".into()));
    }
    let mut out = OutputDir::new(&a.out);
    let spec = DgpSpec { n: a.n, p: a.p, rho: a.rho, a: a.a, seed: a.seed };
    let data = sim::simulate(&spec)?;
    let mut values = data.values.clone();
    if a.missing_frac > 0.0 {
        let mut rng = sim::replicate_rng(a.seed, 1);
        for v in values.iter_mut() {
            if rng.random::<f64>() < a.missing_frac {
                *v = f64::NAN;
            }
        }
    }
    let names: Vec<String> = (1..=a.p).map(|i| format!("x{i}")).collect();
    let time: Vec<String> = (1..=a.n).map(|t| t.to_string()).collect();
    let panel = CsvPanel { time: time.clone(), names: names.clone(), values };
    out.write("data.csv", &io::panel_bytes(&panel)?)?;

    let r = data.loadings.ncols();
    let fh = factor_header(r);
    let mut header = vec!["series"];
    header.extend(fh.iter().map(String::as_str));
    let rows = (0..a.p).map(|i| {
        let mut row = vec![names[i].clone()];
        row.extend(data.loadings.row(i).iter().map(|v| num(*v)));
        row
    });
    out.write("loadings_true.csv", &io::table_bytes(&header, rows)?)?;
    header[0] = "t";
    let rows = (0..a.n).map(|t| {
        let mut row = vec![time[t].clone()];
        row.extend(data.factors.row(t).iter().map(|v| num(*v)));
        row
    });
    out.write("factors_true.csv", &io::table_bytes(&header, rows)?)?;
    let config = json!({ "n": a.n, "p": a.p, "rho": a.rho, "a": a.a, "missing_frac": a.missing_frac });
    out.finish("simulate", None, args, config, Some(a.seed), true, Vec::new())
}

fn experiment_config(a: &BenchmarkArgs) -> ExperimentConfig {
    let mut cfg = match a.experiment {
        Experiment::Forecast => ExperimentConfig::forecast(),
        Experiment::Timing => ExperimentConfig::timing(),
        Experiment::Recovery | Experiment::Rotation => ExperimentConfig::recovery(),
    };
    cfg.seed = a.seed;
    if let Some(v) = a.reps {
        cfg.reps = v;
    }
    if let Some(v) = a.n {
        cfg.n = v;
    }
    if let Some(v) = &a.p {
        cfg.p_values = v.clone();
    }
    if let Some(v) = &a.rho {
        cfg.rho_values = v.clone();
    }
    if let Some(v) = a.a {
        cfg.a = v;
    }
    if let Some(v) = &a.r {
        cfg.r_values = v.clone();
    }
    if let Some(v) = &a.missing {
        cfg.missing_fracs = v.clone();
    }
    if let Some(v) = a.alpha_min {
        cfg.grid.min = v;
    }
    if let Some(v) = a.alpha_max {
        cfg.grid.max = v;
    }
    if let Some(v) = a.alpha_points {
        cfg.grid.points = v;
    }
    if let Some(v) = a.em_tol {
        cfg.em_tol = v;
    }
    cfg
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

fn write_report(out: &mut OutputDir, report: &ExperimentReport) -> Result<(), CliError> {
    let rows = report.records.iter().map(|m| {
        vec![
            m.n.to_string(),
            m.p.to_string(),
            m.r.to_string(),
            num(m.rho),
            opt_num(m.missing_frac),
            m.replicate.to_string(),
            m.method.clone(),
            m.metric.clone(),
            num(m.value),
        ]
    });
    let header = ["n", "p", "r", "rho", "missing_frac", "replicate", "method", "metric", "value"];
    out.write("records.csv", &io::table_bytes(&header, rows)?)?;
    let rows = report.summary.iter().map(|s| {
        vec![
            s.n.to_string(),
            s.p.to_string(),
            s.r.to_string(),
            num(s.rho),
            opt_num(s.missing_frac),
            s.method.clone(),
            s.metric.clone(),
            s.count.to_string(),
            num(s.q25),
            num(s.q50),
            num(s.q75),
        ]
    });
    let header = ["n", "p", "r", "rho", "missing_frac", "method", "metric", "count", "q25", "q50", "q75"];
    out.write("summary.csv", &io::table_bytes(&header, rows)?)?;
    out.json(
        "summary.json",
        &json!({ "summary": report.summary, "skipped": report.skipped, "failures": report.failures }),
    )
}

fn validate_experiment(cfg: &ExperimentConfig) -> Result<(), CliError> {
    cfg.grid.values()?;
    if cfg.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    for &p in &cfg.p_values {
        for &rho in &cfg.rho_values {
            DgpSpec { n: cfg.n, p, rho, a: cfg.a, seed: 0 }.validate()?;
        }
    }
    if cfg.missing_fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(CliError::Usage("--missing fractions must lie in [0, 1]".into()));
    }
    Ok(())
}

fn cmd_benchmark(a: &BenchmarkArgs, args: &[String]) -> Result<Outcome, CliError> {
    let mut out = OutputDir::new(&a.out);
    if a.experiment == Experiment::Rotation {
        if a.theta_points == 0 {
            return Err(CliError::Usage("--theta-points must be at least 1".into()));
        }
        let grid = sim::theta_grid(a.theta_points);
        let curves: Vec<_> = [RotationNorm::L0, RotationNorm::L1, RotationNorm::L2]
            .iter()
            .map(|&norm| sim::rotation_norm_curve(norm, &grid))
            .collect();
        let rows = (0..grid.len()).map(|k| vec![num(grid[k]), num(curves[0][k].1), num(curves[1][k].1), num(curves[2][k].1)]);
        out.write("rotation.csv", &io::table_bytes(&["theta", "l0", "l1", "l2"], rows)?)?;
        let config = json!({ "experiment": "rotation", "theta_points": a.theta_points });
        return out.finish("benchmark", None, args, config, None, true, Vec::new());
    }
    let cfg = experiment_config(a);
    validate_experiment(&cfg)?;
    let report = match a.experiment {
        Experiment::Recovery => sim::recovery_experiment(&cfg),
        Experiment::Forecast => sim::forecast_experiment(&cfg),
        _ => sim::timing_experiment(&cfg),
    };
    write_report(&mut out, &report)?;
    let name = format!("{:?}", a.experiment).to_lowercase();
    let config = json!({ "experiment": name, "settings": cfg });
    let warnings = report.failures.clone();
    out.finish("benchmark", None, args, config, Some(a.seed), true, warnings)
}

fn cmd_replay(a: &ReplayArgs) -> Result<Outcome, CliError> {
    let manifest: RunManifest = io::read_json(&a.manifest)?;
    if manifest.args.first().map(String::as_str) == Some("replay") {
        return Err(CliError::Data("a manifest cannot record a replay".into()));
    }
    let mut args = manifest.args.clone();
    args.push("--out".into());
    args.push(a.out.display().to_string());
    run_args(&args)
}
