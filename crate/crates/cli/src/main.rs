use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use loadsplit::disagg::{self, DisaggResult};
use loadsplit::io::{self, ConfigFile, FitArtifacts, Report, RunConfig};
use loadsplit::model::{self, FitResult};
use loadsplit::synth::{self, GroundTruth};
use loadsplit::{LoadMatrix, LoadRole, TimeGrid};

/// Split smart-meter loads into shiftable and fixed parts and fit a
/// price/temperature response model to them.
#[derive(Parser)]
#[command(name = "loadsplit", version, about)]
struct Cli {
    /// Log progress to stderr (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML, or JSON when it starts with `{`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut file = match &self.config {
            Some(p) => ConfigFile::read(p)?,
            None => ConfigFile::default(),
        };
        if self.seed.is_some() {
            file.seed = self.seed;
        }
        Ok(RunConfig::from_file_contents(file)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic household with ground-truth components.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split a total load file into shiftable and fixed estimates.
    Disaggregate {
        /// `day,instant,kw` file; a `metadata.json` beside it sets the grid.
        #[arg(long)]
        loads: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the utility model to a shiftable/fixed split.
    Fit {
        #[arg(long)]
        shiftable: PathBuf,
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        temps: PathBuf,
        #[arg(long)]
        prices: PathBuf,
        /// Pin the fixed-load temperature coefficients to zero.
        #[arg(long)]
        pin_q: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a result directory against a simulated truth directory.
    Evaluate {
        #[arg(long)]
        truth_dir: PathBuf,
        #[arg(long)]
        result_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate (unless loads are given), disaggregate, fit and evaluate.
    Pipeline {
        /// Directory holding loads.csv, temperatures.csv and prices.csv.
        #[arg(long)]
        loads: Option<PathBuf>,
        #[arg(long)]
        pin_q: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(flag: &Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn names(paths: &[PathBuf]) -> Vec<String> {
    paths
        .iter()
        .filter_map(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .collect()
}

fn grid_near(file: &Path) -> Result<TimeGrid> {
    let meta = file
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(io::METADATA_FILE);
    if meta.exists() {
        Ok(io::read_json::<io::Metadata>(&meta)?.grid)
    } else {
        Ok(TimeGrid::default())
    }
}

fn disagg_summary(r: &DisaggResult, total: &LoadMatrix) -> Value {
    json!({
        "iterations_run": r.iterations_run,
        "converged": r.converged,
        "residual_norm": r.residual_norm,
        "mass_error": r.mass_error(total),
        "levels_kw": r.gmm.level_means(),
    })
}

fn fit_summary(f: &FitResult) -> Value {
    json!({
        "status": f.status,
        "objective": f.objective,
        "kkt_residual": f.kkt_residual,
        "iterations": f.iterations,
        "medians": f.medians,
    })
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<(GroundTruth, Value)> {
    let spec = cfg.scenario_spec();
    let truth = synth::generate(&spec)?;
    let source = format!("synthetic seed {}", spec.seed);
    io::write_ground_truth(out, &truth, &source)?;
    let summary = json!({
        "days": truth.total.n_days(),
        "seed": spec.seed,
        "appliance_levels_kw": truth.appliance_levels,
        "total_kwmin": truth.total.total(),
        "shiftable_share": truth.shiftable.total() / truth.total.total(),
    });
    Ok((truth, summary))
}

fn evaluate(truth: &GroundTruth, shiftable: &LoadMatrix, fixed: &LoadMatrix, fits: Option<(&FitResult, &FitResult)>) -> Result<Value> {
    let total_est = shiftable.values() + fixed.values();
    let metrics = synth::score_components(truth, shiftable.values(), fixed.values(), &total_est)?;
    let recovery = match (fits, &truth.params_used) {
        (Some((real, est)), Some(params)) => Some(synth::score_parameter_recovery(params, real, est)?),
        _ => None,
    };
    Ok(json!({ "disaggregation": metrics, "recovery": recovery }))
}

fn run(cli: Cli) -> Result<Value> {
    let started = Instant::now();
    let mut summary = match cli.command {
        Command::Simulate { cfg, out } => {
            let cfg = cfg.load()?;
            let out = out_dir(&out, &cfg);
            let (_, s) = simulate(&cfg, &out)?;
            json!({ "command": "simulate", "out": out, "truth": s })
        }
        Command::Disaggregate { loads, cfg, out } => {
            let cfg = cfg.load()?;
            let out = out_dir(&out, &cfg);
            let grid = grid_near(&loads)?;
            let total = io::ingest_loads(&loads, &grid)?;
            let r = disagg::run_hybrid(&total, &cfg.hybrid)?;
            let files = io::write_report(&out, &Report { disagg: Some(&r), ..Report::default() })?;
            json!({ "command": "disaggregate", "out": out, "files": names(&files), "disaggregation": disagg_summary(&r, &total) })
        }
        Command::Fit { shiftable, fixed, temps, prices, pin_q, cfg, out } => {
            let mut cfg = cfg.load()?;
            cfg.fit.pin_q_to_zero |= pin_q;
            let out = out_dir(&out, &cfg);
            let grid = grid_near(&shiftable)?;
            let xs = io::ingest_loads_as(&shiftable, &grid, LoadRole::ShiftableEstimate)?;
            let xf = io::ingest_loads_as(&fixed, &grid, LoadRole::FixedEstimate)?;
            let theta = io::ingest_temperatures(&temps, &grid)?;
            let cost = io::ingest_prices(&prices, &grid)?;
            let f = model::fit(&xs, &xf, &theta, &cost, &cfg.fit, &grid)?;
            let report = Report {
                fit: Some(FitArtifacts { result: &f, shiftable: &xs, fixed: &xf, theta: &theta, cost: &cost, grid: &grid }),
                ..Report::default()
            };
            let files = io::write_report(&out, &report)?;
            json!({ "command": "fit", "out": out, "files": names(&files), "fit": fit_summary(&f) })
        }
        Command::Evaluate { truth_dir, result_dir, out } => {
            let truth = io::read_ground_truth(&truth_dir)?;
            let (xs, xf) = io::read_disaggregation(&result_dir, &truth.grid)?;
            let fit_path = result_dir.join(io::FIT_FILE);
            let real_path = result_dir.join(io::FIT_REAL_FILE);
            let fits = if fit_path.exists() && real_path.exists() {
                Some((io::read_json::<FitResult>(&real_path)?, io::read_json::<FitResult>(&fit_path)?))
            } else {
                None
            };
            let scores = evaluate(&truth, &xs, &xf, fits.as_ref().map(|(r, e)| (r, e)))?;
            let out = out.unwrap_or(result_dir);
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            io::write_json(&out.join("metrics.json"), &scores)?;
            json!({ "command": "evaluate", "out": out, "scores": scores })
        }
        Command::Pipeline { loads, pin_q, cfg, out } => {
            let mut cfg = cfg.load()?;
            cfg.fit.pin_q_to_zero |= pin_q;
            let out = out_dir(&out, &cfg);
            pipeline(&cfg, loads.as_deref(), &out)?
        }
    };
    summary["elapsed_s"] = json!(started.elapsed().as_secs_f64());
    Ok(summary)
}

fn pipeline(cfg: &RunConfig, loads: Option<&Path>, out: &Path) -> Result<Value> {
    let (bundle, truth, truth_summary) = match loads {
        Some(dir) => (io::read_dataset(dir)?, None, Value::Null),
        None => {
            let truth_dir = out.join("truth");
            let (truth, s) = simulate(cfg, &truth_dir)?;
            (io::read_dataset(&truth_dir)?, Some(truth), s)
        }
    };
    let grid = bundle.grid;
    let r = disagg::run_hybrid(&bundle.load, &cfg.hybrid)?;
    if !r.converged {
        log::warn!("disaggregation did not converge in {} iterations", r.iterations_run);
    }
    let fit = model::fit(&r.shiftable, &r.fixed, &bundle.theta, &bundle.cost, &cfg.fit, &grid)?;
    let fit_real = match &truth {
        Some(t) => Some(model::fit(&t.shiftable, &t.fixed, &t.theta, &t.cost, &cfg.fit, &grid)?),
        None => None,
    };
    let scores = match &truth {
        Some(t) => evaluate(t, &r.shiftable, &r.fixed, fit_real.as_ref().map(|real| (real, &fit)))?,
        None => Value::Null,
    };
    let comparison = fit_real
        .as_ref()
        .map(|real| model::compare_fits(&real.params, &fit.params));
    let report_body = json!({
        "truth": truth_summary,
        "disaggregation": disagg_summary(&r, &bundle.load),
        "fit": fit_summary(&fit),
        "fit_real": fit_real.as_ref().map(fit_summary),
        "comparison": comparison,
        "scores": scores,
        "hybrid_config": cfg.hybrid,
        "fit_config": cfg.fit,
    });
    let report = Report {
        disagg: Some(&r),
        fit: Some(FitArtifacts {
            result: &fit,
            shiftable: &r.shiftable,
            fixed: &r.fixed,
            theta: &bundle.theta,
            cost: &bundle.cost,
            grid: &grid,
        }),
        fit_real: fit_real.as_ref(),
        summary: Some(&report_body),
    };
    let files = io::write_report(out, &report)?;
    Ok(json!({
        "command": "pipeline",
        "out": out,
        "files": names(&files),
        "iterations_run": r.iterations_run,
        "converged": r.converged,
        "fit_status": fit.status,
        "scores": scores,
    }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
