//! `isolsim`: run isolation, detection and related experiments from a TOML
//! config and write CSV, JSON and optional SVG artifacts.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use isolation_core::estimators::{RunPlan, CSV_HEADER, CSV_SCHEMA};
use isolation_core::paths::Envelope;
use isolation_core::model::validate_config;
use isolation_core::rng::experiment_id;
use serde_json::json;

use commands::{Ctx, Failure};

const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "isolsim", version, about = "Isolation and detection tails of Poisson Brownian motions")]
struct Cli {
    #[command(subcommand)]
    action: Action,
}

#[derive(Subcommand, Debug)]
enum Action {
    /// Run one experiment.
    Run {
        command: Command,
        config: PathBuf,
        /// Worker threads; 0 uses every core.
        #[arg(long)]
        threads: Option<usize>,
        /// Master seed, overriding `sim.master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory, overriding `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write `plot.svg`.
        #[arg(long)]
        plot: bool,
        /// Number of samples, overriding `sim.n_samples`.
        #[arg(long)]
        samples: Option<u64>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Isolation,
    Detection,
    Sausage,
    Strategy,
    Rearrangement,
    #[value(name = "probe-d1")]
    ProbeD1,
    Occupation,
    Fit,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Isolation => "isolation",
            Command::Detection => "detection",
            Command::Sausage => "sausage",
            Command::Strategy => "strategy",
            Command::Rearrangement => "rearrangement",
            Command::ProbeD1 => "probe-d1",
            Command::Occupation => "occupation",
            Command::Fit => "fit",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let Action::Run { command, config, threads, seed, out, plot, samples } = cli.action;
    match execute(command, &config, threads, seed, out, plot, samples) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("isolsim: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn execute(command: Command, path: &Path, threads: Option<usize>, seed: Option<u64>, out: Option<PathBuf>, plot: bool, samples: Option<u64>) -> Result<(), Failure> {
    let started = unix_now();
    let clock = Instant::now();
    let mut cfg = config::load(path).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(s) = seed {
        cfg.sim.master_seed = s;
    }
    if let Some(n) = samples {
        cfg.sim.n_samples = n;
    }
    cfg.sim = validate_config(cfg.sim)?;
    let threads = threads.unwrap_or(0);
    let workers = if threads == 0 { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { threads };
    let name = cfg.experiment.name.clone().unwrap_or_else(|| command.name().to_string());
    let exp = experiment_id(&name);
    let plan = RunPlan::new(cfg.sim.master_seed, exp, cfg.sim.n_samples).with_threads(threads);
    let config_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let out_dir = out.or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    commands::ensure_dir(&out_dir)?;
    let mut ctx = Ctx { cfg: cfg.clone(), plan: plan.clone(), out: out_dir, plot: plot || cfg.output.plot, config_dir, outputs: Vec::new(), residuals: 0 };
    let result = commands::run(command.name(), &mut ctx);
    let status = match &result {
        Ok(_) => "ok".to_string(),
        Err(f) => f.to_string(),
    };
    let shards: Vec<[u64; 2]> = plan.shards(workers as u64).iter().map(|p| [p.samples.start, p.samples.end]).collect();
    ctx.outputs.push("manifest.json".into());
    let manifest = json!({
        "tool": "isolsim",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command.name(),
        "status": status,
        "csv_schema": { "name": CSV_SCHEMA, "columns": CSV_HEADER },
        "config": cfg,
        "experiment": { "name": name, "id": exp },
        "seed_schedule": {
            "master_seed": plan.master_seed,
            "experiment_id": exp,
            "samples": [plan.samples.start, plan.samples.end],
            "derivation": "counter-based: stream key = mix(master_seed, experiment_id, sample_index)",
        },
        "workers": workers,
        "shards": shards,
        "error_budget": {
            "truncation_eps": cfg.sim.trunc_eps,
            "truncation_radius": cfg.sim.trunc_radius,
            "envelope_beta": Envelope::DEFAULT_BETA,
            "residual_segments": ctx.residuals,
        },
        "summary": result.as_ref().ok(),
        "started_unix": started,
        "finished_unix": unix_now(),
        "wall_time_s": clock.elapsed().as_secs_f64(),
        "outputs": ctx.outputs,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Runtime(e.to_string()))?;
    std::fs::write(ctx.out.join("manifest.json"), text + "\n")?;
    result.map(|_| ())
}
