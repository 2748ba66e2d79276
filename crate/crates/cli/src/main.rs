//! `sg-heat <study> --config <path> [--set key=value ...] --out <dir>`
//!
//! Exit status 0 on success, 1 on solver or output failure, 2 on invalid
//! configuration.

mod config;
mod studies;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde_json::json;

use config::{threads_from_env, RawConfig, RunConfig, Study};
use studies::{output_error, run_study, Report, RunError};

#[derive(Debug, Parser)]
#[command(name = "sg-heat", version, about = "Stochastic Galerkin and Monte-Carlo heat benchmark studies")]
struct Cli {
    /// study to run
    #[arg(value_enum)]
    study: Study,
    /// flat `key = value` configuration file
    #[arg(long)]
    config: PathBuf,
    /// override one configuration entry
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// output directory, created if absent
    #[arg(long)]
    out: PathBuf,
}

fn resolve(cli: &Cli) -> Result<(RawConfig, RunConfig), RunError> {
    let mut raw = RawConfig::load(&cli.config)?;
    for s in &cli.overrides {
        raw.set(s)?;
    }
    let cfg = RunConfig::from_raw(cli.study, &raw)?;
    Ok((raw, cfg))
}

fn write_manifest(
    out: &Path,
    cli: &Cli,
    raw: &RawConfig,
    cfg: &RunConfig,
    elapsed: f64,
    outputs: &[PathBuf],
    status: &str,
) -> Result<(), RunError> {
    let path = out.join("manifest.json");
    let manifest = json!({
        "study": cli.study.name(),
        "config": raw.0,
        "resolved": {
            "M": cfg.m,
            "q": cfg.q,
            "eta": cfg.eta,
            "d_min": cfg.d_min,
            "T": cfg.t_final,
            "levels": cfg.levels,
            "k": cfg.k,
            "r": cfg.r,
            "slabs": cfg.slabs,
            "p_xi": cfg.degrees,
            "milestones": cfg.milestones,
            "seed": cfg.seed,
            "exact_only": cfg.exact_only,
            "rel_tol": cfg.fgmres.rel_tol,
            "abs_tol": cfg.fgmres.abs_tol,
            "max_iter": cfg.fgmres.max_iter,
            "restart": cfg.fgmres.restart,
            "timings": cfg.timings,
        },
        "config_file": cli.config.display().to_string(),
        "overrides": cli.overrides,
        "versions": {
            "sg-heat": env!("CARGO_PKG_VERSION"),
        },
        "threads": rayon::current_num_threads(),
        "timings": { "total_s": elapsed },
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "status": status,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| output_error(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| output_error(&path, e))
}

fn run(cli: &Cli) -> Result<(), RunError> {
    let (raw, cfg) = resolve(cli)?;
    if let Some(n) = threads_from_env()? {
        // fails only if a pool already exists, which is harmless here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| output_error(&cli.out, e))?;
    let start = Instant::now();
    let mut report = Report::default();
    let result = run_study(&cfg, &cli.out, &mut report);
    let elapsed = if cfg.timings { start.elapsed().as_secs_f64() } else { 0.0 };
    let (outputs, status) = match &result {
        Ok(o) => (o.clone(), "ok".to_string()),
        Err(e) => (vec![], format!("failed: {e}")),
    };
    report.0.push(format!("status: {status}"));
    let text = report.0.join("\n") + "\n";
    print!("{text}");
    let report_path = cli.out.join("report.txt");
    std::fs::write(&report_path, text).map_err(|e| output_error(&report_path, e))?;
    write_manifest(&cli.out, cli, &raw, &cfg, elapsed, &outputs, &status)?;
    result.map(|_| ())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sg-heat: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
