//! The four studies and their CSV rows.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sgheat::benchmark::{
    expand_diffusion, rates, run_sg_with, toy_diffusion, ManufacturedBenchmark, SgConfig,
    SgRun, SgSpatial,
};
use sgheat::chaos::basis_size;
use sgheat::monte_carlo::{run_ensemble_observed, McConfig, McErrorReport, PathwiseSolver};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, Study};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver failure: {0}")]
    Solver(#[from] sgheat::Error),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub fn benchmark(cfg: &RunConfig) -> Result<ManufacturedBenchmark, RunError> {
    let field = if cfg.m == 2 {
        toy_diffusion(cfg.d_min)?
    } else {
        expand_diffusion(cfg.d_min)?
    };
    Ok(ManufacturedBenchmark::new(field, cfg.q, cfg.eta, cfg.t_final)?)
}

/// Row-by-row CSV output, flushed after every row so a failing run leaves
/// the completed rows on disk.
pub struct CsvSink {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvSink {
    pub fn create(path: PathBuf) -> Result<Self, RunError> {
        let writer = csv::Writer::from_path(&path).map_err(|e| output_error(&path, e))?;
        Ok(CsvSink { path, writer })
    }

    pub fn push<R: Serialize>(&mut self, row: &R) -> Result<(), RunError> {
        self.writer.serialize(row).map_err(|e| output_error(&self.path, e))?;
        self.writer.flush().map_err(|e| output_error(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn output_error(path: &Path, e: impl std::error::Error + Send + Sync + 'static) -> RunError {
    RunError::Output {
        path: path.to_path_buf(),
        source: Box::new(e),
    }
}

fn secs(d: Duration, timings: bool) -> f64 {
    if timings {
        d.as_secs_f64()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SgRefineRow {
    pub p_xi: u32,
    #[serde(rename = "N_xi")]
    pub n_xi: usize,
    #[serde(rename = "E_full_L2")]
    pub e_full_l2: f64,
    #[serde(rename = "E_full_H1")]
    pub e_full_h1: f64,
    #[serde(rename = "E_mean_L2")]
    pub e_mean_l2: f64,
    #[serde(rename = "E_mean_H1")]
    pub e_mean_h1: f64,
    #[serde(rename = "E_var_L2")]
    pub e_var_l2: f64,
    #[serde(rename = "E_var_H1")]
    pub e_var_h1: f64,
    #[serde(rename = "r_p_full_L2")]
    pub r_p_full_l2: Option<f64>,
    #[serde(rename = "r_xi_full_L2")]
    pub r_xi_full_l2: Option<f64>,
    #[serde(rename = "r_p_mean_L2")]
    pub r_p_mean_l2: Option<f64>,
    #[serde(rename = "r_xi_mean_L2")]
    pub r_xi_mean_l2: Option<f64>,
    #[serde(rename = "r_p_var_L2")]
    pub r_p_var_l2: Option<f64>,
    #[serde(rename = "r_xi_var_L2")]
    pub r_xi_var_l2: Option<f64>,
    #[serde(rename = "N_SG_slab")]
    pub n_sg_slab: u64,
    pub avg_fgmres: f64,
    pub vmult_calls: usize,
    pub prec_calls: usize,
    pub wall_s: f64,
    pub solve_s: f64,
    pub apply_s: f64,
    pub prec_s: f64,
    #[serde(rename = "W")]
    pub w: u64,
}

impl SgRefineRow {
    fn new(run: &SgRun, timings: bool) -> Self {
        let e = &run.report;
        let s = &run.stats;
        let n_sg_slab = s.n_sg_slab as u64;
        SgRefineRow {
            p_xi: e.p,
            n_xi: e.n_xi,
            e_full_l2: e.full_l2,
            e_full_h1: e.full_h1,
            e_mean_l2: e.mean_l2,
            e_mean_h1: e.mean_h1,
            e_var_l2: e.var_l2,
            e_var_h1: e.var_h1,
            r_p_full_l2: None,
            r_xi_full_l2: None,
            r_p_mean_l2: None,
            r_xi_mean_l2: None,
            r_p_var_l2: None,
            r_xi_var_l2: None,
            n_sg_slab,
            avg_fgmres: s.avg_iterations(),
            vmult_calls: s.vmult_calls,
            prec_calls: s.prec_calls,
            wall_s: secs(s.wall, timings),
            solve_s: secs(s.solve, timings),
            apply_s: secs(s.apply, timings),
            prec_s: secs(s.prec, timings),
            w: n_sg_slab * s.prec_calls as u64,
        }
    }

    /// Fills the rate columns against the preceding row.
    fn with_rates(mut self, prev: Option<&SgRefineRow>) -> Self {
        let Some(prev) = prev else {
            return self;
        };
        let n = [prev.n_xi, self.n_xi];
        let pick = |a: f64, b: f64| rates(&[a, b], &n)[1];
        let split = |x: Option<(f64, f64)>| (x.map(|v| v.0), x.map(|v| v.1));
        (self.r_p_full_l2, self.r_xi_full_l2) = split(pick(prev.e_full_l2, self.e_full_l2));
        (self.r_p_mean_l2, self.r_xi_mean_l2) = split(pick(prev.e_mean_l2, self.e_mean_l2));
        (self.r_p_var_l2, self.r_xi_var_l2) = split(pick(prev.e_var_l2, self.e_var_l2));
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpacetimeRow {
    pub level: u32,
    pub h: f64,
    pub tau: f64,
    pub k: usize,
    pub r: usize,
    pub slabs: usize,
    pub p_xi: u32,
    #[serde(rename = "N_xi")]
    pub n_xi: usize,
    #[serde(rename = "E_full_L2")]
    pub e_full_l2: f64,
    #[serde(rename = "E_full_H1")]
    pub e_full_h1: f64,
    #[serde(rename = "E_mean_L2")]
    pub e_mean_l2: f64,
    #[serde(rename = "E_mean_H1")]
    pub e_mean_h1: f64,
    #[serde(rename = "E_var_L2")]
    pub e_var_l2: f64,
    #[serde(rename = "E_var_H1")]
    pub e_var_h1: f64,
    #[serde(rename = "r_h_full_L2")]
    pub r_h_full_l2: Option<f64>,
    #[serde(rename = "r_h_full_H1")]
    pub r_h_full_h1: Option<f64>,
    #[serde(rename = "r_h_mean_L2")]
    pub r_h_mean_l2: Option<f64>,
    #[serde(rename = "r_h_mean_H1")]
    pub r_h_mean_h1: Option<f64>,
    #[serde(rename = "r_h_var_L2")]
    pub r_h_var_l2: Option<f64>,
    #[serde(rename = "r_h_var_H1")]
    pub r_h_var_h1: Option<f64>,
    #[serde(rename = "N_SG_slab")]
    pub n_sg_slab: u64,
    pub avg_fgmres: f64,
    pub vmult_calls: usize,
    pub prec_calls: usize,
    pub wall_s: f64,
    pub solve_s: f64,
    pub apply_s: f64,
    pub prec_s: f64,
    #[serde(rename = "W")]
    pub w: u64,
}

/// `log(E₀/E) / log(h₀/h)`, undefined for non-positive errors.
fn h_rate(e0: f64, e: f64, h0: f64, h: f64) -> Option<f64> {
    (e0 > 0.0 && e > 0.0).then(|| (e0 / e).ln() / (h0 / h).ln())
}

#[derive(Debug, Clone, Serialize)]
pub struct McRow {
    #[serde(rename = "N_mc")]
    pub n_mc: usize,
    #[serde(rename = "E_tot_mean_L2")]
    pub e_tot_mean_l2: Option<f64>,
    pub r_tot: Option<f64>,
    #[serde(rename = "E_ex_mean_L2")]
    pub e_ex_mean_l2: f64,
    pub r_ex: Option<f64>,
    #[serde(rename = "E_tot_var_L2")]
    pub e_tot_var_l2: Option<f64>,
    pub r_tot_var: Option<f64>,
    #[serde(rename = "E_ex_var_L2")]
    pub e_ex_var_l2: Option<f64>,
    pub r_ex_var: Option<f64>,
    #[serde(rename = "E_disc_mean_L2")]
    pub e_disc_mean_l2: Option<f64>,
    #[serde(rename = "E_disc_var_L2")]
    pub e_disc_var_l2: Option<f64>,
    #[serde(rename = "E_tot_mean_H1")]
    pub e_tot_mean_h1: Option<f64>,
    #[serde(rename = "E_ex_mean_H1")]
    pub e_ex_mean_h1: f64,
    #[serde(rename = "E_disc_mean_H1")]
    pub e_disc_mean_h1: Option<f64>,
    #[serde(rename = "E_tot_var_H1")]
    pub e_tot_var_h1: Option<f64>,
    #[serde(rename = "E_ex_var_H1")]
    pub e_ex_var_h1: Option<f64>,
    #[serde(rename = "E_disc_var_H1")]
    pub e_disc_var_h1: Option<f64>,
    pub wall_s: f64,
}

impl McRow {
    fn new(r: &McErrorReport, timings: bool) -> Self {
        McRow {
            n_mc: r.n_mc,
            e_tot_mean_l2: r.total.map(|e| e.mean_l2),
            r_tot: r.r_tot_mean,
            e_ex_mean_l2: r.exact.mean_l2,
            r_ex: r.r_ex_mean,
            e_tot_var_l2: r.total.and_then(|e| e.var_l2),
            r_tot_var: r.r_tot_var,
            e_ex_var_l2: r.exact.var_l2,
            r_ex_var: r.r_ex_var,
            e_disc_mean_l2: r.disc.map(|e| e.mean_l2),
            e_disc_var_l2: r.disc.and_then(|e| e.var_l2),
            e_tot_mean_h1: r.total.map(|e| e.mean_h1),
            e_ex_mean_h1: r.exact.mean_h1,
            e_disc_mean_h1: r.disc.map(|e| e.mean_h1),
            e_tot_var_h1: r.total.and_then(|e| e.var_h1),
            e_ex_var_h1: r.exact.var_h1,
            e_disc_var_h1: r.disc.and_then(|e| e.var_h1),
            wall_s: secs(r.wall, timings),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub method: &'static str,
    pub resolution: String,
    pub stochastic_size: usize,
    #[serde(rename = "E_mean_L2")]
    pub e_mean_l2: Option<f64>,
    #[serde(rename = "E_var_L2")]
    pub e_var_l2: Option<f64>,
    pub wall_s: f64,
}

/// Human-readable lines collected while a study runs.
#[derive(Debug, Default)]
pub struct Report(pub Vec<String>);

impl Report {
    fn line(&mut self, s: String) {
        log::info!("{s}");
        self.0.push(s);
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4e}"))
}

fn sg_config(cfg: &RunConfig, level: u32, slabs: usize, p: u32) -> SgConfig {
    SgConfig {
        level,
        k: cfg.k,
        r: cfg.r,
        slabs,
        p,
        fgmres: cfg.fgmres.clone(),
    }
}

pub fn sg_refine(cfg: &RunConfig, out: &Path, report: &mut Report) -> Result<Vec<PathBuf>, RunError> {
    let bench = benchmark(cfg)?;
    let level = cfg.levels[0];
    let spatial = SgSpatial::new(&bench, level, cfg.k)?;
    let mut sink = CsvSink::create(out.join("sg_refine.csv"))?;
    let mut prev: Option<SgRefineRow> = None;
    report.line(format!(
        "sg-refine M={} q={} level={level} k={} r={} slabs={}",
        cfg.m, cfg.q, cfg.k, cfg.r, cfg.slabs
    ));
    for &p in &cfg.degrees {
        let run = run_sg_with(&bench, &spatial, &sg_config(cfg, level, cfg.slabs, p))?;
        let row = SgRefineRow::new(&run, cfg.timings).with_rates(prev.as_ref());
        sink.push(&row)?;
        report.line(format!(
            "p={p:<2} N_xi={:<4} full {:.4e} mean {:.4e} var {:.4e} fgmres {:.2} W {}",
            row.n_xi, row.e_full_l2, row.e_mean_l2, row.e_var_l2, row.avg_fgmres, row.w
        ));
        prev = Some(row);
    }
    Ok(vec![sink.path().to_path_buf()])
}

pub fn sg_spacetime(cfg: &RunConfig, out: &Path, report: &mut Report) -> Result<Vec<PathBuf>, RunError> {
    let bench = benchmark(cfg)?;
    let p = cfg.degrees[0];
    let mut sink = CsvSink::create(out.join("sg_spacetime.csv"))?;
    let mut prev: Option<SpacetimeRow> = None;
    report.line(format!("sg-spacetime M={} q={} p={p} k={} r={}", cfg.m, cfg.q, cfg.k, cfg.r));
    for &level in &cfg.levels {
        let slabs = cfg.slabs << (level - cfg.levels[0]);
        let spatial = SgSpatial::new(&bench, level, cfg.k)?;
        let run = run_sg_with(&bench, &spatial, &sg_config(cfg, level, slabs, p))?;
        let base = SgRefineRow::new(&run, cfg.timings);
        let h = 2.0 / (1u64 << level) as f64;
        let rate = |f: fn(&SpacetimeRow) -> f64, e: f64| prev.as_ref().and_then(|pr| h_rate(f(pr), e, pr.h, h));
        let row = SpacetimeRow {
            level,
            h,
            tau: bench.t_final / slabs as f64,
            k: cfg.k,
            r: cfg.r,
            slabs,
            p_xi: p,
            n_xi: base.n_xi,
            e_full_l2: base.e_full_l2,
            e_full_h1: base.e_full_h1,
            e_mean_l2: base.e_mean_l2,
            e_mean_h1: base.e_mean_h1,
            e_var_l2: base.e_var_l2,
            e_var_h1: base.e_var_h1,
            r_h_full_l2: rate(|r| r.e_full_l2, base.e_full_l2),
            r_h_full_h1: rate(|r| r.e_full_h1, base.e_full_h1),
            r_h_mean_l2: rate(|r| r.e_mean_l2, base.e_mean_l2),
            r_h_mean_h1: rate(|r| r.e_mean_h1, base.e_mean_h1),
            r_h_var_l2: rate(|r| r.e_var_l2, base.e_var_l2),
            r_h_var_h1: rate(|r| r.e_var_h1, base.e_var_h1),
            n_sg_slab: base.n_sg_slab,
            avg_fgmres: base.avg_fgmres,
            vmult_calls: base.vmult_calls,
            prec_calls: base.prec_calls,
            wall_s: base.wall_s,
            solve_s: base.solve_s,
            apply_s: base.apply_s,
            prec_s: base.prec_s,
            w: base.w,
        };
        sink.push(&row)?;
        report.line(format!(
            "level={level} slabs={slabs:<3} full L2 {:.4e} (rate {}) H1 {:.4e} (rate {})",
            row.e_full_l2,
            row.r_h_full_l2.map_or("-".into(), |v| format!("{v:.3}")),
            row.e_full_h1,
            row.r_h_full_h1.map_or("-".into(), |v| format!("{v:.3}")),
        ));
        prev = Some(row);
    }
    Ok(vec![sink.path().to_path_buf()])
}

fn mc_config(cfg: &RunConfig) -> McConfig {
    McConfig {
        level: cfg.levels[0],
        k: cfg.k,
        r: cfg.r,
        slabs: cfg.slabs,
        fgmres: cfg.fgmres.clone(),
        seed: cfg.seed,
        milestones: cfg.milestones.clone(),
        exact_only: cfg.exact_only,
    }
}

fn mc_line(r: &McErrorReport) -> String {
    format!(
        "N={:<6} mean tot {} ex {:.4e}  var tot {} ex {}",
        r.n_mc,
        opt(r.total.map(|e| e.mean_l2)),
        r.exact.mean_l2,
        opt(r.total.and_then(|e| e.var_l2)),
        opt(r.exact.var_l2)
    )
}

/// Runs the ensemble, streaming rows into `sink` while it progresses.
fn ensemble(
    cfg: &RunConfig,
    bench: &ManufacturedBenchmark,
    mut on_report: impl FnMut(&McErrorReport) -> Result<(), RunError>,
) -> Result<(), RunError> {
    let solver = PathwiseSolver::new(bench, cfg.levels[0], cfg.k, cfg.r, cfg.slabs, cfg.fgmres.clone())?;
    let mut deferred: Option<RunError> = None;
    let result = run_ensemble_observed(&solver, &mc_config(cfg), |r| {
        on_report(r).map_err(|e| {
            let msg = e.to_string();
            deferred = Some(e);
            sgheat::Error::InvalidInput(msg)
        })
    });
    match (result, deferred) {
        (_, Some(e)) => Err(e),
        (Err(e), None) => Err(e.into()),
        (Ok(_), None) => Ok(()),
    }
}

pub fn mc_run(cfg: &RunConfig, out: &Path, report: &mut Report) -> Result<Vec<PathBuf>, RunError> {
    let bench = benchmark(cfg)?;
    let mut sink = CsvSink::create(out.join("mc_run.csv"))?;
    report.line(format!(
        "mc-run M={} q={} level={} k={} r={} slabs={} seed={}{}",
        cfg.m,
        cfg.q,
        cfg.levels[0],
        cfg.k,
        cfg.r,
        cfg.slabs,
        cfg.seed,
        if cfg.exact_only { " exact-only" } else { "" }
    ));
    ensemble(cfg, &bench, |r| {
        sink.push(&McRow::new(r, cfg.timings))?;
        report.line(mc_line(r));
        Ok(())
    })?;
    Ok(vec![sink.path().to_path_buf()])
}

pub fn compare(cfg: &RunConfig, out: &Path, report: &mut Report) -> Result<Vec<PathBuf>, RunError> {
    let bench = benchmark(cfg)?;
    let level = cfg.levels[0];
    let resolution = format!("level={level} k={} r={} slabs={}", cfg.k, cfg.r, cfg.slabs);
    let mut sink = CsvSink::create(out.join("compare.csv"))?;
    report.line(format!("compare M={} q={} {resolution}", cfg.m, cfg.q));
    let spatial = SgSpatial::new(&bench, level, cfg.k)?;
    for &p in &cfg.degrees {
        let run = run_sg_with(&bench, &spatial, &sg_config(cfg, level, cfg.slabs, p))?;
        let row = CompareRow {
            method: "SG",
            resolution: format!("p_xi={p} {resolution}"),
            stochastic_size: basis_size(cfg.m, p),
            e_mean_l2: Some(run.report.mean_l2),
            e_var_l2: Some(run.report.var_l2),
            wall_s: secs(run.stats.wall, cfg.timings),
        };
        sink.push(&row)?;
        report.line(format!(
            "SG p={p:<2} N_xi={:<5} mean {:.4e} var {:.4e}",
            row.stochastic_size, run.report.mean_l2, run.report.var_l2
        ));
    }
    let mut mc_cfg = cfg.clone();
    mc_cfg.exact_only = false;
    ensemble(&mc_cfg, &bench, |r| {
        let tot = r.total.expect("full ensemble reports total errors");
        sink.push(&CompareRow {
            method: "MC",
            resolution: resolution.clone(),
            stochastic_size: r.n_mc,
            e_mean_l2: Some(tot.mean_l2),
            e_var_l2: tot.var_l2,
            wall_s: secs(r.wall, cfg.timings),
        })?;
        report.line(format!("MC {}", mc_line(r)));
        Ok(())
    })?;
    Ok(vec![sink.path().to_path_buf()])
}

pub fn run_study(cfg: &RunConfig, out: &Path, report: &mut Report) -> Result<Vec<PathBuf>, RunError> {
    match cfg.study {
        Study::SgRefine => sg_refine(cfg, out, report),
        Study::SgSpacetime => sg_spacetime(cfg, out, report),
        Study::McRun => mc_run(cfg, out, report),
        Study::Compare => compare(cfg, out, report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spatial_rate() {
        let r = h_rate(1.0, 1.0 / 16.0, 0.5, 0.25).unwrap();
        assert!((r - 4.0).abs() < 1e-14);
        assert!(h_rate(0.0, 1.0, 0.5, 0.25).is_none());
    }

    #[test]
    fn timings_can_be_zeroed() {
        assert_eq!(secs(Duration::from_millis(1500), true), 1.5);
        assert_eq!(secs(Duration::from_millis(1500), false), 0.0);
    }
}
