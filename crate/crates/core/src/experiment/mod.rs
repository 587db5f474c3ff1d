//! Configuration-driven experiments: simulate `y = A x + e`, solve per seed,
//! score, and write traces and summaries.

mod config;
mod image_io;
mod sweep;
mod validate;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

pub use config::{
    ComponentSpec, CovarianceSpec, EnsembleSpec, ExperimentConfig, GroundTruthSpec, KspaceFamily,
    MetricsSpec, OperatorSpec, Prepared, PriorSpec, ProblemSpec, RestorerSpec, CONFIG_VERSION,
};
pub use image_io::{decode_image, encode_image, read_image, write_image, ImageHeader, IMAGE_MAGIC};
pub use sweep::{set_path, sweep, SweepOutput};
pub use validate::{validate, ValidationCheck};

use crate::error::{Error, Result};
use crate::metrics::{self, SsimParams};
use crate::objective::{self, Problem};
use crate::rng::{self, gaussian_noise};
use crate::solver::{self, audit_convergence, AuditOptions, AuditReport, Reference, Trace};

pub const SUMMARY_HEADER: &str = "run_id,seed,psnr_db,ssim,f_final,iters,wall_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub f_final: Option<f64>,
    pub iters: usize,
    pub wall_ms: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.run_id,
            self.seed,
            opt(self.psnr_db),
            opt(self.ssim),
            opt(self.f_final),
            self.iters,
            opt(self.wall_ms)
        )
    }
}

pub fn summary_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

/// Ground truth and measurement for one seed.
pub fn simulate_measurement(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    seed: u64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let mut rng = rng::stream(seed, rng::STREAM_SIMULATION);
    let x_true = match &prepared.ground_truth {
        Some(x) => x.clone(),
        None => prepared.prior.sample(&mut rng),
    };
    let clean = prepared.a.apply(&x_true)?;
    let y = if cfg.problem.noise_sigma == 0.0 {
        clean
    } else {
        clean + gaussian_noise(&mut rng, prepared.a.out_dim(), cfg.problem.noise_sigma)
    };
    Ok((x_true, y))
}

fn default_peak(x_true: &DVector<f64>) -> f64 {
    let p = x_true.amax();
    if p > 0.0 {
        p
    } else {
        1.0
    }
}

/// Result of one seed.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub x_true: DVector<f64>,
    pub x_final: DVector<f64>,
    pub trace: Trace,
    pub row: MetricsRow,
}

pub fn run_seed(cfg: &ExperimentConfig, prepared: &Prepared, seed: u64) -> Result<SeedOutcome> {
    let start = Instant::now();
    let (x_true, y) = simulate_measurement(cfg, prepared, seed)?;
    let problem = Problem::new(prepared.a.clone(), y, cfg.problem.noise_sigma)?;
    let mut scfg = cfg.solver.clone();
    scfg.seed = seed;
    let peak = cfg.metrics.peak.unwrap_or_else(|| default_peak(&x_true));
    let reference = Reference {
        x_true: x_true.clone(),
        peak,
        magnitude: cfg.metrics.magnitude,
    };
    let (x_final, trace) = solver::run_with_reference(
        &problem,
        &prepared.reg,
        &prepared.restorer,
        &scfg,
        cfg.metrics.psnr_trace.then_some(&reference),
    )?;
    let psnr_db = if cfg.metrics.psnr {
        Some(reference.psnr(&x_final)?)
    } else {
        None
    };
    let ssim = match (cfg.metrics.ssim, prepared.image_shape) {
        (true, Some((h, w))) => {
            let (a, b) = if cfg.metrics.magnitude {
                (metrics::magnitude(&x_final), metrics::magnitude(&x_true))
            } else {
                (x_final.clone(), x_true.clone())
            };
            let params = SsimParams {
                window: cfg.metrics.ssim_window,
                ..SsimParams::new(peak)
            };
            Some(metrics::ssim(&a, &b, h, w, &params)?)
        }
        _ => None,
    };
    let f_final = match objective::objective_value(&problem, &prepared.reg, &x_final) {
        Ok(v) => Some(v),
        Err(Error::Refused(_)) => None,
        Err(e) => return Err(e),
    };
    let wall_ms = cfg
        .metrics
        .timing
        .then(|| start.elapsed().as_secs_f64() * 1e3);
    Ok(SeedOutcome {
        seed,
        row: MetricsRow {
            run_id: cfg.run_id.clone(),
            seed,
            psnr_db,
            ssim,
            f_final,
            iters: trace.len(),
            wall_ms,
        },
        x_true,
        x_final,
        trace,
    })
}

/// Files written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<MetricsRow>,
    pub output_dir: PathBuf,
    pub trace_paths: Vec<PathBuf>,
    pub final_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
    pub report: String,
}

pub fn output_dir(cfg: &ExperimentConfig, base: &Path) -> PathBuf {
    config::resolve(base, &cfg.output_dir)
}

pub fn trace_file_name(run_id: &str, seed: u64) -> String {
    format!("{run_id}_seed{seed}.csv")
}

pub fn final_file_name(run_id: &str, seed: u64) -> String {
    format!("{run_id}_seed{seed}.f64")
}

pub(crate) fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Runs every seed (in parallel, merged in seed order) and writes the
/// outputs. Completed seeds are written even when another seed fails.
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path, threads: Option<usize>) -> Result<ExperimentOutput> {
    let prepared = Prepared::new(cfg, base)?;
    let out = output_dir(cfg, base);
    let traces_dir = out.join("traces");
    let finals_dir = out.join("final");
    std::fs::create_dir_all(&traces_dir)?;
    std::fs::create_dir_all(&finals_dir)?;
    std::fs::write(out.join("config.json"), cfg.to_json()?)?;

    let results: Vec<Result<SeedOutcome>> = with_pool(threads, || {
        cfg.seeds
            .par_iter()
            .map(|&seed| run_seed(cfg, &prepared, seed))
            .collect()
    })?;

    let n = prepared.a.in_dim();
    let (h, w) = prepared.image_shape.unwrap_or((n, 1));
    let mut rows = Vec::new();
    let mut trace_paths = Vec::new();
    let mut final_paths = Vec::new();
    let mut outcomes = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(o) => {
                let tp = traces_dir.join(trace_file_name(&cfg.run_id, o.seed));
                std::fs::write(&tp, o.trace.to_csv())?;
                let fp = finals_dir.join(final_file_name(&cfg.run_id, o.seed));
                write_image(&fp, ImageHeader { height: h, width: w, channels: 1 }, &o.x_final)?;
                trace_paths.push(tp);
                final_paths.push(fp);
                rows.push(o.row.clone());
                outcomes.push(o);
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    let summary_path = out.join("summary.csv");
    std::fs::write(&summary_path, summary_csv(&rows))?;
    if cfg.metrics.curves && !outcomes.is_empty() {
        std::fs::write(out.join("curves.csv"), curves_csv(&outcomes))?;
    }
    let report = report_text(cfg, &rows);
    std::fs::write(out.join("report.txt"), &report)?;
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(ExperimentOutput {
        rows,
        output_dir: out,
        trace_paths,
        final_paths,
        summary_path,
        report,
    })
}

#[derive(Default)]
struct ColumnStats {
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
}

fn column_stats(values: &[f64]) -> ColumnStats {
    if values.is_empty() {
        return ColumnStats::default();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    ColumnStats {
        mean,
        std: var.sqrt(),
        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Per-iteration mean, standard deviation, min and max across seeds of
/// `step_sq` and `psnr`.
pub fn curves_csv(outcomes: &[SeedOutcome]) -> String {
    let mut s = String::from(
        "k,step_sq_mean,step_sq_std,step_sq_min,step_sq_max,psnr_mean,psnr_std,psnr_min,psnr_max\n",
    );
    let t = outcomes.iter().map(|o| o.trace.len()).min().unwrap_or(0);
    for i in 0..t {
        let steps: Vec<f64> = outcomes.iter().map(|o| o.trace.records[i].step_sq).collect();
        let psnrs: Vec<f64> = outcomes.iter().filter_map(|o| o.trace.records[i].psnr).collect();
        let a = column_stats(&steps);
        let _ = write!(s, "{},{},{},{},{}", i + 1, a.mean, a.std, a.min, a.max);
        if psnrs.len() == outcomes.len() {
            let b = column_stats(&psnrs);
            let _ = writeln!(s, ",{},{},{},{}", b.mean, b.std, b.min, b.max);
        } else {
            s.push_str(",,,,\n");
        }
    }
    s
}

fn report_text(cfg: &ExperimentConfig, rows: &[MetricsRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "run_id: {}", cfg.run_id);
    let _ = writeln!(s, "seeds: {}", rows.len());
    let _ = writeln!(s, "iterations: {}", cfg.solver.iterations);
    let _ = writeln!(s, "gamma: {}", cfg.solver.gamma);
    let _ = writeln!(s, "tau: {}", cfg.solver.tau.unwrap_or(cfg.tau));
    let _ = writeln!(s, "ensemble_sigma: {}", cfg.ensemble.sigma);
    let _ = writeln!(
        s,
        "ssim: window {} uniform, C1 = (0.01 peak)^2, C2 = (0.03 peak)^2",
        cfg.metrics.ssim_window
    );
    let _ = writeln!(
        s,
        "psnr_peak: {}",
        cfg.metrics
            .peak
            .map(|p| p.to_string())
            .unwrap_or_else(|| "max |x_true| per seed".into())
    );
    let psnr: Vec<f64> = rows.iter().filter_map(|r| r.psnr_db).collect();
    if !psnr.is_empty() {
        let st = column_stats(&psnr);
        let _ = writeln!(s, "psnr_mean_db: {}", st.mean);
        let _ = writeln!(s, "psnr_std_db: {}", st.std);
    }
    s
}

/// Runs every seed with iterates recorded on the measurement of the first
/// seed and audits the convergence bound. Writes `audit.txt` and `audit.json`.
pub fn audit_experiment(cfg: &ExperimentConfig, base: &Path, threads: Option<usize>) -> Result<AuditReport> {
    let prepared = Prepared::new(cfg, base)?;
    let (_, y) = simulate_measurement(cfg, &prepared, cfg.seeds[0])?;
    let problem = Problem::new(prepared.a.clone(), y, cfg.problem.noise_sigma)?;
    let runs: Vec<Result<(solver::SolverConfig, Trace)>> = with_pool(threads, || {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let mut scfg = cfg.solver.clone();
                scfg.seed = seed;
                scfg.diagnostics.record_iterates = true;
                let (_, trace) = solver::run(&problem, &prepared.reg, &prepared.restorer, &scfg)?;
                Ok((scfg, trace))
            })
            .collect()
    })?;
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let opts = cfg.audit.clone().unwrap_or_else(AuditOptions::default);
    let mut report = with_pool(threads, || {
        audit_convergence(&problem, &prepared.reg, &prepared.restorer, &runs, &[], &opts)
    })??;
    report
        .notes
        .push(format!("all runs share the measurement simulated with seed {}", cfg.seeds[0]));
    let out = output_dir(cfg, base);
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("audit.txt"), report.to_text())?;
    std::fs::write(out.join("audit.json"), report.to_json()?)?;
    Ok(report)
}
