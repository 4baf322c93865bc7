//! Experiment runner for the `beris-core` solvers: JSON run configs, a registry of
//! experiments, CSV/JSON/snapshot outputs and parameter sweeps.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use beris_core::diag::fmt_f64;
use beris_core::rates::loglog_slope;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

pub use config::{Experiment, RunConfig};
pub use error::HarnessError;
use output::{opt_f64, quote, Artifacts, Table};

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub status: &'static str,
    pub exit_code: i32,
    pub error: Option<String>,
    pub summary: BTreeMap<String, Value>,
    pub headline_key: Option<&'static str>,
    pub headline: Option<f64>,
}

fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, HarnessError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| {
                    HarnessError::Config(format!("cannot build a pool of {n} threads: {e}"))
                })?;
            Ok(pool.install(f))
        }
    }
}

/// Runs one configuration and writes its artifacts and `manifest.json`. Experiment
/// failures are reported through the outcome; only output failures are errors.
pub fn run_config(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome, HarnessError> {
    let mut cfg = cfg.clone();
    if let Some(out) = &opts.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    let start = Instant::now();
    log::info!("{} -> {}", cfg.experiment, cfg.output_dir.display());

    let (art, result, threads) = with_threads(opts.threads, || {
        let mut art = Artifacts::default();
        let result = cfg
            .validate()
            .and_then(|_| experiments::run_experiment(&cfg, &mut art).map_err(HarnessError::from));
        (art, result, rayon::current_num_threads())
    })?;
    let files = art.write(&cfg.output_dir, &cfg.params)?;
    let (status, exit_code, error) = match &result {
        Ok(()) => ("ok", 0, None),
        Err(e) => (e.status(), e.exit_code(), Some(e.to_string())),
    };
    let manifest = json!({
        "experiment": cfg.experiment.name(),
        "config": cfg,
        "version": env!("CARGO_PKG_VERSION"),
        "status": status,
        "exit_code": exit_code,
        "error": error,
        "threads": threads,
        "wall_time_s": start.elapsed().as_secs_f64(),
        "summary": art.summary,
        "files": files,
    });
    std::fs::write(
        cfg.output_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    if let Some(e) = &error {
        log::error!("{} failed: {e}", cfg.experiment);
    }
    Ok(RunOutcome {
        dir: cfg.output_dir.clone(),
        status,
        exit_code,
        error,
        headline: art.headline_value(),
        headline_key: art.headline,
        summary: art.summary,
    })
}

pub fn run_path(path: &Path, opts: &RunOptions) -> Result<RunOutcome, HarnessError> {
    run_config(&RunConfig::load(path)?, opts)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub value: f64,
    pub status: &'static str,
    pub exit_code: i32,
    pub headline: Option<f64>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub param: String,
    pub headline_key: Option<&'static str>,
    pub rows: Vec<SweepRow>,
    /// Log-log slope of the headline value against the parameter.
    pub slope: Option<f64>,
    pub trend: &'static str,
}

fn trend(points: &[(f64, f64)]) -> &'static str {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.0.total_cmp(&b.0));
    if p.len() < 2 {
        "insufficient"
    } else if p.windows(2).all(|w| w[1].1 > w[0].1) {
        "increasing"
    } else if p.windows(2).all(|w| w[1].1 < w[0].1) {
        "decreasing"
    } else {
        "non_monotone"
    }
}

/// Runs the config once per value of `param`, each in `<out>/run_<i>`, and writes the
/// aggregate `sweep.csv` and `sweep.json` into `<out>`. Up to `jobs` runs proceed at once.
pub fn sweep_path(
    path: &Path,
    param: &str,
    values: &[f64],
    opts: &RunOptions,
    jobs: usize,
) -> Result<SweepReport, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Config(
            "sweep needs at least one value".into(),
        ));
    }
    let raw: Value = serde_json::from_str(&config::read_config(path)?)
        .map_err(|e| HarnessError::Config(format!("malformed config: {e}")))?;
    let base = RunConfig::from_value(raw.clone())?;
    config::set_numeric(&mut raw.clone(), param, values[0])?;
    let out = opts.out.clone().unwrap_or_else(|| base.output_dir.clone());

    let job = |(index, &value): (usize, &f64)| -> (SweepRow, Option<&'static str>) {
        let dir = out.join(format!("run_{index:03}"));
        let mut v = raw.clone();
        let prepared =
            config::set_numeric(&mut v, param, value).and_then(|_| RunConfig::from_value(v));
        let run_opts = RunOptions {
            out: Some(dir),
            ..opts.clone()
        };
        let outcome = prepared.and_then(|c| run_config(&c, &run_opts));
        match outcome {
            Ok(o) => (
                SweepRow {
                    index,
                    value,
                    status: o.status,
                    exit_code: o.exit_code,
                    headline: o.headline,
                    message: o.error,
                },
                o.headline_key,
            ),
            Err(e) => (
                SweepRow {
                    index,
                    value,
                    status: e.status(),
                    exit_code: e.exit_code(),
                    headline: None,
                    message: Some(e.to_string()),
                },
                None,
            ),
        }
    };
    let results: Vec<(SweepRow, Option<&'static str>)> = if jobs <= 1 {
        values.iter().enumerate().map(job).collect()
    } else {
        with_threads(Some(jobs), || {
            values.par_iter().enumerate().map(job).collect()
        })?
    };
    let headline_key = results.iter().find_map(|r| r.1);
    let rows: Vec<SweepRow> = results.into_iter().map(|r| r.0).collect();

    let mut table = Table::new(
        "sweep.csv",
        &format!(
            "index,value,status,exit_code,{},slope_so_far,message",
            headline_key.unwrap_or("headline")
        ),
    );
    let mut points = Vec::new();
    for r in &rows {
        if let (0, Some(h)) = (r.exit_code, r.headline) {
            points.push((r.value, h));
        }
        let (x, y): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
        table.push(format!(
            "{},{},{},{},{},{},{}",
            r.index,
            fmt_f64(r.value),
            r.status,
            r.exit_code,
            opt_f64(r.headline),
            opt_f64(loglog_slope(&x, &y)),
            r.message.as_deref().map(quote).unwrap_or_default()
        ));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    let report = SweepReport {
        param: param.to_string(),
        headline_key,
        slope: loglog_slope(&x, &y),
        trend: trend(&points),
        rows,
    };
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("sweep.csv"), table.to_csv())?;
    std::fs::write(
        out.join("sweep.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trend_classification() {
        assert_eq!(trend(&[(1.0, 1.0)]), "insufficient");
        assert_eq!(trend(&[(2.0, 4.0), (1.0, 1.0), (3.0, 9.0)]), "increasing");
        assert_eq!(trend(&[(1.0, 3.0), (2.0, 2.0)]), "decreasing");
        assert_eq!(trend(&[(1.0, 3.0), (2.0, 2.0), (3.0, 5.0)]), "non_monotone");
    }
}
