//! File output and the config-driven orchestrator.
//!
//! CSV floats are written as `{:.16e}` (17 significant digits) and missing
//! values as empty fields. JSON lines use serde_json's shortest round-trip
//! formatting. Data files depend only on the config and the master seed;
//! wall-clock timings go to a separate `timings.json`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use super::config::Config;
use super::drivers::{
    averaged_comparison, lyapunov_sweep, od_sweep, phase_portrait, score_record, sigma_sweep, sme_trajectory,
    summarize_scores, CellScore,
};
use super::engine::{Engine, TrajectoryRecord};
use crate::classical::to_angles;
use crate::error::{Error, Result};
use crate::rng::Streams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::param(format!("unknown format `{other}` (expected csv or jsonl)"))),
        }
    }
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Trajectory,
    Portrait,
    Lyapunov,
    Averaged,
    Sme,
    Similarity,
    SweepSigma,
    SweepOd,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Trajectory => "trajectory",
            Task::Portrait => "portrait",
            Task::Lyapunov => "lyapunov",
            Task::Averaged => "averaged",
            Task::Sme => "sme",
            Task::Similarity => "similarity",
            Task::SweepSigma => "sweep-sigma",
            Task::SweepOd => "sweep-od",
        }
    }

    fn stem(self) -> String {
        self.name().replace('-', "_")
    }
}

/// Command-line overrides applied on top of the config.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub task: Task,
    pub engine: Option<Engine>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Worker threads; `None` uses rayon's default.
    pub threads: Option<usize>,
    pub format: Format,
}

/// Written to `summary.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub task: &'static str,
    pub engine: Engine,
    pub master_seed: u64,
    pub n_items: usize,
    pub n_rows: usize,
    pub files: Vec<String>,
    /// Task-specific aggregates, e.g. the similarity summary.
    pub aggregate: Option<serde_json::Value>,
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// A table that can be written as CSV or as JSON lines.
struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
    json: Vec<serde_json::Value>,
}

impl Table {
    fn new(header: Vec<&'static str>) -> Self {
        Self {
            header,
            rows: Vec::new(),
            json: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>, json: impl Serialize) -> Result<()> {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
        self.json.push(serde_json::to_value(json).map_err(|e| Error::Io(e.to_string()))?);
        Ok(())
    }

    fn write(&self, path: &Path, format: Format) -> Result<()> {
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
                w.write_record(&self.header).map_err(|e| Error::Io(e.to_string()))?;
                for r in &self.rows {
                    w.write_record(r).map_err(|e| Error::Io(e.to_string()))?;
                }
                w.flush()?;
            }
            Format::Jsonl => write_jsonl(path, &self.json)?,
        }
        Ok(())
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::Io(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Trajectory rows; `ic_index` is the grid position of the start point.
pub const TRAJECTORY_COLUMNS: [&str; 15] = [
    "trajectory", "ic_index", "step", "m", "nx", "ny", "nz", "vxx", "vxy", "vxz", "vyy", "vyz", "vzz", "master_seed",
    "engine",
];

fn trajectory_table(records: &[TrajectoryRecord], realizations: usize) -> Result<Table> {
    let mut t = Table::new(TRAJECTORY_COLUMNS.to_vec());
    for rec in records {
        let ic_index = rec.trajectory as usize / realizations;
        for row in &rec.rows {
            let v = row.v.map(|v| v.map(Some)).unwrap_or([None; 6]);
            let mut cells = vec![rec.trajectory.to_string(), ic_index.to_string(), row.step.to_string(), fmt_opt(row.m)];
            cells.extend(row.n.iter().map(|x| fmt_f64(*x)));
            cells.extend(v.iter().map(|x| fmt_opt(*x)));
            cells.push(rec.master_seed.to_string());
            cells.push(rec.engine.to_string());
            t.push(
                cells,
                serde_json::json!({
                    "trajectory": rec.trajectory,
                    "ic_index": ic_index,
                    "step": row.step,
                    "m": row.m,
                    "n": row.n,
                    "v": row.v,
                    "master_seed": rec.master_seed,
                    "engine": rec.engine,
                }),
            )?;
        }
    }
    Ok(t)
}

fn score_table(cells: &[CellScore]) -> Result<Table> {
    let mut t = Table::new(vec![
        "trajectory", "theta0", "phi0", "s", "cor_theta", "cor_phi", "min_norm_sq", "flag",
    ]);
    for c in cells {
        let (theta, phi) = to_angles(&c.ic.into());
        let sc = c.score;
        t.push(
            vec![
                c.trajectory.to_string(),
                fmt_f64(theta),
                fmt_f64(phi),
                fmt_opt(sc.map(|s| s.s)),
                fmt_opt(sc.map(|s| s.cor_theta)),
                fmt_opt(sc.map(|s| s.cor_phi)),
                fmt_opt(sc.map(|s| s.min_norm_sq)),
                c.flag.clone().unwrap_or_default(),
            ],
            c,
        )?;
    }
    Ok(t)
}

/// Runs one task from `config` and writes its outputs under `opts.out_dir`.
///
/// Nothing is written unless the whole computation succeeds.
pub fn run_ensemble(config: &Config, opts: &RunOptions) -> Result<RunSummary> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.threads {
        if n == 0 {
            return Err(Error::param("--threads must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::param(e.to_string()))?;
    let started = Instant::now();
    let (summary, tables) = pool.install(|| compute(config, opts))?;

    fs::create_dir_all(&opts.out_dir)?;
    for (name, table) in &tables {
        table.write(&opts.out_dir.join(name), opts.format)?;
    }
    write_jsonl(&opts.out_dir.join("summary.jsonl"), std::slice::from_ref(&summary))?;
    let timings = serde_json::json!({
        "task": summary.task,
        "threads": pool.current_num_threads(),
        "wall_seconds": started.elapsed().as_secs_f64(),
    });
    fs::write(opts.out_dir.join("timings.json"), format!("{timings}\n"))?;
    Ok(summary)
}

fn compute(config: &Config, opts: &RunOptions) -> Result<(RunSummary, Vec<(String, Table)>)> {
    let engine = opts.engine.unwrap_or(config.run.engine);
    let seed = opts.seed.unwrap_or(config.run.seed);
    let streams = Streams::new(seed);
    let params = config.protocol_params()?;
    let ext = opts.format.extension();
    let file = |stem: &str| format!("{stem}.{ext}");
    let realizations = config.run.n_trajectories;
    let decoherence = config.atomlight.decoherence;
    let mut aggregate = None;

    let (n_items, tables): (usize, Vec<(String, Table)>) = match opts.task {
        Task::Trajectory => {
            let ic = config.initial_conditions()[0];
            let recs = phase_portrait(engine, &params, &[ic], realizations, decoherence, &streams)?;
            (recs.len(), vec![(file("trajectory"), trajectory_table(&recs, realizations)?)])
        }
        Task::Portrait | Task::Similarity => {
            let grid = config.initial_conditions();
            let recs = phase_portrait(engine, &params, &grid, realizations, decoherence, &streams)?;
            let mut tables = Vec::new();
            if opts.task == Task::Portrait {
                tables.push((file("portrait"), trajectory_table(&recs, realizations)?));
            }
            let cells: Vec<CellScore> = recs.iter().map(score_record).collect::<Result<_>>()?;
            aggregate = Some(to_json(&summarize_scores(&cells)?)?);
            tables.push((file("similarity"), score_table(&cells)?));
            (recs.len(), tables)
        }
        Task::Lyapunov => {
            let ks = match config.ks() {
                ks if ks.is_empty() => vec![params.k],
                ks => ks,
            };
            let pts = lyapunov_sweep(
                engine,
                &params,
                &ks,
                &config.lyapunov_grid(),
                &config.lyapunov_options(engine),
                decoherence,
                &streams,
            )?;
            let mut t = Table::new(vec!["k", "engine", "N", "lambda", "variance", "std_error", "n_failed"]);
            for p in &pts {
                let e = &p.estimate;
                t.push(
                    vec![
                        fmt_f64(p.k),
                        p.engine.to_string(),
                        p.n.map(|n| n.to_string()).unwrap_or_default(),
                        fmt_f64(e.lambda_largest),
                        fmt_f64(e.variance),
                        fmt_f64(e.std_error),
                        e.n_failed.to_string(),
                    ],
                    serde_json::json!({
                        "k": p.k, "engine": p.engine, "N": p.n, "lambda": e.lambda_largest,
                        "variance": e.variance, "std_error": e.std_error, "n_failed": e.n_failed,
                    }),
                )?;
            }
            (pts.len(), vec![(file("lyapunov"), t)])
        }
        Task::Averaged => {
            let ic = config.initial_conditions()[0];
            let rows = averaged_comparison(&params, ic, realizations, &streams)?;
            let mut t = Table::new(vec![
                "step", "trace_distance", "map_nx", "map_ny", "map_nz", "mc_nx", "mc_ny", "mc_nz",
            ]);
            for r in &rows {
                let mut cells = vec![r.step.to_string(), fmt_f64(r.trace_distance)];
                cells.extend(r.bloch_map.iter().chain(&r.bloch_monte_carlo).map(|x| fmt_f64(*x)));
                t.push(cells, r)?;
            }
            (realizations, vec![(file("averaged"), t)])
        }
        Task::Sme => {
            let ic = config.initial_conditions()[0];
            let al = config.atomlight_params()?;
            let recs: Vec<TrajectoryRecord> = (0..realizations as u64)
                .map(|t| sme_trajectory(&params, &al, ic, &streams, t))
                .collect::<Result<_>>()?;
            (recs.len(), vec![(file("sme"), trajectory_table(&recs, realizations)?)])
        }
        Task::SweepSigma => {
            let ratios = nonempty("sweep.sigma_over_sqrtJ", &config.sweep.sigma_over_sqrt_j)?;
            let grid = config.initial_conditions();
            let pts = sigma_sweep(engine, &params, ratios, &grid, realizations, &streams)?;
            let mut t = Table::new(vec!["sigma_over_sqrtJ", "mean_dmax", "se_over_ics", "realization_spread"]);
            for p in &pts {
                t.push(
                    vec![
                        fmt_f64(p.sigma_over_sqrt_j),
                        fmt_f64(p.mean_dmax),
                        fmt_f64(p.se_over_ics),
                        fmt_f64(p.realization_spread),
                    ],
                    p,
                )?;
            }
            (pts.len(), vec![(file("sweep_sigma"), t)])
        }
        Task::SweepOd => {
            if engine != Engine::Hp {
                return Err(Error::EngineMismatch(format!("sweep-od runs on the hp engine (got {engine})")));
            }
            let ods = nonempty("sweep.od", &config.sweep.od)?;
            let grid = config.initial_conditions();
            let pts = od_sweep(&params, ods, config.atomlight.gamma_s, &grid, &streams)?;
            let mut t = Table::new(vec![
                "od", "sigma0_over_A", "gamma_s_T", "mean_s", "median_s", "n_scored", "n_flagged",
            ]);
            for p in &pts {
                t.push(
                    vec![
                        fmt_f64(p.od),
                        fmt_f64(p.sigma0_over_a),
                        fmt_f64(p.gamma_s_t),
                        fmt_f64(p.summary.mean_s),
                        fmt_f64(p.summary.median_s),
                        p.summary.n_scored.to_string(),
                        p.summary.n_flagged.to_string(),
                    ],
                    p,
                )?;
            }
            (pts.len(), vec![(file("sweep_od"), t)])
        }
    };
    debug_assert!(tables.iter().any(|(name, _)| name.starts_with(&opts.task.stem()) || opts.task == Task::Portrait));
    let summary = RunSummary {
        task: opts.task.name(),
        engine,
        master_seed: seed,
        n_items,
        n_rows: tables.iter().map(|(_, t)| t.rows.len()).sum(),
        files: tables.iter().map(|(name, _)| name.clone()).collect(),
        aggregate,
    };
    Ok((summary, tables))
}

fn nonempty<'a>(path: &str, values: &'a [f64]) -> Result<&'a [f64]> {
    if values.is_empty() {
        Err(Error::config(path, "this task needs at least one value"))
    } else {
        Ok(values)
    }
}

fn to_json(value: &impl Serialize) -> Result<serde_json::Value> {
    serde_json::to_value(value).map_err(|e| Error::Io(e.to_string()))
}
