//! Replicated simulation studies.
//!
//! Every `(scenario, model, rep)` cell regenerates its own dataset from seed
//! `base_seed + rep`, so cells can run in any order or in parallel and still
//! give the same numbers.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use funcnet_core::data::ResponseKind;
use funcnet_core::simulate::{simulate, MaternParams, Scenario, ScenarioKind};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{fit_model, ModelSpec, Protocol};

/// Environment variable holding the number of worker threads.
pub const THREADS_ENV: &str = "FUNCNET_THREADS";

/// Parses scenario labels: `linear`, `single-index`, … for continuous
/// responses and `logistic`, `logistic-cam`, … for binary ones.
pub fn parse_scenario(label: &str) -> Result<Scenario> {
    let key = label.trim().to_ascii_lowercase();
    let invalid = || {
        Error::Config(format!(
            "unknown scenario '{label}' (valid: {}; prefix 'logistic-' for binary responses, or 'logistic' alone)",
            ScenarioKind::ALL.map(|k| k.name()).join(", ")
        ))
    };
    if key == "logistic" {
        return Ok(Scenario::binary(ScenarioKind::Linear));
    }
    if let Some(rest) = key.strip_prefix("logistic-") {
        let kind = ScenarioKind::from_str(rest).map_err(|_| invalid())?;
        return Ok(Scenario::binary(kind));
    }
    let kind = ScenarioKind::from_str(&key).map_err(|_| invalid())?;
    Ok(Scenario::continuous(kind))
}

/// What to run.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPlan {
    pub scenarios: Vec<Scenario>,
    pub models: Vec<ModelSpec>,
    pub reps: usize,
    pub base_seed: u64,
    pub n: usize,
    pub m: usize,
    pub matern: MaternParams,
    pub protocol: Protocol,
}

/// Test-set metrics of one successful cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMetrics {
    pub rmse: f64,
    pub classification_error: Option<f64>,
    pub mean_log_likelihood: Option<f64>,
    pub epochs_run: Option<usize>,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub scenario: String,
    pub model: String,
    pub rep: usize,
    pub seed: u64,
    pub outcome: std::result::Result<CellMetrics, String>,
    /// Seconds; reported but never written to the CSV files.
    pub wall_time_secs: f64,
}

/// Mean and standard error of one metric over the successful replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    /// `sd / √n` with the `n − 1` sample standard deviation; zero for one value.
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, se })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub scenario: String,
    pub model: String,
    pub response_kind: ResponseKind,
    pub ok: usize,
    pub failed: usize,
    pub rmse: Option<MeanSe>,
    pub classification_error: Option<MeanSe>,
    pub mean_log_likelihood: Option<MeanSe>,
}

impl Aggregate {
    /// RMSE for continuous scenarios, classification error for binary ones.
    pub fn headline(&self) -> Option<MeanSe> {
        match self.response_kind {
            ResponseKind::Continuous => self.rmse,
            ResponseKind::Binary => self.classification_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub scenarios: Vec<String>,
    pub models: Vec<String>,
    /// Ordered by scenario, then model, then replication.
    pub cells: Vec<Cell>,
    /// Ordered by scenario, then model.
    pub aggregates: Vec<Aggregate>,
}

fn run_cell(plan: &BenchmarkPlan, scenario: &Scenario, model: &ModelSpec, rep: usize) -> Cell {
    let seed = plan.base_seed.wrapping_add(rep as u64);
    let start = std::time::Instant::now();
    let outcome = simulate(scenario, plan.n, plan.m, &plan.matern, seed)
        .map_err(Error::from)
        .and_then(|data| fit_model(model, &plan.protocol, &data, seed))
        .map(|(_, s)| {
            let t = s.test.expect("the standard split always has a test set");
            CellMetrics {
                rmse: t.rmse,
                classification_error: t.classification_error,
                mean_log_likelihood: t.mean_log_likelihood,
                epochs_run: s.epochs_run,
                best_epoch: s.best_epoch,
            }
        })
        .map_err(|e| e.to_string());
    Cell {
        scenario: scenario.label(),
        model: model.to_string(),
        rep,
        seed,
        outcome,
        wall_time_secs: start.elapsed().as_secs_f64(),
    }
}

/// Thread count from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got '{v}'"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs every cell on `threads` workers (all cores when `None`) and aggregates.
/// Cell failures are recorded in the report, never propagated.
pub fn run_benchmark(plan: &BenchmarkPlan, threads: Option<usize>) -> Result<BenchmarkReport> {
    if plan.reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    if plan.scenarios.is_empty() || plan.models.is_empty() {
        return Err(Error::Config(
            "a benchmark needs at least one scenario and one model".into(),
        ));
    }
    let jobs: Vec<(usize, usize, usize)> = (0..plan.scenarios.len())
        .flat_map(|s| (0..plan.models.len()).flat_map(move |m| (0..plan.reps).map(move |r| (s, m, r))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))?;
    let cells: Vec<Cell> = pool.install(|| {
        jobs.par_iter()
            .map(|&(s, m, r)| run_cell(plan, &plan.scenarios[s], &plan.models[m], r))
            .collect()
    });
    let mut aggregates = Vec::new();
    for (chunk, (s, m)) in cells
        .chunks(plan.reps)
        .zip((0..plan.scenarios.len()).flat_map(|s| (0..plan.models.len()).map(move |m| (s, m))))
    {
        let ok: Vec<&CellMetrics> = chunk.iter().filter_map(|c| c.outcome.as_ref().ok()).collect();
        let collect = |f: &dyn Fn(&CellMetrics) -> Option<f64>| {
            let v: Vec<f64> = ok.iter().filter_map(|c| f(c)).collect();
            MeanSe::of(&v)
        };
        aggregates.push(Aggregate {
            scenario: plan.scenarios[s].label(),
            model: plan.models[m].to_string(),
            response_kind: plan.scenarios[s].response_kind,
            ok: ok.len(),
            failed: chunk.len() - ok.len(),
            rmse: collect(&|c| Some(c.rmse)),
            classification_error: collect(&|c| c.classification_error),
            mean_log_likelihood: collect(&|c| c.mean_log_likelihood),
        });
    }
    Ok(BenchmarkReport {
        scenarios: plan.scenarios.iter().map(|s| s.label()).collect(),
        models: plan.models.iter().map(|m| m.to_string()).collect(),
        cells,
        aggregates,
    })
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn opt_int(v: Option<usize>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl BenchmarkReport {
    pub fn all_ok(&self) -> bool {
        self.cells.iter().all(|c| c.outcome.is_ok())
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }

    pub fn aggregate(&self, scenario: &str, model: &str) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.scenario == scenario && a.model == model)
    }

    /// One row per cell with the test-set metrics.
    pub fn cells_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = [
            "scenario",
            "model",
            "rep",
            "seed",
            "status",
            "rmse",
            "classification_error",
            "mean_log_likelihood",
            "epochs_run",
            "best_epoch",
            "error",
        ];
        w.write_record(header).expect("writing to memory");
        for c in &self.cells {
            let row = match &c.outcome {
                Ok(m) => [
                    c.scenario.clone(),
                    c.model.clone(),
                    c.rep.to_string(),
                    c.seed.to_string(),
                    "ok".into(),
                    num(m.rmse),
                    opt_num(m.classification_error),
                    opt_num(m.mean_log_likelihood),
                    opt_int(m.epochs_run),
                    opt_int(m.best_epoch),
                    String::new(),
                ],
                Err(e) => [
                    c.scenario.clone(),
                    c.model.clone(),
                    c.rep.to_string(),
                    c.seed.to_string(),
                    "failed".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    e.clone(),
                ],
            };
            w.write_record(&row).expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("flushing memory")).expect("CSV is UTF-8")
    }

    /// One row per `(scenario, model)` with means and standard errors.
    pub fn summary_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "scenario",
            "model",
            "ok",
            "failed",
            "rmse_mean",
            "rmse_se",
            "classification_error_mean",
            "classification_error_se",
            "mean_log_likelihood_mean",
            "mean_log_likelihood_se",
        ])
        .expect("writing to memory");
        for a in &self.aggregates {
            let pair = |m: Option<MeanSe>| [opt_num(m.map(|m| m.mean)), opt_num(m.map(|m| m.se))];
            let [rm, rs] = pair(a.rmse);
            let [cm, cs] = pair(a.classification_error);
            let [lm, ls] = pair(a.mean_log_likelihood);
            w.write_record([
                a.scenario.clone(),
                a.model.clone(),
                a.ok.to_string(),
                a.failed.to_string(),
                rm,
                rs,
                cm,
                cs,
                lm,
                ls,
            ])
            .expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("flushing memory")).expect("CSV is UTF-8")
    }

    /// Scenarios down, models across: test RMSE (continuous) or
    /// classification error (binary) as `mean ± se`.
    pub fn summary_text(&self) -> String {
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut head = vec!["scenario".to_string()];
        head.extend(self.models.iter().cloned());
        rows.push(head);
        for s in &self.scenarios {
            let mut row = vec![s.clone()];
            for m in &self.models {
                let a = self.aggregate(s, m).expect("every cell is aggregated");
                row.push(match a.headline() {
                    Some(v) if a.failed == 0 => format!("{:.3} ± {:.3}", v.mean, v.se),
                    Some(v) => format!("{:.3} ± {:.3} ({} failed)", v.mean, v.se, a.failed),
                    None => "failed".into(),
                });
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, w))| {
                    let pad = w - v.chars().count();
                    if c == 0 {
                        format!("{v}{}", " ".repeat(pad))
                    } else {
                        format!("{}{v}", " ".repeat(pad))
                    }
                })
                .collect();
            writeln!(out, "{}", cells.join("  ").trim_end()).unwrap();
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                writeln!(out, "{}", "-".repeat(total)).unwrap();
            }
        }
        out
    }

    /// Writes `cells.csv`, `summary.csv` and `summary.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: String| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e: io::Error| Error::io(p, e))
        };
        put("cells.csv", self.cells_csv())?;
        put("summary.csv", self.summary_csv())?;
        put("summary.txt", self.summary_text())
    }
}
