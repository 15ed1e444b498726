//! The `funcnet` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use funcnet_core::data::ResponseKind;
use funcnet_core::simulate::simulate;

use crate::benchmark::{run_benchmark, threads_from_env};
use crate::config::{Overrides, RunConfig};
use crate::dataset::{read_dataset, save_dataset, write_dataset};
use crate::error::{Error, Result};
use crate::model_file;
use crate::models::fit_model;

#[derive(Debug, Parser)]
#[command(
    name = "funcnet",
    version,
    about = "Functional neural networks for scalar-on-function regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset from a scenario and write it as CSV.
    Simulate(Common),
    /// Fit a model to a CSV dataset, save it and print the fit report as JSON.
    Fit {
        /// Dataset in the funcnet CSV layout.
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a replicated simulation study.
    Benchmark(Common),
    /// Predict with a saved model.
    Predict {
        /// Model file written by `funcnet fit`.
        model_file: PathBuf,
        /// Dataset in the funcnet CSV layout.
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file, or output directory for `benchmark`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    /// Model spec such as `fdnn`, `fbnn(4,4)` or `fdnn:no-es`; a comma list for `benchmark`.
    #[arg(long)]
    model: Option<String>,
    /// Scenario label such as `linear` or `logistic`; a comma list for `benchmark`.
    #[arg(long)]
    scenario: Option<String>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        c.apply(&Overrides {
            seed: self.seed,
            reps: self.reps,
            out: self.out.clone(),
            model: self.model.clone(),
            scenario: self.scenario.clone(),
        });
        Ok(c)
    }
}

/// Runs the command line and returns the process exit code:
/// 0 on success, 1 on a domain or I/O error, 2 on a usage or configuration error.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render().ansi());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn write_out(out: &mut dyn Write, text: &[u8]) -> Result<()> {
    out.write_all(text).map_err(|e| Error::io("<stdout>", e))
}

fn dispatch(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<u8> {
    match command {
        Command::Simulate(common) => {
            let cfg = common.config()?;
            let scenario = cfg.scenario()?;
            let data = simulate(&scenario, cfg.data.n, cfg.data.m, &cfg.matern()?, cfg.seed)?;
            match &cfg.out {
                Some(p) => save_dataset(p, &data)?,
                None => {
                    let mut buf = Vec::new();
                    write_dataset(&mut buf, &data).map_err(|e| Error::io("<stdout>", e))?;
                    write_out(stdout, &buf)?;
                }
            }
            let _ = writeln!(
                stderr,
                "simulated n={} m={} scenario={} ({}, noise_sd={}) seed={}",
                data.len(),
                data.grid().len(),
                scenario.label(),
                scenario.response_kind,
                scenario.noise_sd,
                cfg.seed
            );
            Ok(0)
        }
        Command::Fit { data, common } => {
            let cfg = common.config()?;
            let out = cfg
                .out
                .clone()
                .ok_or_else(|| Error::Config("fit needs --out <model file>".into()))?;
            let spec = cfg.model_spec()?;
            let protocol = cfg.protocol()?;
            let loaded = read_dataset(&data, cfg.data.response)?;
            if let Some((a, b)) = loaded.rescaled_from {
                let _ = writeln!(stderr, "note: grid [{a}, {b}] mapped onto [0, 1]");
            }
            let (saved, summary) = fit_model(&spec, &protocol, &loaded.data, cfg.seed)?;
            model_file::save(&out, &saved)?;
            let json = serde_json::to_string_pretty(&summary).expect("fit summaries serialize");
            write_out(stdout, json.as_bytes())?;
            write_out(stdout, b"\n")?;
            let _ = writeln!(
                stderr,
                "fitted {} in {:.1}s; model written to {}",
                summary.model,
                summary.wall_time_secs,
                out.display()
            );
            Ok(0)
        }
        Command::Benchmark(common) => {
            let cfg = common.config()?;
            let plan = cfg.benchmark_plan()?;
            let start = std::time::Instant::now();
            let report = run_benchmark(&plan, threads_from_env()?)?;
            if let Some(dir) = &cfg.out {
                report.write_to(dir)?;
            }
            write_out(stdout, report.summary_text().as_bytes())?;
            for c in report.cells.iter() {
                if let Err(e) = &c.outcome {
                    let _ = writeln!(stderr, "cell {} / {} / rep {} failed: {e}", c.scenario, c.model, c.rep);
                }
            }
            let _ = writeln!(
                stderr,
                "{} cells ({} failed) in {:.1}s",
                report.cells.len(),
                report.failed_cells(),
                start.elapsed().as_secs_f64()
            );
            Ok(if report.all_ok() { 0 } else { 1 })
        }
        Command::Predict {
            model_file: model_path,
            data,
            common,
        } => {
            let cfg = common.config()?;
            let saved = model_file::load(&model_path)?;
            let loaded = read_dataset(&data, cfg.data.response)?;
            let yhat = saved.predict(&loaded.data)?;
            let text = predictions_csv(&yhat, saved.response_kind);
            match &cfg.out {
                Some(p) => write_file(p, &text)?,
                None => write_out(stdout, text.as_bytes())?,
            }
            Ok(0)
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `prediction` per row, or `probability,label` for binary models.
pub fn predictions_csv(yhat: &[f64], kind: ResponseKind) -> String {
    let mut out = String::new();
    match kind {
        ResponseKind::Continuous => {
            out.push_str("prediction\n");
            for p in yhat {
                out.push_str(&format!("{p:.16e}\n"));
            }
        }
        ResponseKind::Binary => {
            out.push_str("probability,label\n");
            for p in yhat {
                out.push_str(&format!("{p:.16e},{}\n", u8::from(*p >= 0.5)));
            }
        }
    }
    out
}
