//! `clusterfill` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use clusterfill::ingest::{generate_synthetic_case, write_synthetic_case, SynthConfig};
use clusterfill::metrics::RecallMode;
use clusterfill::pipeline::{cluster_dump, evaluate, run_pipeline, Diagnostic, PipelineConfig};
use clusterfill::Error;

#[derive(Parser)]
#[command(name = "clusterfill", version, about = "Flow-free video object segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment every sequence under --input and write masks to --output.
    Run {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Worker threads; results do not depend on it.
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score predicted masks against ground truth.
    Eval {
        /// Directory holding <sequence>/NNNNN.png predictions.
        #[arg(long)]
        pred: PathBuf,
        /// A sequence root, or a directory of them, with gt/ masks.
        #[arg(long)]
        gt: PathBuf,
        /// Report path; a CSV table is written next to it. Defaults to
        /// <pred>/report.json.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write a synthetic sequence with ground truth in the input layout.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON file with generator settings; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        drop_fraction: Option<f64>,
    },
    /// Print the mean-shift assignment of one sequence's proposals as JSON.
    ClusterDump {
        #[arg(long)]
        input: PathBuf,
        /// Write here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

/// Settings shared by the pipeline commands. Flags win over --config.
#[derive(Args)]
struct Overrides {
    /// JSON or TOML pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Proposals kept per frame.
    #[arg(long)]
    k: Option<usize>,
    /// Score-map binarization threshold.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    min_frac: Option<f64>,
    /// Fixed mean-shift bandwidth instead of the derived one.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Donor frames per filled frame.
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_parser = ["frame", "sequence"])]
    recall_mode: Option<String>,
    #[arg(long)]
    exclude_endpoints: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_path(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.tau {
            cfg.tau_binarize = v;
        }
        if let Some(v) = self.min_frac {
            cfg.min_frac = v;
        }
        if self.bandwidth.is_some() {
            cfg.bandwidth = self.bandwidth;
        }
        if let Some(v) = self.p {
            cfg.grabcut.p = v;
        }
        if let Some(v) = self.gamma {
            cfg.grabcut.gamma = v;
        }
        if let Some(m) = &self.recall_mode {
            cfg.recall_mode = m.parse::<RecallMode>()?;
        }
        if self.exclude_endpoints {
            cfg.exclude_endpoints = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A failure carrying its process exit status.
struct Failure {
    status: u8,
    diagnostic: serde_json::Value,
}

fn status_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Ingest { .. } => 3,
        _ => 4,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            status: status_for(&e),
            diagnostic: serde_json::to_value(Diagnostic::from(&e)).expect("serializable"),
        }
    }
}

fn write_json(value: &impl serde::Serialize, path: Option<&Path>) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    match path {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| Error::Write {
            path: p.to_path_buf(),
            reason: e.to_string(),
        }),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run {
            input,
            output,
            jobs,
            overrides,
        } => {
            let cfg = overrides.resolve()?;
            let summary = run_pipeline(&cfg, &input, &output, jobs)?;
            for s in &summary.sequences {
                info!("{}: {} frames, filled {:?}", s.name, s.frames, s.filled_frames);
            }
            if let Some(failed) = summary.failures().next() {
                let d = failed.error.as_ref().expect("failed sequences carry a diagnostic");
                let status = if d.error == "ingest" { 3 } else { 4 };
                let mut diagnostic = serde_json::to_value(d).expect("serializable");
                diagnostic["sequence"] = failed.name.clone().into();
                return Err(Failure { status, diagnostic });
            }
            Ok(())
        }
        Command::Eval {
            pred,
            gt,
            output,
            overrides,
        } => {
            let cfg = overrides.resolve()?;
            let report = evaluate(&cfg, &pred, &gt)?;
            let json = output.unwrap_or_else(|| pred.join("report.json"));
            report.write_json(&json)?;
            report.write_csv(&json.with_extension("csv"))?;
            println!(
                "j_mean {:.6} j_recall {:.6} j_decay {}",
                report.j_mean,
                report.j_recall,
                report.j_decay.map_or("n/a".into(), |d| format!("{d:.6}"))
            );
            Ok(())
        }
        Command::Synth {
            output,
            seed,
            config,
            frames,
            width,
            height,
            drop_fraction,
        } => {
            let mut cfg: SynthConfig = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => SynthConfig::default(),
            };
            cfg.frames = frames.unwrap_or(cfg.frames);
            cfg.width = width.unwrap_or(cfg.width);
            cfg.height = height.unwrap_or(cfg.height);
            cfg.drop_fraction = drop_fraction.unwrap_or(cfg.drop_fraction);
            let case = generate_synthetic_case::<f64>(&cfg, seed)?;
            write_synthetic_case(&case, &cfg, seed, &output)?;
            println!("dropped frames {:?}", case.dropped_frames);
            Ok(())
        }
        Command::ClusterDump {
            input,
            output,
            overrides,
        } => {
            let cfg = overrides.resolve()?;
            let dump = cluster_dump(&cfg, &input)?;
            write_json(&dump, output.as_deref())?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.diagnostic);
            ExitCode::from(f.status)
        }
    }
}
