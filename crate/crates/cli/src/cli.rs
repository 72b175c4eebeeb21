use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use esv_core::index::LabelSource;
use serde_json::json;

use crate::config::PipelineConfig;
use crate::error::ForgeError;
use crate::stages::{self, run_stage, StageFailure, StageReport};
use crate::synth;

#[derive(Debug, Parser)]
#[command(name = "esv-forge", version, about = "Surgical video curation, timeline segmentation and search pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags that override the config file.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// TOML config; relative paths inside it resolve against its directory.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub frames: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub videos: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    pub annotations: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    pub clips: Option<PathBuf>,
    /// Temporal-head parameter file; repeat for an ensemble.
    #[arg(long = "params", global = true, value_name = "FILE")]
    pub params: Vec<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub static_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[arg(long, global = true)]
    pub fps: Option<f64>,
    #[arg(long, global = true)]
    pub smoothing_k: Option<usize>,
    #[arg(long, global = true)]
    pub ensemble: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_source)]
    pub source: Option<LabelSource>,
    #[arg(long, global = true, value_name = "ADDR")]
    pub bind: Option<String>,
    /// Cut clips and export frames with the external transcoder.
    #[arg(long, global = true)]
    pub transcode: bool,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

fn parse_source(s: &str) -> Result<LabelSource, String> {
    match s {
        "annotation" => Ok(LabelSource::Annotation),
        "prediction" => Ok(LabelSource::Prediction),
        _ => Err("expected `annotation` or `prediction`".into()),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse the annotation export and assemble per-surgery timelines.
    Import,
    /// Crop, fingerprint and select keyframes from the decoded frames.
    Keyframes,
    /// Write frames, labels CSV and cutout plan.
    Emit,
    /// Run the temporal-head ensemble and correct the predictions.
    Infer,
    /// Score predictions against the emitted labels.
    Evaluate {
        #[arg(long, value_name = "FILE")]
        predictions: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        targets: Option<PathBuf>,
    },
    /// Build and persist the segment index.
    Index,
    /// Serve the index over HTTP until interrupted.
    Serve {
        #[arg(long, value_name = "FILE")]
        index: Option<PathBuf>,
    },
    /// import, keyframes, emit, infer, evaluate and index in order.
    All,
    /// Write a synthetic fixture (frames, clip manifest, annotation export, config).
    Synth {
        #[arg(value_name = "DIR")]
        dir: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Import => "import",
            Command::Keyframes => "keyframes",
            Command::Emit => "emit",
            Command::Infer => "infer",
            Command::Evaluate { .. } => "evaluate",
            Command::Index => "index",
            Command::Serve { .. } => "serve",
            Command::All => "all",
            Command::Synth { .. } => "synth",
        }
    }
}

impl Overrides {
    /// Config file (or defaults) with every given flag applied on top.
    pub fn resolve(&self) -> Result<PipelineConfig, ForgeError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        let p = &mut cfg.paths;
        for (slot, flag) in [
            (&mut p.output, &self.output),
            (&mut p.frames, &self.frames),
            (&mut p.videos, &self.videos),
            (&mut p.annotations, &self.annotations),
            (&mut p.clips, &self.clips),
            (&mut p.static_dir, &self.static_dir),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        if !self.params.is_empty() {
            p.params.clone_from(&self.params);
        }
        if let Some(v) = self.threshold {
            cfg.keyframes.threshold = v;
        }
        if let Some(v) = self.fps {
            cfg.keyframes.fps = v;
        }
        if let Some(v) = self.smoothing_k {
            cfg.inference.smoothing_k = v;
        }
        if let Some(v) = self.ensemble {
            cfg.inference.ensemble = v;
        }
        if let Some(v) = self.seed {
            cfg.inference.seed = v;
        }
        if let Some(v) = self.source {
            cfg.index.source = v;
        }
        if let Some(v) = &self.bind {
            cfg.service.bind.clone_from(v);
        }
        if self.transcode {
            cfg.transcode.enabled = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn init_logging(quiet: bool) {
    let level = if quiet { tracing::Level::WARN } else { tracing::Level::INFO };
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(false)
        .with_target(false)
        .with_max_level(level)
        .try_init();
}

/// Runs one command and returns its stage reports.
pub fn execute(cli: &Cli) -> Result<Vec<StageReport>, StageFailure> {
    let name = cli.command.name();
    let at = |error| StageFailure { stage: name, error };
    if let Command::Synth { dir } = &cli.command {
        let dir = dir.clone();
        let seed = cli.overrides.seed.unwrap_or(1);
        return run_stage("synth", move || {
            std::fs::create_dir_all(&dir)?;
            Ok(json!(synth::write_fixture(&dir, seed)?))
        })
        .map(|r| vec![r]);
    }
    let cfg = cli.overrides.resolve().map_err(at)?;
    let one = |r: Result<StageReport, StageFailure>| r.map(|r| vec![r]);
    match &cli.command {
        Command::Import => one(run_stage(name, || stages::import(&cfg))),
        Command::Keyframes => one(run_stage(name, || stages::keyframes(&cfg))),
        Command::Emit => one(run_stage(name, || stages::emit(&cfg))),
        Command::Infer => one(run_stage(name, || stages::infer(&cfg))),
        Command::Evaluate { predictions, targets } => {
            one(run_stage(name, || stages::evaluate(&cfg, predictions.as_deref(), targets.as_deref())))
        }
        Command::Index => one(run_stage(name, || stages::index(&cfg))),
        Command::Serve { index } => one(run_stage(name, || stages::serve(&cfg, index.as_deref()))),
        Command::All => stages::all(&cfg),
        Command::Synth { .. } => unreachable!("handled above"),
    }
}

/// Full command-line entry: parses `args`, runs, prints a one-line JSON
/// summary (stdout on success, stderr on failure) and returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    init_logging(cli.overrides.quiet);
    let command = cli.command.name();
    match execute(&cli) {
        Ok(stages) => {
            // a closed stdout (e.g. piped into `head`) is not a pipeline failure
            let _ = writeln!(std::io::stdout(), "{}", json!({ "status": "ok", "command": command, "stages": stages }));
            0
        }
        Err(StageFailure { stage, error }) => {
            let code = error.exit_code();
            let _ = writeln!(
                std::io::stderr(),
                "{}",
                json!({
                    "status": "error",
                    "command": command,
                    "stage": stage,
                    "kind": error.kind(),
                    "message": error.to_string(),
                    "exit_code": code,
                })
            );
            code
        }
    }
}
