use clap::{Args, Parser, Subcommand, ValueEnum};
use pairact_core::eval::{DataKind, ModelKind};
use pairact_core::pipeline::{self, Experiment, PipelineConfig, PipelineError};
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

/// Pair activity recognition pipeline.
#[derive(Debug, Parser)]
#[command(name = "pairact", version)]
struct Cli {
    /// JSON configuration file; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that take precedence over the configuration file.
#[derive(Debug, Args)]
struct Overrides {
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    raw_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    datasets_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoints_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    reports_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    window_length: Option<usize>,
    #[arg(long, global = true)]
    window_stride: Option<usize>,
    #[arg(long, global = true)]
    transition_margin_seconds: Option<f64>,
    #[arg(long, global = true)]
    fps: Option<f64>,
    /// Epochs for every training stage.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    max_train_samples: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Prune, normalize and window raw recordings.
    Preprocess,
    /// Build the grouped dataset from single-user windows.
    Synthesize,
    /// Write synthetic raw recordings.
    GenSynthetic {
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        pair_recordings: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train one model per leave-one-subject-out fold.
    Train {
        model: Model,
        #[arg(long)]
        data: Data,
    },
    /// Evaluate trained fold models.
    Evaluate {
        #[command(subcommand)]
        experiment: EvalCommand,
    },
    /// Summarize all reports into the experiment grid.
    Report,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Test each fold model on its held-out subject.
    Loso {
        #[arg(long)]
        model: Model,
        #[arg(long)]
        data: Data,
    },
    /// Test grouped-trained fold models on the pair dataset.
    Cross {
        #[arg(long)]
        model: Model,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Model {
    Lstm,
    Vae,
}

impl From<Model> for ModelKind {
    fn from(m: Model) -> Self {
        match m {
            Model::Lstm => ModelKind::Lstm,
            Model::Vae => ModelKind::Vae,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Data {
    Grouped,
    Pair,
}

impl From<Data> for DataKind {
    fn from(d: Data) -> Self {
        match d {
            Data::Grouped => DataKind::Grouped,
            Data::Pair => DataKind::Pair,
        }
    }
}

fn apply_overrides(cfg: &mut PipelineConfig, o: &Overrides) {
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = &o.raw_dir {
        cfg.paths.raw = v.clone();
    }
    if let Some(v) = &o.datasets_dir {
        cfg.paths.datasets = v.clone();
    }
    if let Some(v) = &o.checkpoints_dir {
        cfg.paths.checkpoints = v.clone();
    }
    if let Some(v) = &o.reports_dir {
        cfg.paths.reports = v.clone();
    }
    if let Some(v) = o.window_length {
        cfg.preprocess.window_length = v;
    }
    if let Some(v) = o.window_stride {
        cfg.preprocess.window_stride = v;
    }
    if let Some(v) = o.transition_margin_seconds {
        cfg.preprocess.transition_margin_seconds = v;
    }
    if let Some(v) = o.fps {
        cfg.preprocess.fps = v;
    }
    let m = &mut cfg.model;
    for t in [&mut m.lstm_train, &mut m.vae_train, &mut m.head_train] {
        if let Some(v) = o.epochs {
            t.epochs = v;
        }
        if let Some(v) = o.batch_size {
            t.batch_size = v;
        }
    }
    if let Some(v) = o.max_train_samples {
        m.max_train_samples = Some(v);
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("summaries serialize"));
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    apply_overrides(&mut cfg, &cli.overrides);
    match cli.command {
        Command::Preprocess => print_json(&pipeline::cmd_preprocess(&cfg)?),
        Command::Synthesize => print_json(&pipeline::cmd_synthesize(&cfg)?),
        Command::GenSynthetic {
            subjects,
            frames,
            pair_recordings,
            noise,
        } => {
            let s = &mut cfg.synthetic;
            if let Some(v) = subjects {
                s.subjects = v;
            }
            if let Some(v) = frames {
                s.frames = v;
            }
            if let Some(v) = pair_recordings {
                s.pair_recordings = v;
            }
            if let Some(v) = noise {
                s.noise = v;
            }
            print_json(&pipeline::cmd_gen_synthetic(&cfg)?)
        }
        Command::Train { model, data } => print_json(&pipeline::cmd_train(&cfg, model.into(), data.into())?),
        Command::Evaluate { experiment } => {
            let (model, exp) = match experiment {
                EvalCommand::Loso { model, data } => (model, Experiment::Loso(data.into())),
                EvalCommand::Cross { model } => (model, Experiment::Cross),
            };
            let report = pipeline::cmd_evaluate(&cfg, model.into(), exp)?;
            print!("{}", pairact_core::eval::text_table(std::slice::from_ref(&report.aggregate)));
        }
        Command::Report => print!("{}", pipeline::cmd_report(&cfg)?.text),
    }
    Ok(())
}

/// One JSON object on one line, so callers can parse failures.
fn error_line(kind: &str, code: i32, message: &str) -> String {
    json!({ "error": kind, "code": code, "message": message }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PAIRACT_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", error_line("config", 2, first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), e.exit_code(), &e.to_string()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
