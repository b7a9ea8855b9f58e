//! `qoe-lens`: estimate per-second video QoE of encrypted video calls from
//! packet traces.

mod config;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qoe_lens::features::FeatureMode;
use qoe_lens::model::Target;

use crate::config::{AppConfig, Overrides};
use crate::stages::SessionArgs;

#[derive(Parser, Debug)]
#[command(name = "qoe-lens", version, about = "Video QoE estimation from encrypted call traffic")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    slot_seconds: Option<f64>,
    /// Payload length (bytes) above which a packet counts as video.
    #[arg(long, global = true)]
    threshold: Option<u32>,
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<FeatureMode>,
    #[arg(long, global = true, value_parser = parse_target)]
    target: Option<Target>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct SessionFlags {
    /// Session metadata JSON (session_id, condition, duration).
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long)]
    session_id: Option<String>,
    /// Session length in seconds; defaults to the last timestamp.
    #[arg(long)]
    duration: Option<f64>,
}

impl From<SessionFlags> for SessionArgs {
    fn from(f: SessionFlags) -> Self {
        SessionArgs {
            meta: f.meta,
            session_id: f.session_id,
            duration: f.duration,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a pcap or packet CSV into a normalized packet log.
    Ingest {
        input: PathBuf,
        #[arg(long)]
        session_id: Option<String>,
        /// Keep one address pair, e.g. `10.0.0.1,10.0.0.2`.
        #[arg(long)]
        ips: Option<String>,
        /// Keep one port pair, e.g. `3478,5004`.
        #[arg(long)]
        ports: Option<String>,
    },
    /// Split a packet log into video and non-video by payload size.
    Classify { packets: PathBuf },
    /// Per-slot traffic features for one session.
    Featurize {
        packets: PathBuf,
        #[command(flatten)]
        session: SessionFlags,
    },
    /// Per-slot ground-truth labels from a capture log and frame scores.
    Label {
        #[arg(long)]
        captures: PathBuf,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[command(flatten)]
        session: SessionFlags,
    },
    /// Generate synthetic sessions (default: the 107-session reference mix).
    Synth {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Also write `trace.pcap` for each session.
        #[arg(long)]
        pcap: bool,
    },
    /// Fit a random forest for `--target` on `--mode` features.
    Train {
        #[arg(long, required = true)]
        features: Vec<PathBuf>,
        #[arg(long, required = true)]
        labels: Vec<PathBuf>,
    },
    /// Apply a trained model to feature rows.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required = true)]
        features: Vec<PathBuf>,
    },
    /// Per-condition error tables from predictions and labels.
    Evaluate {
        #[arg(long, required = true)]
        predictions: Vec<PathBuf>,
        #[arg(long, required = true)]
        labels: Vec<PathBuf>,
        #[arg(long)]
        sessions: PathBuf,
    },
    /// End to end: sessions -> features/labels -> cross-validated models -> report.
    Pipeline {
        /// Synthetic corpus spec (default: the reference mix).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Directory of recorded session folders instead of synthetic data.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Classify { .. } => "classify",
            Command::Featurize { .. } => "featurize",
            Command::Label { .. } => "label",
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Pipeline { .. } => "pipeline",
        }
    }
}

fn parse_mode(s: &str) -> Result<FeatureMode, String> {
    s.parse()
}

fn parse_target(s: &str) -> Result<Target, String> {
    s.parse()
}

fn run(cli: Cli, cfg: &AppConfig) -> anyhow::Result<()> {
    let out = cli.out_dir.as_path();
    match cli.command {
        Command::Ingest {
            input,
            session_id,
            ips,
            ports,
        } => stages::ingest(cfg, out, &input, session_id, ips.as_deref(), ports.as_deref()),
        Command::Classify { packets } => stages::classify(cfg, out, &packets),
        Command::Featurize { packets, session } => stages::featurize(cfg, out, &packets, &session.into()),
        Command::Label {
            captures,
            scores,
            session,
        } => stages::label(cfg, out, &captures, scores.as_deref(), &session.into()),
        Command::Synth { corpus, profile, pcap } => {
            stages::synth(cfg, out, corpus.as_deref(), profile.as_deref(), cli.seed, pcap)
        }
        Command::Train { features, labels } => stages::train(cfg, out, &features, &labels),
        Command::Predict { model, features } => stages::predict(cfg, out, &model, &features),
        Command::Evaluate {
            predictions,
            labels,
            sessions,
        } => stages::evaluate(cfg, out, &predictions, &labels, &sessions),
        Command::Pipeline { corpus, data } => stages::pipeline(cfg, out, corpus.as_deref(), data.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QOE_LENS_LOG", "info")).init();
    let cli = Cli::parse();
    let stage = cli.command.name();
    let flags = Overrides {
        seed: cli.seed,
        slot_seconds: cli.slot_seconds,
        threshold: cli.threshold,
        mode: cli.mode,
        target: cli.target,
    };
    let cfg = match AppConfig::load(cli.config.as_deref(), &flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: stage=config: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run(cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: stage={stage}: {e:#}");
            ExitCode::FAILURE
        }
    }
}
