//! `autolabel` command line. Corpus commands read and write files inside
//! each sequence directory; names passed to `--tracks`, `--out` and
//! `--inputs` are relative to that directory.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use autolabel::io::config::PipelineConfig;
use autolabel::tracking::TrackMode;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "autolabel", version, about = "Offline track-centric auto-labeling for LiDAR detections")]
struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides both the simulator and the augmentation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    None,
    Forward,
    Bidirectional,
}

impl From<Mode> for TrackMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::None => TrackMode::None,
            Mode::Forward => TrackMode::Forward,
            Mode::Bidirectional => TrackMode::Bidirectional,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
    Svg,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and print its scorecard.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sequences: Option<u32>,
        #[arg(long)]
        frames: Option<u32>,
    },
    /// Track detections of every sequence.
    Track {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long, default_value = "tracks.jsonl")]
        out: String,
    },
    /// Drop track entries whose boxes hold no points.
    Postprocess {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "tracks.jsonl")]
        tracks: String,
        #[arg(long, default_value = "tracks_clean.jsonl")]
        out: String,
    },
    /// Track-level GT assignment with per-proposal targets.
    Assign {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "tracks.jsonl")]
        tracks: String,
        #[arg(long, default_value = "assignments.jsonl")]
        out: String,
    },
    /// Serialize track samples, optionally with augmented copies.
    BuildDataset {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "tracks.jsonl")]
        tracks: String,
        /// Output container path.
        #[arg(long)]
        out: PathBuf,
        /// Augmented copies per sample in addition to the original.
        #[arg(long, default_value_t = 0)]
        augment: u32,
    },
    /// Refine box poses of rigid tracks by shape registration.
    Tco {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "tracks.jsonl")]
        tracks: String,
        #[arg(long, default_value = "tracks_tco.jsonl")]
        out: String,
    },
    /// Merge track files of test-time-augmentation passes that are already
    /// mapped back to the original frame.
    TtaMerge {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long = "inputs", required = true, num_args = 1..)]
        inputs: Vec<String>,
        #[arg(long, default_value = "tracks_tta.jsonl")]
        out: String,
    },
    /// Evaluate tracks against GT over the whole corpus.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "tracks.jsonl")]
        tracks: String,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Summarize a corpus file (.lpc, .lts, .jsonl or .toml).
    Inspect { file: PathBuf },
    /// Write the life-cycle SVG plot.
    Plot {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "tracks.jsonl")]
        tracks: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> autolabel::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.sim.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> autolabel::Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Simulate { out, sequences, frames } => {
            if let Some(n) = sequences {
                cfg.sim.num_sequences = n;
            }
            if let Some(n) = frames {
                cfg.sim.frames_per_sequence = n;
            }
            commands::simulate(&cfg, &out)
        }
        Command::Track { corpus, mode, out } => {
            if let Some(m) = mode {
                cfg.postprocess.mode = m.into();
            }
            commands::track(&cfg, &corpus, &out)
        }
        Command::Postprocess { corpus, tracks, out } => commands::postprocess(&corpus, &tracks, &out),
        Command::Assign { corpus, tracks, out } => commands::assign(&cfg, &corpus, &tracks, &out),
        Command::BuildDataset { corpus, tracks, out, augment } => {
            commands::build_dataset(&cfg, &corpus, &tracks, &out, augment)
        }
        Command::Tco { corpus, tracks, out } => commands::tco(&cfg, &corpus, &tracks, &out),
        Command::TtaMerge { corpus, inputs, out } => commands::tta_merge(&corpus, &inputs, &out),
        Command::Eval { corpus, tracks, format } => {
            let report = commands::eval(&cfg, &corpus, &tracks)?;
            let text = match format {
                Format::Text => report.to_text(),
                Format::Csv => report.to_csv(),
                Format::Json => commands::json_line(&report),
                Format::Svg => autolabel::evaluation::life_cycle_svg(&report.life_cycle),
            };
            print!("{text}");
            Ok(())
        }
        Command::Inspect { file } => commands::inspect(&cfg, &file),
        Command::Plot { corpus, tracks, out } => {
            let report = commands::eval(&cfg, &corpus, &tracks)?;
            let svg = autolabel::evaluation::life_cycle_svg(&report.life_cycle);
            std::fs::write(&out, svg).map_err(|e| autolabel::Error::Io { path: out.display().to_string(), source: e })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
