//! `irdan`: data generation, pretraining, interactive training, evaluation and
//! the stopping-rule study, driven by one TOML experiment file.
//!
//! Exit codes: 0 success, 2 bad config or usage, 3 missing or corrupt data,
//! 4 runtime failure.

mod commands;
mod error;
mod layout;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use irdan::data::{InputKind, PdaTaskSpec};
use irdan::ExperimentConfig;

use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "irdan", version, about = "Interactive residual domain adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment file (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides both the task and the training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Overrides `output_dir`; `IRDAN_OUTPUT_ROOT` still wins.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config).map_err(CliError::config)?;
        if let Some(s) = self.seed {
            cfg.task.seed = s;
            cfg.train.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        cfg.validate().map_err(CliError::config)?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 4 source classes, target {0, 1}, mean offset plus rotation.
    Standard,
    /// Full label space, no shift.
    Control,
    /// Standard label split on tone-burst spectrogram images.
    Image,
}

#[derive(Subcommand)]
enum Command {
    /// Print a preset experiment file.
    InitConfig {
        #[arg(long, value_enum, default_value = "standard")]
        preset: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate source, target and eval-target datasets plus a manifest.
    GenData(ConfigArgs),
    /// Contrastively pretrain both feature extractors.
    Pretrain(ConfigArgs),
    /// Pretrain (unless a matching pretrained checkpoint exists), then train interactively.
    Train(ConfigArgs),
    /// Score a checkpoint on a labeled dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Enables hash compatibility warnings.
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// Also write the metrics CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare max-reward and min-loss model selection over several seeds.
    CompareStopping {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

fn preset(p: Preset, seed: u64) -> ExperimentConfig {
    let task = match p {
        Preset::Standard => PdaTaskSpec::standard_shift(seed),
        Preset::Control => PdaTaskSpec::control(seed),
        Preset::Image => PdaTaskSpec {
            input_kind: InputKind::Image {
                signal_len: 1024,
                window: 64,
                hop: 16,
            },
            samples_per_class: 50,
            shift: irdan::data::Shift {
                mean_offset: vec![0.1, 0.2],
                rotation_angle: 0.5,
                scale: 0.8,
                noise_sigma: 0.05,
            },
            ..PdaTaskSpec::standard_shift(seed)
        },
    };
    ExperimentConfig::for_task(task)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::InitConfig { preset: p, seed, out } => {
            let text = preset(p, seed).to_toml_string()?;
            match out {
                Some(path) => layout::write_file(&path, text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::GenData(a) => commands::gen_data(&a.load()?),
        Command::Pretrain(a) => commands::pretrain(&a.load()?),
        Command::Train(a) => commands::train(&a.load()?),
        Command::Eval {
            checkpoint,
            data,
            config,
            out,
        } => {
            let cfg = match config {
                Some(p) => Some(ExperimentConfig::load(p).map_err(CliError::config)?),
                None => None,
            };
            commands::eval(&checkpoint, &data, cfg.as_ref(), out.as_deref())
        }
        Command::CompareStopping { config, seeds } => commands::compare_stopping(&config.load()?, seeds),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("irdan: {e}");
            e.exit_code()
        }
    }
}
