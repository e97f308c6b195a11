use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod manifest;
mod table;

use config::RunConfig;

/// Fingerprint quality classification and hybrid orientation maps.
#[derive(Parser)]
#[command(name = "fpq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory; created when missing.
    #[arg(long)]
    out: PathBuf,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), self.seed)
    }
}

#[derive(Args)]
struct Input {
    /// CSV with header `path,label`.
    #[arg(long, conflicts_with = "features")]
    manifest: Option<PathBuf>,
    /// Feature table written by `features` or `balance`.
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labelled synthetic fingerprints and their manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Images per class as dry,standard,wet.
        #[arg(long, default_value = "50,50,50", value_parser = parse_counts)]
        counts: [usize; 3],
    },
    /// Extract the six quality features of every manifest image.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Oversample minority classes of the training split (or the whole table).
    Balance {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        common: Common,
        /// Balance every row instead of the training part of the split.
        #[arg(long)]
        all: bool,
    },
    /// Train both cascade phases on a feature table.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the cascade end to end, or apply a trained model with --model.
    Classify {
        #[command(flatten)]
        input: Input,
        #[arg(long, requires = "features")]
        model: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Build a hybrid orientation map from the standard fingerprints.
    Hfom {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Pairwise shifted SSIM heatmap.
    Ssim {
        #[arg(long)]
        manifest: PathBuf,
        /// Further images to include, e.g. a generated hybrid map.
        #[arg(long = "image")]
        images: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_counts(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated counts, got {s:?}"));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|e| format!("bad count {p:?}: {e}"))?;
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, counts } => commands::synth(&common.out, counts, &common.config()?),
        Command::Features { manifest, common } => commands::features(&manifest, &common.out, &common.config()?),
        Command::Balance { input, common, all } => commands::balance(
            input.manifest.as_deref(),
            input.features.as_deref(),
            &common.out,
            all,
            &common.config()?,
        ),
        Command::Train { features, common } => commands::train(&features, &common.out, &common.config()?),
        Command::Classify { input, model, common } => {
            if input.manifest.is_none() && input.features.is_none() {
                bail!("classify needs --manifest or --features");
            }
            commands::classify(
                input.manifest.as_deref(),
                input.features.as_deref(),
                model.as_deref(),
                &common.out,
                &common.config()?,
            )
        }
        Command::Hfom { manifest, common } => commands::hfom(&manifest, &common.out, &common.config()?),
        Command::Ssim { manifest, images, common } => commands::ssim(&manifest, &images, &common.out, &common.config()?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
