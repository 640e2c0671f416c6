use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ecog_cli::{run, CliError, Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ecog", version, about = "ECoG motor-imagery screening experiments")]
struct Cli {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Dataset root, overriding the config.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Dotted config override, e.g. `--set dl.search.n_trials=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// PSD and coherence curves and the bootstrapped coherence table.
    Eda,
    /// UMAP + KNN scores per participant and variant.
    UmapKnn,
    /// Hyperparameter search and training per participant.
    Train,
    /// Fine-tune a saved model on each selected participant.
    Finetune {
        /// Source model, overriding `finetune.source_model`.
        #[arg(long)]
        source: Option<PathBuf>,
    },
    /// Correlate KNN scores with classifier accuracy.
    Screen,
    /// Write a synthetic cohort to the output directory.
    Synth,
}

fn configure(cli: &Cli) -> Result<(Command, ExperimentConfig), CliError> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(data) = &cli.data {
        cfg.dataset_root = Some(data.clone());
    }
    let cmd = match &cli.verb {
        Verb::Eda => Command::Eda,
        Verb::UmapKnn => Command::UmapKnn,
        Verb::Train => Command::Train,
        Verb::Finetune { source } => {
            if let Some(s) = source {
                cfg.finetune.source_model = Some(s.clone());
            }
            Command::Finetune
        }
        Verb::Screen => Command::Screen,
        Verb::Synth => Command::Synth,
    };
    Ok((cmd, cfg))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: cannot size thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = configure(&cli).and_then(|(cmd, cfg)| run(cmd, &cfg));
    match result {
        Ok(report) => {
            println!("{} done: {} artifacts, input hash {}", report.command, report.outputs.len(), report.input_hash);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
