use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use snapq::{
    cmd_ablate, cmd_encode, cmd_eval, cmd_search, cmd_synth, cmd_train, cmd_train_codebook, ExperimentConfig, RunContext,
    SweepParam, TrainMode,
};

#[derive(Parser)]
#[command(name = "snapq", version, about = "Joint embedding and product-quantization training")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded execution, for bit-identical reruns.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output directory; overrides the config value (default "runs/latest").
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a PQ codebook on raw or embedded vectors.
    TrainCodebook {
        /// `.fvecs` or CSV input; the configured dataset's training rows otherwise.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Embed the input with this network first.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Jointly train the embedding network and the codebook.
    Train {
        #[arg(long, value_enum)]
        mode: Option<TrainMode>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Also evaluate the trained model.
        #[arg(long)]
        eval: bool,
    },
    /// Write PQ codes for a vector file.
    Encode {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Rank an encoded database for each query by asymmetric distance.
    Search {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        database: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        limit: usize,
    },
    /// Retrieval MAP of a trained checkpoint, with PQ and exhaustive search.
    Eval {
        /// Defaults to `<out-dir>/net.sqnn`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `<out-dir>/codebook.sqcb` when present.
        #[arg(long)]
        codebook: Option<PathBuf>,
    },
    /// Train and evaluate once per value of one hyperparameter.
    Ablate {
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Generate and split the configured dataset and write it to disk.
    Synth,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    let out_dir = cli
        .common
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs/latest"));
    let ctx = RunContext::new(out_dir, cli.common.deterministic);
    if ctx.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .context("configuring the thread pool")?;
    }

    match cli.command {
        Command::TrainCodebook { input, checkpoint } => {
            let cb = cmd_train_codebook(&cfg, &ctx, input.as_deref(), checkpoint.as_deref())?;
            println!("codebook {}x{} written, {} bits per code", cb.num_subspaces(), cb.num_codewords(), cb.code_bits());
        }
        Command::Train { mode, epochs, eval } => {
            if let Some(mode) = mode {
                cfg.train.mode = mode;
            }
            if let Some(epochs) = epochs {
                cfg.train.epochs = epochs;
            }
            let outcome = cmd_train(&cfg, &ctx)?;
            if let Some(last) = outcome.log.last() {
                println!("final loss {:.5}", last.loss);
            }
            if let Some(a) = outcome.alignment().mean() {
                println!("mean alignment {a:.4}");
            }
            if eval {
                let report = cmd_eval(&cfg, &ctx, None, None)?;
                println!("MAP adc {:.4}  l2 {:.4}", report.adc.map, report.l2.map);
            }
        }
        Command::Encode { codebook, input, checkpoint } => {
            cmd_encode(&cfg, &ctx, &codebook, &input, checkpoint.as_deref())?;
        }
        Command::Search {
            codebook,
            database,
            queries,
            checkpoint,
            limit,
        } => {
            cmd_search(&cfg, &ctx, &codebook, &database, &queries, checkpoint.as_deref(), limit)?;
        }
        Command::Eval { checkpoint, codebook } => {
            let report = cmd_eval(&cfg, &ctx, checkpoint.as_deref(), codebook.as_deref())?;
            println!("MAP adc {:.4}  l2 {:.4}", report.adc.map, report.l2.map);
        }
        Command::Ablate { param, values } => {
            for row in cmd_ablate(&cfg, &ctx, param, &values)? {
                println!(
                    "{}={}  MAP adc {:.4}  l2 {:.4}  alignment {}",
                    param.name(),
                    row.value,
                    row.map_adc,
                    row.map_l2,
                    row.alignment.mean().map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into())
                );
            }
        }
        Command::Synth => {
            let ds = cmd_synth(&cfg, &ctx)?;
            println!("{} rows of dimension {}", ds.len(), ds.dim());
        }
    }
    println!("outputs in {}", ctx.out_dir.display());
    Ok(())
}
