use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use define_core::analysis::{GradCheckOptions, Stage};
use define_core::cache::EmbeddingCache;
use define_core::checkpoint;
use define_core::config::RunConfig;
use define_core::corpus::read_text;
use define_core::embedder::ExpansionVariant;
use define_core::run;

#[derive(Parser)]
#[command(name = "define", version, about = "Factorized token embeddings: train, evaluate, cache and inspect")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config with dotted keys (model.n, train.lr, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for initialization and data order; sets model.seed and train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; sets run.out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Expansion variant; sets model.variant.
    #[arg(long)]
    variant: Option<String>,
    /// Any other key, as KEY=VALUE. May repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            cfg.set_str(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.model.define.seed = seed;
            cfg.train.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        if let Some(v) = &self.variant {
            cfg.model.define.variant = v.parse()?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a language model and fill the run directory.
    Train(ConfigArgs),
    /// Write an untrained model for the configured corpus.
    Init(ConfigArgs),
    /// Perplexity of a checkpoint on a text file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Use an exported embedding cache instead of the live unit.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        batch_size: usize,
        #[arg(long, default_value_t = 35)]
        bptt: usize,
    },
    /// Export the embedding cache of a checkpoint.
    ExportCache {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the parameter distribution for each variant.
    ParamCount {
        #[command(flatten)]
        config: ConfigArgs,
        /// Report only these variants (default: all). May repeat.
        #[arg(long = "only", value_name = "VARIANT")]
        only: Vec<String>,
    },
    /// Write the correlation map of one stage as CSV and PGM.
    CorrMap {
        #[arg(long)]
        checkpoint: PathBuf,
        /// map, layer<N> or reduce.
        #[arg(long)]
        stage: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare autodiff gradients against central differences.
    GradCheck(ConfigArgs),
}

fn threads() -> Result<usize> {
    match std::env::var("DEFINE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => bail!("DEFINE_THREADS must be a positive integer, got {v:?}"),
        },
        Err(_) => Ok(1),
    }
}

fn execute(cli: Cli) -> Result<()> {
    threads()?;
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let outcome = run::train_run(&cfg, |m| println!("{}", run::metrics_line_timed(m)))?;
            eprintln!("wrote {}", outcome.dir.display());
        }
        Command::Init(args) => {
            let dir = run::init_run(&args.resolve()?)?;
            eprintln!("wrote {}", dir.display());
        }
        Command::Eval {
            checkpoint: path,
            corpus,
            cache,
            batch_size,
            bptt,
        } => {
            let (model, vocab) = load_checkpoint(&path)?;
            let text = read_text(&corpus).with_context(|| format!("reading {}", corpus.display()))?;
            let cache = cache
                .map(|p| EmbeddingCache::load(&p).with_context(|| format!("reading {}", p.display())))
                .transpose()?;
            let ppl = run::eval_text(&model, &vocab, &text, batch_size, bptt, cache.as_ref())?;
            println!("perplexity {ppl:.3}");
        }
        Command::ExportCache { checkpoint: path, out } => {
            let cache = run::export_cache_file(&path, &out)
                .with_context(|| format!("exporting {}", path.display()))?;
            println!("{} x {} -> {}", cache.vocab_size(), cache.dim(), out.display());
        }
        Command::ParamCount { config, only } => {
            let cfg = config.resolve()?;
            let variants = if only.is_empty() {
                ExpansionVariant::ALL.to_vec()
            } else {
                only.iter()
                    .map(|s| s.parse::<ExpansionVariant>())
                    .collect::<define_core::Result<Vec<_>>>()?
            };
            print!("{}", run::param_count_table(&cfg.model, &variants)?);
        }
        Command::CorrMap {
            checkpoint: path,
            stage,
            out,
        } => {
            let (model, _) = load_checkpoint(&path)?;
            let stage: Stage = stage.parse()?;
            let (csv, pgm) = run::write_corr_map(&model, stage, &out)?;
            println!("{}\n{}", csv.display(), pgm.display());
        }
        Command::GradCheck(args) => {
            let cfg = args.resolve()?;
            let opts = GradCheckOptions {
                seed: cfg.train.seed,
                ..GradCheckOptions::default()
            };
            let mut failed = Vec::new();
            for (name, report) in run::grad_check_config(&cfg, &opts)? {
                println!("[{name}] {report}");
                if !report.passed() {
                    failed.push(name);
                }
            }
            if !failed.is_empty() {
                bail!("gradient check failed for {}", failed.join(", "));
            }
        }
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(define_core::lm::LanguageModel, define_core::corpus::Vocab)> {
    checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
