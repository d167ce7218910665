use std::path::PathBuf;
use std::process::exit;

use clap::{Parser, Subcommand};

use sbka_cli::commands;
use sbka_cli::config::RunConfig;
use sbka_core::error::Error;

/// Exit codes: 0 success, 2 configuration error, 3 data/format error,
/// 4 numeric failure.
fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Dimension(_) => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

#[derive(Parser)]
#[command(
    name = "sbka",
    version,
    about = "Bidirectional teacher/student alignment training and cluster-matched cross-modality retrieval"
)]
struct Cli {
    /// TOML run configuration; documented defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides every configured seed coherently (sub-seeds are derived by
    /// hashing this value with fixed per-purpose tags).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic two-modality datasets (seen-train, unseen-test).
    GenData {
        /// Directory receiving train.emb and test.emb.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Pretrain the teacher, run the alternating alignment training, write
    /// checkpoints and the epoch history.
    Train {
        /// Embedding file with the training (seen-class) samples.
        #[arg(long)]
        data: PathBuf,
        /// Semantic prior table; omitting it means a zero prior.
        #[arg(long)]
        prior: Option<PathBuf>,
        /// Directory receiving student.ckpt, teacher.ckpt and history.tsv.
        #[arg(long)]
        out_dir: PathBuf,
        /// Log mean-per-sample loss values instead of batch sums.
        #[arg(long)]
        log_mean: bool,
    },
    /// Embed the gallery photos and fit the per-subspace cluster codebook.
    FitClusters {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Embedding file providing the gallery photos.
        #[arg(long)]
        gallery: PathBuf,
        /// Output codebook path.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured subspace count.
        #[arg(long)]
        subspaces: Option<usize>,
        /// Overrides the cluster count (default: number of gallery classes).
        #[arg(long)]
        clusters: Option<usize>,
    },
    /// Rank sketch queries against a photo gallery and write the metrics
    /// report.
    RetrieveEval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Codebook for one-to-many matching (required unless --baseline).
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        /// Metric cutoff; defaults to the configured metric_k.
        #[arg(long)]
        k: Option<usize>,
        /// Score with the plain one-to-one embedding distance only.
        #[arg(long)]
        baseline: bool,
        /// Output report path.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-query ranking dump (TSV).
        #[arg(long)]
        rankings: Option<PathBuf>,
    },
    /// Run the three-row ablation (frozen teacher / bidirectional /
    /// + one-to-many) on the synthetic benchmark.
    Ablation {
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        /// Output table path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every analytic gradient against central finite differences.
    Gradcheck {
        /// Random instances per component.
        #[arg(long, default_value_t = 50)]
        cases: usize,
    },
}

/// Honors SBKA_THREADS as a cap on the worker pool; machine parallelism
/// otherwise.
fn setup_threads() -> Result<(), Error> {
    match std::env::var("SBKA_THREADS") {
        Ok(raw) => {
            let n: usize = raw.parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
                Error::Config(format!(
                    "SBKA_THREADS must be a positive integer, got {raw:?}"
                ))
            })?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
        }
        Err(_) => Ok(()),
    }
}

fn run(cli: Cli) -> Result<i32, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }

    match cli.command {
        Command::GenData { out_dir } => {
            commands::cmd_gen_data(&cfg, &out_dir)?;
            Ok(0)
        }
        Command::Train {
            data,
            prior,
            out_dir,
            log_mean,
        } => {
            commands::cmd_train(&cfg, &data, prior.as_deref(), &out_dir, log_mean)?;
            Ok(0)
        }
        Command::FitClusters {
            checkpoint,
            gallery,
            out,
            subspaces,
            clusters,
        } => {
            commands::cmd_fit_clusters(&cfg, &checkpoint, &gallery, &out, subspaces, clusters)?;
            Ok(0)
        }
        Command::RetrieveEval {
            checkpoint,
            codebook,
            queries,
            gallery,
            k,
            baseline,
            out,
            rankings,
        } => {
            commands::cmd_retrieve_eval(
                &cfg,
                &checkpoint,
                codebook.as_deref(),
                &queries,
                &gallery,
                k,
                baseline,
                &out,
                rankings.as_deref(),
            )?;
            Ok(0)
        }
        Command::Ablation { repetitions, out } => {
            commands::cmd_ablation(&cfg, repetitions, &out)?;
            Ok(0)
        }
        Command::Gradcheck { cases } => {
            let pass = commands::cmd_gradcheck(cli.seed.unwrap_or(2024), cases)?;
            Ok(if pass { 0 } else { 4 })
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = setup_threads() {
        eprintln!("error: {e}");
        exit(2);
    }
    match run(cli) {
        Ok(code) => exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            exit(exit_code_for(&e));
        }
    }
}
