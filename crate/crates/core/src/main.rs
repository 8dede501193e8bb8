use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ragclf::pipeline::commands::format_hits;
use ragclf::pipeline::{
    cmd_evaluate, cmd_ingest, cmd_report, cmd_search, cmd_train, EvalTarget, PipelineConfig, PipelineError, SearchQuery,
};

/// Retrieval-feature fake-news classifier over precomputed embeddings.
#[derive(Debug, Parser)]
#[command(name = "ragclf", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Run configuration (TOML). Without it, built-in defaults apply.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config's root seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate the dataset and print per-label counts.
    Ingest {
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Split, index, extract features, train and save all artifacts.
    Train {
        /// Pick learning rate, batch size and hidden widths on a validation
        /// carve-out of the training split first.
        #[arg(long)]
        grid: bool,
    },
    /// Score a trained run and write metrics JSON and ROC CSV.
    Evaluate {
        /// Run directory (defaults to the output directory).
        #[arg(long, value_name = "DIR")]
        run: Option<PathBuf>,
        /// Which split to score.
        #[arg(long, default_value = "test", value_parser = ["test", "train"], conflicts_with = "data")]
        split: String,
        /// Score every record of an external JSONL file instead.
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
    },
    /// Nearest neighbours from a saved index.
    Search {
        /// Index file (defaults to index.nxidx in the output directory).
        #[arg(long, value_name = "PATH")]
        index: Option<PathBuf>,
        /// Comma-separated query vector.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required_unless_present = "id", conflicts_with = "id")]
        vector: Option<Vec<f32>>,
        /// Use the stored vector of this id as the query.
        #[arg(long)]
        id: Option<String>,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
        /// With --id, leave the query's own entry out of the results.
        #[arg(long, requires = "id")]
        exclude_self: bool,
    },
    /// Merge manifest, history and metrics into report.json and report.txt.
    Report {
        #[arg(long, value_name = "DIR")]
        run: Option<PathBuf>,
    },
}

fn config(global: &Global) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &global.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run directory for commands that read artifacts; the config is optional.
fn run_dir(global: &Global, explicit: Option<PathBuf>) -> Result<PathBuf, PipelineError> {
    if let Some(dir) = explicit.or_else(|| global.out.clone()) {
        return Ok(dir);
    }
    Ok(config(global)?.out_dir)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let g = &cli.global;
    match cli.command {
        Command::Ingest { json } => {
            let summary = cmd_ingest(&config(g)?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            } else {
                println!("{summary}");
            }
        }
        Command::Train { grid } => {
            let out = cmd_train(&config(g)?, grid)?;
            if let Some(last) = out.trained.history.last() {
                println!(
                    "trained {} epochs: loss {:.4}, train accuracy {:.4}",
                    last.epoch, last.loss, last.train_accuracy
                );
            }
            if grid {
                let c = &out.manifest.config;
                println!(
                    "grid choice: learning_rate {}, batch_size {}, hidden {:?}",
                    c.learning_rate, c.batch_size, c.hidden
                );
            }
            println!("artifacts in {}", out.run_dir.display());
        }
        Command::Evaluate { run, split, data } => {
            let dir = run_dir(g, run)?;
            let target = match (data, split.as_str()) {
                (Some(path), _) => EvalTarget::External(path),
                (None, "train") => EvalTarget::Train,
                _ => EvalTarget::Test,
            };
            let eval = cmd_evaluate(&dir, &target)?;
            print!("{}", eval.report.to_table());
        }
        Command::Search {
            index,
            vector,
            id,
            k,
            exclude_self,
        } => {
            let path = match index {
                Some(p) => p,
                None => run_dir(g, None)?.join(ragclf::pipeline::commands::INDEX_FILE),
            };
            let query = match (vector, id) {
                (_, Some(id)) => SearchQuery::Id(id),
                (Some(v), None) => SearchQuery::Vector(v),
                (None, None) => unreachable!("clap requires one of --vector and --id"),
            };
            let hits = cmd_search(Path::new(&path), &query, k, exclude_self)?;
            print!("{}", format_hits(&hits));
        }
        Command::Report { run } => {
            let report = cmd_report(&run_dir(g, run)?)?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
