use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use groundqa::gradcheck::GradcheckConfig;
use groundqa_cli::commands::{self, FilterArgs, IndexArgs, InitParamsArgs, QueryArgs, TrainArgs};
use groundqa_cli::config::{ConfigFile, EngineConfig, EngineFlags};
use groundqa_cli::service::{self, AppState, ServiceOptions};
use groundqa_cli::CliError;

#[derive(Parser)]
#[command(name = "groundqa", version, about = "Answer consumer health questions from a FAQ knowledge base")]
struct Cli {
    /// Flat key = value file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct EngineOpts {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
    /// TF-IDF candidate pool size.
    #[arg(long)]
    k: Option<usize>,
    /// Answer sentences to return.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
}

impl EngineOpts {
    fn resolve(self, file: &ConfigFile) -> Result<EngineConfig, CliError> {
        EngineConfig::resolve(
            EngineFlags {
                k: self.k,
                n: self.n,
                lambda: self.lambda,
                gamma: self.gamma,
                index: self.index,
                params: self.params,
                ..Default::default()
            },
            file,
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a knowledge-base index from FAQ JSONL.
    Index {
        #[arg(long)]
        kb: PathBuf,
        /// Reference FAQ JSONL that widens the TF-IDF fit.
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ngram_max: Option<u8>,
        /// One abbreviation per line; replaces the built-in list.
        #[arg(long)]
        abbreviations: Option<PathBuf>,
        /// Reject the whole input on any bad record.
        #[arg(long)]
        strict: bool,
    },
    /// Write randomly initialized encoder parameters for an index.
    InitParams {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Answer one question or a JSONL batch.
    Query {
        #[command(flatten)]
        engine: EngineOpts,
        #[arg(long, conflicts_with = "query_file")]
        question: Option<String>,
        /// JSONL with a `question` (or `summary`) field and optional `id`.
        #[arg(long)]
        query_file: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        /// Report zero timings so output is reproducible.
        #[arg(long)]
        no_timing: bool,
    },
    /// Serve POST /query and GET /health.
    Serve {
        #[command(flatten)]
        engine: EngineOpts,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        no_timing: bool,
    },
    /// Fine-tune encoder parameters with the self-supervised losses.
    Train {
        #[command(flatten)]
        engine: EngineOpts,
        /// Question-pair JSONL (`chq`, `ref_faq`); only train-split lines are used.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// CSV of per-epoch mean losses.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score question pairs against the knowledge base, filter and split.
    Filter {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, allow_negative_numbers = true)]
        cutoff: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        ngram_max: Option<u8>,
        #[arg(long)]
        out: PathBuf,
        /// CSV histogram of matching scores.
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// ROUGE-1/2/L F1 of line-aligned predictions against references.
    EvalRouge {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    path.ok_or_else(|| CliError::validation(format!("no {what} path given")))
}

fn serve(engine: EngineConfig, addr: SocketAddr, report_timing: bool) -> Result<(), CliError> {
    let index = engine.index_path()?.to_path_buf();
    let params = engine.params_path()?.to_path_buf();
    for p in [&index, &params] {
        if !Path::new(p).exists() {
            return Err(CliError::io(format!("{}: not found", p.display())));
        }
    }
    let options = ServiceOptions { k: engine.k, n: engine.n, report_timing };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        info!("listening on {}", listener.local_addr()?);
        let state = AppState::loading(options);
        let loader = state.clone();
        let load = tokio::task::spawn_blocking(move || commands::load_engine(&index, &params));
        tokio::spawn(async move {
            match load.await {
                Ok(Ok(e)) => {
                    info!("index ready: {} entries", e.kb.len());
                    loader.install(e);
                }
                Ok(Err(e)) => {
                    error!("failed to load index: {e}");
                    std::process::exit(e.exit_code());
                }
                Err(e) => {
                    error!("loader panicked: {e}");
                    std::process::exit(groundqa_cli::EXIT_IO);
                }
            }
        });
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        service::serve(listener, state, shutdown).await?;
        Ok(())
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Index { kb, refs, out: dest, ngram_max, abbreviations, strict } => {
            let args = IndexArgs {
                kb,
                refs,
                out: dest,
                ngram_max: file.pick(ngram_max, "ngram_max", 2)?,
                abbreviations: file.pick_path(abbreviations, "abbreviations")?,
                strict,
            };
            commands::cmd_index(&args, &mut out)
        }
        Command::InitParams { index, out: dest, dim, seed, alpha } => {
            let args = InitParamsArgs {
                index: required(file.pick_path(index, "index")?, "index")?,
                out: dest,
                dim: file.pick(dim, "dim", 64)?,
                seed: file.pick(seed, "seed", 0)?,
                alpha: file.pick(alpha, "alpha", 0.2)?,
            };
            commands::cmd_init_params(&args, &mut out)
        }
        Command::Query { engine, question, query_file, json, no_timing } => {
            let args = QueryArgs { engine: engine.resolve(&file)?, question, query_file, json, timing: !no_timing };
            commands::cmd_query(&args, &mut out)
        }
        Command::Serve { engine, host, port, no_timing } => {
            let host: String = file.pick(host, "host", "127.0.0.1".to_string())?;
            let port: u16 = file.pick(port, "port", 8080)?;
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| CliError::validation(format!("bad listen address {host}:{port}: {e}")))?;
            serve(engine.resolve(&file)?, addr, !no_timing)
        }
        Command::Train { engine, pairs, out: dest, log, epochs, learning_rate, seed } => {
            let args = TrainArgs {
                engine: engine.resolve(&file)?,
                pairs,
                out: dest,
                log,
                epochs: file.pick(epochs, "epochs", 30)?,
                learning_rate: file.pick(learning_rate, "learning_rate", 0.05)?,
                seed: file.pick(seed, "seed", 0)?,
            };
            commands::cmd_train(&args, &mut out)
        }
        Command::Filter { pairs, index, cutoff, seed, ngram_max, out: dest, histogram } => {
            let args = FilterArgs {
                pairs,
                index: required(file.pick_path(index, "index")?, "index")?,
                cutoff,
                seed: file.pick(seed, "seed", 0)?,
                ngram_max: file.pick(ngram_max, "ngram_max", 2)?,
                out: dest,
                histogram,
            };
            commands::cmd_filter(&args, &mut out)
        }
        Command::EvalRouge { pred, reference } => commands::cmd_eval_rouge(&pred, &reference, &mut out),
        Command::Gradcheck { trials, tol, seed } => {
            commands::cmd_gradcheck(&GradcheckConfig { trials, tol, seed, ..Default::default() }, &mut out)
        }
    }?;
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are validation errors; --help and --version are not errors
            return if e.use_stderr() { ExitCode::from(groundqa_cli::EXIT_VALIDATION as u8) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
