//! One function per subcommand. Output goes to the given writer so tests
//! can capture it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;

use groundqa::dataset::{self, QuestionPair, Split};
use groundqa::gradcheck::{run_gradcheck, GradcheckConfig};
use groundqa::kb::{read_records, read_reference_faqs};
use groundqa::losses::{train_encoder, write_loss_log, TrainConfig, TrainingPair};
use groundqa::{tokenize, Encoder, Engine, IngestOptions, KnowledgeBase, SentenceSplitter};

use crate::config::EngineConfig;
use crate::{CliError, QueryRequest, QueryResponse};

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn write_err(e: std::io::Error) -> CliError {
    CliError::io(e.to_string())
}

pub fn load_engine(index: &Path, params: &Path) -> Result<Engine, CliError> {
    let kb = KnowledgeBase::load(index)?;
    let encoder = Encoder::load(params)?;
    info!("loaded {} entries, {} encoder rows", kb.len(), encoder.n_rows());
    Ok(Engine::new(kb, encoder))
}

#[derive(Debug, Clone)]
pub struct IndexArgs {
    pub kb: PathBuf,
    pub refs: Option<PathBuf>,
    pub out: PathBuf,
    pub ngram_max: u8,
    pub abbreviations: Option<PathBuf>,
    pub strict: bool,
}

pub fn cmd_index(args: &IndexArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let splitter = match &args.abbreviations {
        Some(p) => SentenceSplitter::from_file(p).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?,
        None => SentenceSplitter::default(),
    };
    let records = read_records(open(&args.kb)?).collect::<Result<Vec<_>, _>>()?;
    let refs = match &args.refs {
        Some(p) => read_reference_faqs(open(p)?)?,
        None => Vec::new(),
    };
    let opts = IngestOptions { splitter, ngram_max: args.ngram_max, strict: args.strict };
    let (kb, report) = KnowledgeBase::ingest(records, refs, &opts)?;
    kb.save(&args.out)?;
    writeln!(
        out,
        "entries={} sentences={} mean_sentences={:.2} rejected={} reference_faqs={}",
        report.accepted,
        report.total_sentences,
        report.mean_sentences(),
        report.rejected.len(),
        report.reference_faqs
    )
    .map_err(write_err)
}

#[derive(Debug, Clone)]
pub struct InitParamsArgs {
    pub index: PathBuf,
    pub out: PathBuf,
    pub dim: usize,
    pub seed: u64,
    pub alpha: f64,
}

/// Random encoder over every word in the knowledge base.
pub fn cmd_init_params(args: &InitParamsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let kb = KnowledgeBase::load(&args.index)?;
    let encoder = Encoder::init(args.seed, args.dim, kb.vocabulary(), args.alpha)?;
    encoder.save(&args.out)?;
    writeln!(out, "rows={} dim={}", encoder.n_rows(), encoder.dim()).map_err(write_err)
}

#[derive(Debug, Clone)]
pub struct QueryArgs {
    pub engine: EngineConfig,
    pub question: Option<String>,
    pub query_file: Option<PathBuf>,
    pub json: bool,
    pub timing: bool,
}

fn print_human(resp: &QueryResponse, out: &mut dyn Write) -> std::io::Result<()> {
    let m = &resp.matched_faq;
    writeln!(out, "matched {} ({:.4}): {}", m.id, m.score, m.question)?;
    for a in &resp.answers {
        writeln!(out, "  [{}] {:.4}  {}", a.index, a.score, a.text)?;
    }
    let t = &resp.timing_ms;
    writeln!(out, "timing: match {:.3} ms, select {:.3} ms, total {:.3} ms", t.match_ms, t.select_ms, t.total_ms)
}

pub fn cmd_query(args: &QueryArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = &args.engine;
    let engine = load_engine(cfg.index_path()?, cfg.params_path()?)?;
    match (&args.question, &args.query_file) {
        (Some(q), None) => {
            let a = engine.answer(q, cfg.k, cfg.n)?;
            let resp = QueryResponse::from_answer(&a, &engine.kb, args.timing);
            if args.json {
                serde_json::to_writer(&mut *out, &resp).map_err(|e| CliError::io(e.to_string()))?;
                writeln!(out).map_err(write_err)
            } else {
                print_human(&resp, out).map_err(write_err)
            }
        }
        (None, Some(path)) => {
            // validate the whole batch before answering anything
            let mut requests = Vec::new();
            for (i, line) in open(path)?.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let req: QueryRequest = serde_json::from_str(&line)
                    .map_err(|e| CliError::validation(format!("{}:{}: {e}", path.display(), i + 1)))?;
                if req.question.is_none() {
                    return Err(CliError::validation(format!(
                        "{}:{}: expected a 'question' or 'summary' field",
                        path.display(),
                        i + 1
                    )));
                }
                requests.push(req);
            }
            for req in requests {
                let a = engine.answer(req.question.as_deref().unwrap_or_default(), req.k.unwrap_or(cfg.k), req.n.unwrap_or(cfg.n))?;
                let mut resp = QueryResponse::from_answer(&a, &engine.kb, args.timing);
                resp.id = req.id;
                serde_json::to_writer(&mut *out, &resp).map_err(|e| CliError::io(e.to_string()))?;
                writeln!(out).map_err(write_err)?;
            }
            Ok(())
        }
        _ => Err(CliError::validation("give exactly one of --question or --query-file")),
    }
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub engine: EngineConfig,
    pub pairs: PathBuf,
    pub out: PathBuf,
    pub log: Option<PathBuf>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Reads question pairs, keeping those with no split or the train split.
pub fn read_training_pairs(path: &Path) -> Result<Vec<TrainingPair>, CliError> {
    let pairs = dataset::read_pairs(open(path)?)?;
    Ok(pairs
        .into_iter()
        .enumerate()
        .filter(|(_, p)| matches!(p.split, None | Some(Split::Train)))
        .map(|(i, p)| TrainingPair {
            id: p.id.unwrap_or_else(|| format!("pair{}", i + 1)),
            chq: tokenize(&p.chq),
            ref_faq: tokenize(&p.ref_faq),
        })
        .collect())
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = &args.engine;
    let engine = load_engine(cfg.index_path()?, cfg.params_path()?)?;
    let pairs = read_training_pairs(&args.pairs)?;
    let config = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        k: cfg.k,
        seed: args.seed,
        weights: cfg.weights(),
    };
    let outcome = train_encoder(&pairs, &engine.kb, engine.encoder, &config)?;
    outcome.encoder.save(&args.out)?;
    if let Some(p) = &args.log {
        let mut w = create(p)?;
        write_loss_log(&outcome.log, &mut w).and_then(|_| w.flush()).map_err(write_err)?;
    }
    match (outcome.log.first(), outcome.log.last()) {
        (Some(first), Some(last)) => writeln!(
            out,
            "pairs={} epochs={} first_total={:.6} last_total={:.6}",
            pairs.len(),
            outcome.log.len(),
            first.mean_total,
            last.mean_total
        ),
        _ => writeln!(out, "pairs={} epochs=0", pairs.len()),
    }
    .map_err(write_err)
}

#[derive(Debug, Clone)]
pub struct FilterArgs {
    pub pairs: PathBuf,
    pub index: PathBuf,
    pub cutoff: f64,
    pub seed: u64,
    pub ngram_max: u8,
    pub out: PathBuf,
    pub histogram: Option<PathBuf>,
}

pub fn cmd_filter(args: &FilterArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let kb = KnowledgeBase::load(&args.index)?;
    let mut pairs: Vec<QuestionPair> = dataset::read_pairs(open(&args.pairs)?)?;
    let questions: Vec<&str> = kb.entries().iter().map(|e| e.question.text()).collect();
    dataset::score_pairs(&mut pairs, &questions, args.ngram_max)?;
    let pairs = dataset::filter_and_split(pairs, args.cutoff, args.seed)?;
    let mut w = create(&args.out)?;
    dataset::write_pairs(&pairs, &mut w).and_then(|_| w.flush()).map_err(write_err)?;
    if let Some(p) = &args.histogram {
        let hist = dataset::score_histogram(pairs.iter().filter_map(|p| p.match_score));
        let mut w = create(p)?;
        dataset::write_histogram(&hist, &mut w).and_then(|_| w.flush()).map_err(write_err)?;
    }
    let count = |s: Split| pairs.iter().filter(|p| p.split == Some(s)).count();
    let rejected = count(Split::Rejected);
    writeln!(
        out,
        "input={} survivors={} train={} dev={} test={} rejected={}",
        pairs.len(),
        pairs.len() - rejected,
        count(Split::Train),
        count(Split::Dev),
        count(Split::Test),
        rejected
    )
    .map_err(write_err)
}

pub fn cmd_eval_rouge(pred: &Path, reference: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let report = groundqa::rouge::eval_file(pred, reference)?;
    serde_json::to_writer(&mut *out, &report).map_err(|e| CliError::io(e.to_string()))?;
    writeln!(out).map_err(write_err)
}

pub fn cmd_gradcheck(config: &GradcheckConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let report = run_gradcheck(config)?;
    writeln!(
        out,
        "trials={} skipped_kinks={} max_rel_error={:.3e} tol={:e} failures={}",
        report.trials.len(),
        report.skipped_kinks,
        report.max_error(),
        config.tol,
        report.failures()
    )
    .map_err(write_err)?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::validation(format!("{} trials exceeded tolerance {}", report.failures(), config.tol)))
    }
}
