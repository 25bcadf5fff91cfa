//! The `hvd` command line. Results go to stdout (or `--out`); failures
//! print the error envelope as JSON on stderr and exit 1, usage errors
//! exit 2.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hvd_core::annotate::AnnotationStore;
use hvd_core::corpus::{self, KeywordDictionary};
use hvd_core::eval::{render_report, EvalReport, Grid, ReportFormat};
use hvd_core::features::TokenCache;
use hvd_core::models::{Family, HyperValue, ModelSpec};
use hvd_core::taxonomy::{self, PercentRounding};
use hvd_core::textprep::{self, TokenSequence};
use serde::Serialize;

use crate::api::{self, AppState};
use crate::config::Config;
use crate::error::ServiceError;
use crate::jobs::read_reviews;
use crate::pipeline::{self, DataSource, EvaluateOptions, LabeledVector, LoadedModel, Resources};

#[derive(Debug, Parser)]
#[command(name = "hvd", version, about = "Detect honesty violations in app reviews")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; overrides the configured default.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a review JSONL file and report rejected lines.
    Ingest {
        path: PathBuf,
        /// Write the accepted reviews here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keep reviews containing a dictionary term.
    Filter {
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corpus counts.
    Stats {
        #[arg(long)]
        input: PathBuf,
        /// Also count keyword matches against this dictionary.
        #[arg(long)]
        dict: Option<PathBuf>,
        /// Labeled JSONL whose violations are counted.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Normalized token sequences, one JSON object per review.
    Prep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean-pooled review vectors (labels kept when the input has them).
    Embed {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Token-vector cache, read if present and rewritten afterwards.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Train one model on all data and save the artifact.
    Train {
        #[arg(long)]
        model: Family,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Hyperparameter override, `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Cross-validate every point of a family's grid.
    GridSearch {
        #[arg(long)]
        model: Family,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validated comparison report.
    Evaluate {
        /// Family code, comma-separated list, or `all`.
        #[arg(long, default_value = "all")]
        model: String,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long, default_value = "json")]
        format: String,
        /// Grid-search each family first.
        #[arg(long)]
        tune: bool,
        /// Population for the random baseline, `VIOLATIONS/TOTAL`.
        #[arg(long)]
        population: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score reviews with a saved model; one result line per input line.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a saved JSON report.
    Report {
        path: PathBuf,
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Export VALIDATED and RESOLVED annotations as labeled JSONL.
    AnnotateExport {
        /// Annotation store directory; defaults to the data directory's.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Category frequencies of an assignment file.
    Taxonomy {
        #[arg(long)]
        input: PathBuf,
        /// Denominator; defaults to the distinct reviews in the file.
        #[arg(long)]
        total: Option<usize>,
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        bind: Option<String>,
    },
}

/// Training data. Without a flag: the configured labeled file, else
/// synthetic clusters seeded by `--seed`.
#[derive(Debug, Args)]
#[group(multiple = false)]
pub struct DataArgs {
    #[arg(long)]
    synthetic: bool,
    /// Labeled review JSONL.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Labeled vector JSONL from `embed`.
    #[arg(long)]
    vectors: Option<PathBuf>,
}

impl DataArgs {
    fn source(&self, config: &Config, seed: u64) -> DataSource {
        match (&self.data, &self.vectors) {
            _ if self.synthetic => DataSource::Synthetic { seed },
            (Some(path), _) => DataSource::Labeled { path: path.clone() },
            (_, Some(path)) => DataSource::Vectors { path: path.clone() },
            _ => DataSource::default_for(config, seed),
        }
    }
}

/// Parses `argv`, runs the command and returns the exit code.
pub fn run_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let err = ServiceError::bad_input("usage", e.kind().to_string()).with_detail("usage", e.to_string());
            eprintln!("{}", err.to_json());
            return 2;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            1
        }
    }
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

fn execute(cli: Cli) -> Result<(), ServiceError> {
    let mut config = Config::load(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(config.defaults.seed);
    match cli.command {
        Command::Ingest { path, out } => {
            let ingested = corpus::ingest_path(&path).map_err(|e| corpus_error(&path, e))?;
            if let Some(out) = out {
                let mut w = create(&out)?;
                ingested.corpus.write_jsonl(&mut w).map_err(|e| ServiceError::io(&out, &e))?;
                flush(w, &out)?;
            }
            #[derive(Serialize)]
            struct Summary<'a> {
                accepted: usize,
                rejected: usize,
                rejections: &'a [corpus::Rejection],
            }
            print_json(&Summary {
                accepted: ingested.corpus.len(),
                rejected: ingested.rejections.len(),
                rejections: &ingested.rejections,
            })
        }
        Command::Filter { dict, input, out } => {
            let dict = match dict {
                Some(p) => KeywordDictionary::from_path(&p)?,
                None => config.dictionary()?,
            };
            let stoplist = config.stoplist()?;
            let reviews = read_reviews(&input)?;
            let kept = corpus::keyword_filter(&corpus::Corpus::from_reviews(reviews), &dict, &stoplist)?;
            emit(out.as_deref(), |w| kept.write_jsonl(w).map_err(ServiceError::from))
        }
        Command::Stats { input, dict, labels } => {
            let corpus = corpus::Corpus::from_reviews(read_reviews(&input)?);
            let stoplist = config.stoplist()?;
            let dict = dict.map(|p| KeywordDictionary::from_path(&p)).transpose()?;
            let labels = labels.map(|p| corpus::read_labeled_path(&p)).transpose()?;
            let stats = corpus::stats(&corpus, dict.as_ref().map(|d| (d, &stoplist)), labels.as_deref());
            print_json(&stats)
        }
        Command::Prep { input, out } => {
            let stoplist = config.stoplist()?;
            let seqs: Vec<TokenSequence> = read_reviews(&input)?
                .into_iter()
                .map(|r| TokenSequence {
                    tokens: textprep::preprocess(&r.text, &stoplist),
                    source_id: r.id,
                })
                .collect();
            emit(out.as_deref(), |w| pipeline::write_jsonl(&seqs, w))
        }
        Command::Embed { input, out, cache } => {
            let res = Resources::from_config(&config)?;
            let mut token_cache = match &cache {
                Some(p) if p.exists() => {
                    let f = File::open(p).map_err(|e| ServiceError::io(p, &e))?;
                    TokenCache::load(BufReader::new(f))?
                }
                _ => TokenCache::new(),
            };
            let reviews = read_reviews(&input)?;
            let labels: Option<std::collections::HashMap<String, u8>> = corpus::read_labeled_path(&input)
                .ok()
                .map(|ls| ls.into_iter().map(|e| (e.review.id, e.label)).collect());
            let embedded = res.embed(&reviews, &mut token_cache);
            if let Some(p) = &cache {
                let mut w = create(p)?;
                token_cache.save(&mut w)?;
                flush(w, p)?;
            }
            let rows: Vec<LabeledVector> = embedded?
                .into_iter()
                .map(|v| LabeledVector {
                    label: labels.as_ref().and_then(|l| l.get(&v.source_id).copied()),
                    id: v.source_id,
                    vector: v.values,
                })
                .collect();
            emit(out.as_deref(), |w| pipeline::write_jsonl(&rows, w))
        }
        Command::Train {
            model,
            data,
            out,
            overrides,
        } => {
            let res = Resources::from_config(&config)?;
            let dataset = pipeline::load_dataset(&res, &data.source(&config, seed))?;
            let mut spec = ModelSpec::new(model, seed);
            for o in &overrides {
                let (k, v) = o
                    .split_once('=')
                    .ok_or_else(|| ServiceError::bad_input("usage", format!("--set expects KEY=VALUE, got {o:?}")))?;
                let value = match v.trim().parse::<f64>() {
                    Ok(n) => HyperValue::Num(n),
                    Err(_) => HyperValue::Text(v.trim().to_string()),
                };
                spec = spec.with(k.trim(), value);
            }
            spec.validate()?;
            print_json(&pipeline::train(&dataset, &spec, &out)?)
        }
        Command::GridSearch { model, data, folds, out } => {
            let res = Resources::from_config(&config)?;
            let dataset = pipeline::load_dataset(&res, &data.source(&config, seed))?;
            let grids = config.grids()?;
            let summary = pipeline::grid_search(&dataset, model, folds.unwrap_or(config.defaults.folds), seed, &grids)?;
            emit(out.as_deref(), |w| write_pretty(&summary, w))
        }
        Command::Evaluate {
            model,
            data,
            folds,
            format,
            tune,
            population,
            out,
        } => {
            let format: ReportFormat = format.parse()?;
            let families = parse_families(&model)?;
            let mut options = EvaluateOptions::new(families, folds.unwrap_or(config.defaults.folds), seed);
            options.tune = tune;
            options.population = population.as_deref().map(parse_population).transpose()?;
            let res = Resources::from_config(&config)?;
            let dataset = pipeline::load_dataset(&res, &data.source(&config, seed))?;
            let grids: std::collections::BTreeMap<Family, Grid> = config.grids()?;
            let report: EvalReport = pipeline::evaluate(&dataset, &options, &grids, |_| {})?;
            let text = render_report(&report, format);
            emit(out.as_deref(), |w| Ok(w.write_all(text.as_bytes())?))
        }
        Command::Classify { model, input, out } => {
            let res = Resources::from_config(&config)?;
            let model = LoadedModel::load(&model)?;
            let reviews = read_reviews(&input)?;
            let results = pipeline::classify(&res, &model, &reviews)?;
            emit(out.as_deref(), |w| pipeline::write_jsonl(&results, w))
        }
        Command::Report { path, format } => {
            let format: ReportFormat = format.parse()?;
            let text = std::fs::read_to_string(&path).map_err(|e| ServiceError::io(&path, &e))?;
            let report: EvalReport = serde_json::from_str(&text)
                .map_err(|e| ServiceError::bad_input("invalid_file", format!("{}: {e}", path.display())).with_detail("path", path.display().to_string()))?;
            print!("{}", render_report(&report, format));
            Ok(())
        }
        Command::AnnotateExport { store, out } => {
            let dir = store.unwrap_or_else(|| config.server.data_dir.join("annotations"));
            if !dir.is_dir() {
                return Err(ServiceError::not_found("file_not_found", format!("no annotation store at {}", dir.display()))
                    .with_detail("path", dir.display().to_string()));
            }
            let labels = AnnotationStore::open(&dir)?.export_labels();
            emit(out.as_deref(), |w| pipeline::write_jsonl(&labels, w))
        }
        Command::Taxonomy { input, total, format } => {
            let f = File::open(&input).map_err(|e| ServiceError::io(&input, &e))?;
            let assignments = taxonomy::read_assignments(BufReader::new(f)).map_err(|(line, reason)| {
                ServiceError::bad_input("invalid_file", format!("{}:{line}: {reason}", input.display()))
                    .with_detail("path", input.display().to_string())
                    .with_detail("line", line)
            })?;
            let report = taxonomy::frequency_report(&assignments, total, PercentRounding::default());
            match format.to_ascii_lowercase().as_str() {
                "json" => print_json(&report),
                "text" => {
                    print!("{}", report.render_text());
                    Ok(())
                }
                other => Err(ServiceError::bad_input("unsupported_format", format!("unsupported format {other:?}"))),
            }
        }
        Command::Serve { port, bind } => {
            if let Some(p) = port {
                config.server.port = p;
            }
            if let Some(b) = bind {
                config.server.bind = b;
            }
            config.defaults.seed = seed;
            let state = AppState::open(config)?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| ServiceError::internal(e.to_string()))?;
            runtime.block_on(api::serve(state))
        }
    }
}

fn parse_families(spec: &str) -> Result<Vec<Family>, ServiceError> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(Family::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let f: Family = part.parse().map_err(|e: String| ServiceError::bad_input("unknown_model", e))?;
        if !out.contains(&f) {
            out.push(f);
        }
    }
    if out.is_empty() {
        return Err(ServiceError::bad_input("unknown_model", "no model family given"));
    }
    Ok(out)
}

fn parse_population(s: &str) -> Result<(u64, u64), ServiceError> {
    let bad = || ServiceError::bad_input("usage", format!("--population expects VIOLATIONS/TOTAL, got {s:?}"));
    let (v, t) = s.split_once('/').ok_or_else(bad)?;
    Ok((v.trim().parse().map_err(|_| bad())?, t.trim().parse().map_err(|_| bad())?))
}

fn corpus_error(path: &Path, e: corpus::CorpusError) -> ServiceError {
    match e {
        corpus::CorpusError::Io(io) => ServiceError::io(path, &io),
        other => other.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, ServiceError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| ServiceError::io(dir, &e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| ServiceError::io(path, &e))?))
}

fn flush(mut w: BufWriter<File>, path: &Path) -> Result<(), ServiceError> {
    w.flush().map_err(|e| ServiceError::io(path, &e))
}

/// Runs `write` against `out` or stdout.
fn emit(out: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> Result<(), ServiceError>) -> Result<(), ServiceError> {
    match out {
        Some(path) => {
            let mut w = create(path)?;
            write(&mut w)?;
            flush(w, path)
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            Ok(lock.flush()?)
        }
    }
}

fn write_pretty<T: Serialize>(value: &T, w: &mut dyn Write) -> Result<(), ServiceError> {
    serde_json::to_writer_pretty(&mut *w, value).map_err(|e| ServiceError::internal(e.to_string()))?;
    Ok(w.write_all(b"\n")?)
}

fn print_json<T: Serialize>(value: &T) -> Result<(), ServiceError> {
    emit(None, |w| write_pretty(value, w))
}
