//! Command-line front end.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{extract_identifiers_with, parse_file, AnalysisOptions};
use crate::attention::AttentionConfig;
use crate::bench::{adapter_report, bench_scaling, render_svg, scaling_fit, BenchConfig, EncoderShape};
use crate::dataset::{build_dataset, read_split, PipelineOptions, SplitRatios, DEDUP_THRESHOLD};
use crate::error::{Error, Result};
use crate::mask::{render_ppm, AttentionMaskSpec};
use crate::metrics::{evaluate_corpus_with, BleuMode};
use crate::model::{train, Checkpoint, Example, ModelConfig, Strategy, Summarizer, SummaryVocab, TrainConfig};
use crate::tokenizer::{project_positions, train_tokenizer, PositionCaps, Tokenizer};

pub const SEED_ENV: &str = "SPARSECODER_SEED";

#[derive(Debug, Parser)]
#[command(name = "sparsecoder", version, about = "Identifier-aware sparse attention for code summarization")]
struct Cli {
    /// Seed for every random choice; SPARSECODER_SEED takes precedence.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BleuArg {
    Macro,
    Corpus,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify identifier occurrences in Python files.
    Analyze {
        files: Vec<PathBuf>,
        /// One compact JSON object per line instead of a table.
        #[arg(long)]
        json: bool,
        /// Leave `self` and `cls` parameters out of the occurrence list.
        #[arg(long)]
        skip_self: bool,
    },
    /// Tokenize a file and print token ids, spans and position sets.
    Tokenize {
        file: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long, default_value_t = crate::tokenizer::DEFAULT_MAX_LEN)]
        max_len: usize,
    },
    /// Train a byte-level BPE tokenizer on a directory of .py files or a split file.
    TrainTokenizer {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        vocab_size: usize,
    },
    /// Build an attention mask and print its pair counts.
    Mask {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 128)]
        w: usize,
        #[arg(long, value_delimiter = ',')]
        global: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        ident: Vec<usize>,
        /// Write the mask as a binary PPM image.
        #[arg(long)]
        ppm: Option<PathBuf>,
    },
    /// Build train/dev/test pairs from a corpus of Python files.
    BuildDataset {
        input: PathBuf,
        out: PathBuf,
        /// Keep the module docstring in the code field.
        #[arg(long)]
        keep_docstring: bool,
        #[arg(long, default_value_t = DEDUP_THRESHOLD)]
        dedup_threshold: f64,
    },
    /// Train a summarizer and write a checkpoint directory.
    Train {
        /// JSON with optional `model`, `train` and `tokenizer_vocab_size` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding train.jsonl and dev.jsonl.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "checkpoint")]
        out: PathBuf,
    },
    /// Summarize one Python file with a trained checkpoint.
    Summarize {
        file: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Beam width; 1 is greedy decoding.
        #[arg(long, default_value_t = 1)]
        beam: usize,
    },
    /// Score predictions against references; rows are {id, text}.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        r#ref: PathBuf,
        #[arg(long, value_enum, default_value_t = BleuArg::Macro)]
        bleu_mode: BleuArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Memory and time of one attention layer across sequence lengths.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [256, 512, 1024, 2048, 4096])]
        lengths: Vec<usize>,
        #[arg(long, default_value = "bench.json")]
        out: PathBuf,
        #[arg(long)]
        plot: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        d_h: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 128)]
        w: usize,
        /// Report rows above this many activation bytes as out of memory.
        #[arg(long)]
        memory_budget: Option<usize>,
    },
}

/// Exit code for a failed command: configuration problems count as usage
/// errors, everything else as data errors.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        Err(_) => Ok(flag.unwrap_or(0)),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    let result = resolve_seed(cli.seed).and_then(|seed| dispatch(cli.command, seed));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn read_source(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    String::from_utf8(bytes).map_err(|_| Error::Data(format!("{} is not valid UTF-8", path.display())))
}

fn dispatch(command: Command, seed: u64) -> Result<()> {
    match command {
        Command::Analyze { files, json, skip_self } => analyze_files(&files, json, !skip_self),
        Command::Tokenize { file, tokenizer, max_len } => {
            let tok = Tokenizer::load(&tokenizer)?;
            let source = read_source(&file)?;
            let seq = tok.encode(&source, max_len);
            let positions = project_positions(&seq, &crate::analysis::analyze(&source), &PositionCaps::default());
            #[derive(Serialize)]
            struct Out<'a> {
                n: usize,
                token_ids: &'a [u32],
                spans: Vec<[usize; 2]>,
                positions: &'a crate::tokenizer::PositionSets,
            }
            let spans = seq.spans.iter().map(|s| [s.start, s.end]).collect();
            write_json(None, &Out { n: seq.n(), token_ids: &seq.token_ids, spans, positions: &positions })
        }
        Command::TrainTokenizer { input, out, vocab_size } => {
            let corpus = code_corpus(&input)?;
            let tok = train_tokenizer(corpus.iter(), vocab_size)?;
            tok.save(&out)?;
            eprintln!("{} tokens, {} merges", tok.vocab_size(), tok.merges().len());
            Ok(())
        }
        Command::Mask { n, w, global, ident, ppm } => {
            let spec = AttentionMaskSpec::new(n, w, &global, &ident)?;
            if let Some(path) = ppm {
                std::fs::write(path, render_ppm(&spec))?;
            }
            println!("{}", serde_json::json!({ "n": n, "w": w, "nonzero_count": spec.nonzero_count(), "patterns": spec.pattern_counts() }));
            Ok(())
        }
        Command::BuildDataset { input, out, keep_docstring, dedup_threshold } => {
            let options = PipelineOptions { seed, keep_docstring, dedup_threshold, ratios: SplitRatios::default() };
            let report = build_dataset(&input, &out, &options)?;
            eprintln!("{}", report.stats);
            write_json(None, &serde_json::json!({ "inputs": report.inputs, "splits": report.split_counts, "rejections": report.rejection_counts }))
        }
        Command::Train { config, data, out } => train_command(config.as_deref(), &data, &out, seed),
        Command::Summarize { file, ckpt, beam } => {
            if beam == 0 {
                return Err(Error::Config("beam width must be at least 1".into()));
            }
            let ckpt = Checkpoint::load(&ckpt)?;
            let strategy = if beam == 1 { Strategy::Greedy } else { Strategy::Beam(beam) };
            println!("{}", ckpt.summarize(&read_source(&file)?, strategy)?);
            Ok(())
        }
        Command::Eval { pred, r#ref, bleu_mode, out } => {
            let mode = match bleu_mode {
                BleuArg::Macro => BleuMode::Macro,
                BleuArg::Corpus => BleuMode::Corpus,
            };
            let preds = read_texts(&pred)?;
            let refs = read_texts(&r#ref)?;
            let by_id: HashMap<&str, &str> = preds.iter().map(|r| (r.id.as_str(), r.text.as_str())).collect();
            if by_id.len() != preds.len() {
                return Err(Error::Data("duplicate id in predictions".into()));
            }
            let mut pairs = Vec::with_capacity(refs.len());
            for r in &refs {
                let p = by_id.get(r.id.as_str()).ok_or_else(|| Error::Data(format!("no prediction for id {}", r.id)))?;
                pairs.push((*p, r.text.as_str()));
            }
            if pairs.len() != preds.len() {
                return Err(Error::Data("predictions contain ids missing from the references".into()));
            }
            write_json(out.as_deref(), &evaluate_corpus_with(&pairs, mode)?)
        }
        Command::Bench { lengths, out, plot, d_h, heads, w, memory_budget } => {
            let attention = AttentionConfig { d_h, heads, w, ..AttentionConfig::default() };
            let config = BenchConfig { attention, seed, memory_budget_bytes: memory_budget };
            let result = bench_scaling(&lengths, &config)?;
            write_json(Some(&out), &result)?;
            if let Some(p) = plot {
                std::fs::write(p, render_svg(&result))?;
            }
            let fit = scaling_fit(&result);
            let adapters = adapter_report(&AttentionConfig { d_h: 768, heads: 12, r: 8, ..AttentionConfig::default() }, &EncoderShape::default());
            eprintln!(
                "sparse linear R² {:.4}, dense quadratic R² {:.4}; adapters {:.2}% of an attention block, {:.2}% of a 12-layer encoder",
                fit.sparse_linear_r2,
                fit.dense_quadratic_r2,
                100.0 * adapters.block_ratio,
                100.0 * adapters.whole_model_ratio
            );
            Ok(())
        }
    }
}

fn analyze_files(files: &[PathBuf], json: bool, self_is_identifier: bool) -> Result<()> {
    if files.is_empty() {
        return Err(Error::Config("no input files".into()));
    }
    let options = AnalysisOptions { self_is_identifier };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for path in files {
        let (source, tree) = parse_file(path)?;
        let analysis = extract_identifiers_with(&tree, &source, &options);
        if json {
            writeln!(out, "{}", serde_json::to_string(&analysis)?)?;
            continue;
        }
        writeln!(out, "{} (parse_ok={}, {} occurrences)", path.display(), analysis.parse_ok, analysis.occurrences.len())?;
        for o in &analysis.occurrences {
            let marker = if o.is_global { "  global" } else { "" };
            writeln!(out, "{:>7}..{:<7} {:<16} {:?}{marker}", o.span.start, o.span.end, o.name, o.kind)?;
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct TextRow {
    id: String,
    text: String,
}

fn read_texts(path: &Path) -> Result<Vec<TextRow>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            rows.push(serde_json::from_str(&line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), k + 1)))?);
        }
    }
    Ok(rows)
}

/// Code texts from a directory of .py files or a split file.
fn code_corpus(input: &Path) -> Result<Vec<String>> {
    if input.is_dir() {
        Ok(crate::dataset::read_corpus(input)?.into_iter().filter_map(|(_, c)| c).collect())
    } else {
        Ok(read_split(input)?.into_iter().map(|p| p.code).collect())
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct TrainFile {
    model: ModelConfig,
    train: Option<TrainConfig>,
    tokenizer_vocab_size: Option<usize>,
}

fn train_command(config: Option<&Path>, data: &Path, out: &Path, seed: u64) -> Result<()> {
    let file: TrainFile = match config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => TrainFile::default(),
    };
    let train_pairs = read_split(&data.join("train.jsonl"))?;
    let dev_pairs = read_split(&data.join("dev.jsonl"))?;
    if train_pairs.is_empty() || dev_pairs.is_empty() {
        return Err(Error::Data("train and dev splits must both be non-empty".into()));
    }
    let tokenizer = train_tokenizer(train_pairs.iter().map(|p| p.code.as_str()), file.tokenizer_vocab_size.unwrap_or(2000))?;
    let mut model_config = file.model;
    let vocab = SummaryVocab::build(train_pairs.iter().map(|p| p.summary.as_str()), model_config.summary_vocab_size);
    model_config.code_vocab_size = tokenizer.vocab_size();
    model_config.summary_vocab_size = vocab.len();
    model_config.seed = seed;
    let train_config = TrainConfig { seed, ..file.train.unwrap_or_default() };
    let to_examples = |pairs: &[crate::dataset::Pair]| -> Vec<Example> {
        pairs.iter().map(|p| Example::new(&tokenizer, &vocab, &model_config, &p.code, &p.summary)).collect()
    };
    let (train_set, dev_set) = (to_examples(&train_pairs), to_examples(&dev_pairs));
    let mut model = Summarizer::new(model_config)?;
    let state = train(&mut model, &vocab, &train_set, &dev_set, &train_config, |log| {
        eprintln!("epoch {} loss {:.4} dev bleu {:.4}", log.epoch, log.train_loss, log.dev_bleu)
    })?;
    let ckpt = Checkpoint { model, tokenizer, vocab };
    ckpt.save(out)?;
    std::fs::write(out.join("history.json"), serde_json::to_string_pretty(&state.history)?)?;
    eprintln!("best dev bleu {:.4} after {} epochs; checkpoint in {}", state.best_dev_bleu, state.epoch, out.display());
    Ok(())
}
