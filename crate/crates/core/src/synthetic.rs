//! Distant-definition summarization task: the summary names a class that is
//! defined past a token boundary and instantiated at the end of the file.

use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{train, AttentionMode, Example, ModelConfig, Strategy, Summarizer, SummaryVocab, TrainConfig};
use crate::tokenizer::{train_tokenizer, PositionCaps, Tokenizer};

pub const CLASS_NAMES: [&str; 10] = ["Alpha", "Bravo", "Charlie", "Delta", "Echo", "Foxtrot", "Golf", "Hotel", "India", "Juliet"];

/// Index of the class name in the summary word sequence.
pub const KEY_POSITION: usize = 4;

pub fn summary_for(name: &str) -> String {
    format!("this module defines the {} class", name.to_lowercase())
}

const LOCALS: [&str; 8] = ["total", "count", "item", "value", "acc", "step", "buf", "tmp"];

fn filler_function(rng: &mut impl Rng, k: usize) -> String {
    let mut s = format!("def helper_{k}(arg_a, arg_b):\n");
    let a = *LOCALS.choose(rng).unwrap();
    s += &format!("    {a} = arg_a + {}\n", rng.random_range(0..100));
    for _ in 0..rng.random_range(2..6) {
        let b = *LOCALS.choose(rng).unwrap();
        s += &match rng.random_range(0..4) {
            0 => format!("    {b} = {a} * {} - arg_b\n", rng.random_range(1..10)),
            1 => format!("    for {b} in range(arg_b):\n        {a} = {a} + {b}\n"),
            2 => format!("    if {a} > {}:\n        {a} = {a} - 1\n", rng.random_range(0..50)),
            _ => format!("    {a} = max({a}, arg_b % {})\n", rng.random_range(2..9)),
        };
    }
    s + &format!("    return {a}\n\n")
}

fn class_block(name: &str) -> String {
    format!("class {name}(object):\n    def __init__(self, size):\n        self.size = size\n\n")
}

/// One file: filler functions until the prefix holds at least
/// `definition_after` tokens, the class, a little more filler, then a use.
pub fn generate_file(rng: &mut impl Rng, tokenizer: &Tokenizer, name: &str, definition_after: usize) -> (String, usize) {
    let mut code = String::new();
    let mut k = 0;
    let mut prefix = 0;
    while prefix < definition_after {
        code += &filler_function(rng, k);
        k += 1;
        prefix = tokenizer.encode(&code, usize::MAX).n();
    }
    code += &class_block(name);
    for _ in 0..rng.random_range(0..3) {
        code += &filler_function(rng, k);
        k += 1;
    }
    code += &format!("instance = {name}(helper_0(1, 2))\n");
    (code, prefix)
}

/// Corpus used to train the task tokenizer, covering every class name.
pub fn tokenizer_corpus(seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus: Vec<String> = (0..40).map(|k| filler_function(&mut rng, k)).collect();
    corpus.extend(CLASS_NAMES.iter().map(|n| class_block(n) + &format!("instance = {n}(helper_0(1, 2))\n")));
    corpus
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongRangeConfig {
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub definition_after: usize,
    pub truncate_to: usize,
    pub code_vocab_size: usize,
    pub model: TaskModel,
    pub train: TrainConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskModel {
    pub d_h: usize,
    pub heads: usize,
    pub r: usize,
    pub w: usize,
    pub d_ff: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_code_len: usize,
}

impl Default for LongRangeConfig {
    fn default() -> Self {
        Self {
            train_size: 240,
            dev_size: 30,
            test_size: 100,
            definition_after: 520,
            truncate_to: 512,
            code_vocab_size: 320,
            model: TaskModel { d_h: 32, heads: 2, r: 4, w: 32, d_ff: 64, encoder_layers: 1, decoder_layers: 1, max_code_len: 1024 },
            train: TrainConfig { lr: 3e-3, batch: 8, epochs: 12, patience: 3, clip_norm: 1.0, seed: 0 },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub attention: AttentionMode,
    pub max_code_len: usize,
    pub key_accuracy: f64,
    pub epochs: usize,
    pub best_dev_bleu: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRangeReport {
    pub chance: f64,
    pub min_definition_token: usize,
    pub sparse: ArmReport,
    pub truncated: ArmReport,
}

struct Task {
    tokenizer: Tokenizer,
    vocab: SummaryVocab,
    /// (code, class index) per split.
    train: Vec<(String, usize)>,
    dev: Vec<(String, usize)>,
    test: Vec<(String, usize)>,
    min_definition_token: usize,
}

fn build_task(cfg: &LongRangeConfig) -> Result<Task> {
    let tokenizer = train_tokenizer(tokenizer_corpus(cfg.seed), cfg.code_vocab_size)?;
    let vocab = SummaryVocab::build(CLASS_NAMES.iter().map(|n| summary_for(n)), 64);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut min_def = usize::MAX;
    let mut make = |count: usize| -> Vec<(String, usize)> {
        (0..count)
            .map(|_| {
                let c = rng.random_range(0..CLASS_NAMES.len());
                let (code, def) = generate_file(&mut rng, &tokenizer, CLASS_NAMES[c], cfg.definition_after);
                min_def = min_def.min(def);
                (code, c)
            })
            .collect()
    };
    let (train, dev, test) = (make(cfg.train_size), make(cfg.dev_size), make(cfg.test_size));
    Ok(Task { tokenizer, vocab, train, dev, test, min_definition_token: min_def })
}

fn run_arm(task: &Task, cfg: &LongRangeConfig, attention: AttentionMode, max_code_len: usize) -> Result<ArmReport> {
    let m = cfg.model;
    let config = ModelConfig {
        encoder_layers: m.encoder_layers,
        decoder_layers: m.decoder_layers,
        d_h: m.d_h,
        heads: m.heads,
        r: m.r,
        w: m.w,
        d_ff: m.d_ff,
        caps: PositionCaps::default(),
        max_code_len,
        max_summary_len: 16,
        code_vocab_size: task.tokenizer.vocab_size(),
        summary_vocab_size: task.vocab.len(),
        encoder_attention: attention,
        seed: cfg.seed,
    };
    let examples = |set: &[(String, usize)]| -> Vec<Example> {
        set.iter().map(|(code, c)| Example::new(&task.tokenizer, &task.vocab, &config, code, &summary_for(CLASS_NAMES[*c]))).collect()
    };
    let (train_set, dev_set, test_set) = (examples(&task.train), examples(&task.dev), examples(&task.test));
    let start = Instant::now();
    let mut model = Summarizer::new(config)?;
    let state = train(&mut model, &task.vocab, &train_set, &dev_set, &cfg.train, |_| {})?;
    let mut hits = 0;
    for (ex, (_, c)) in test_set.iter().zip(&task.test) {
        let out = model.generate(&ex.code_ids, &ex.positions, Strategy::Greedy)?;
        let key = task.vocab.id(&CLASS_NAMES[*c].to_lowercase());
        hits += usize::from(out.get(KEY_POSITION) == Some(&key));
    }
    Ok(ArmReport {
        attention,
        max_code_len,
        key_accuracy: hits as f64 / test_set.len().max(1) as f64,
        epochs: state.epoch,
        best_dev_bleu: state.best_dev_bleu,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trains the sparse model on full files and a dense model on files
/// truncated to `truncate_to` tokens, and scores class-name accuracy.
pub fn run_long_range(cfg: &LongRangeConfig) -> Result<LongRangeReport> {
    let task = build_task(cfg)?;
    let sparse = run_arm(&task, cfg, AttentionMode::Sparse, cfg.model.max_code_len)?;
    let truncated = run_arm(&task, cfg, AttentionMode::Dense, cfg.truncate_to)?;
    Ok(LongRangeReport { chance: 1.0 / CLASS_NAMES.len() as f64, min_definition_token: task.min_definition_token, sparse, truncated })
}
