//! Encoder–decoder summarizer: a sparse-attention encoder over code tokens
//! and a dense causal decoder with cross-attention over summary words.

use std::collections::HashMap;
use std::path::Path;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::analyze;
use crate::archive;
use crate::attention::{attention_block, AttentionConfig, AttnIds, AttnVars};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::DenseRule;
use crate::mask::{AttentionMaskSpec, AttentionPattern};
use crate::metrics;
use crate::params::{Adam, AdamConfig, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::tokenizer::{PositionCaps, PositionSets, TokenizedSequence, Tokenizer};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Window + global + identifier pattern.
    #[default]
    Sparse,
    /// Every token attends to every token.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_h: usize,
    pub heads: usize,
    pub r: usize,
    pub w: usize,
    pub d_ff: usize,
    pub caps: PositionCaps,
    pub max_code_len: usize,
    pub max_summary_len: usize,
    pub code_vocab_size: usize,
    pub summary_vocab_size: usize,
    pub encoder_attention: AttentionMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_layers: 4,
            decoder_layers: 2,
            d_h: 128,
            heads: 4,
            r: 8,
            w: 128,
            d_ff: 512,
            caps: PositionCaps::default(),
            max_code_len: 4096,
            max_summary_len: 128,
            code_vocab_size: 2000,
            summary_vocab_size: 5000,
            encoder_attention: AttentionMode::Sparse,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig { d_h: self.d_h, heads: self.heads, r: self.r, w: self.w, caps: self.caps }
    }

    pub fn validate(&self) -> Result<()> {
        self.attention().validate()?;
        let counts = [
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("d_ff", self.d_ff),
            ("max_code_len", self.max_code_len),
            ("max_summary_len", self.max_summary_len),
            ("code_vocab_size", self.code_vocab_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.summary_vocab_size <= SPECIALS.len() {
            return Err(Error::Config("summary vocabulary must hold more than the special tokens".into()));
        }
        Ok(())
    }
}

/// Word-level summary vocabulary with four reserved ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryVocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl SummaryVocab {
    /// Most frequent words first, ties alphabetical, capped at `max_size`
    /// entries including specials.
    pub fn build<S: AsRef<str>>(summaries: impl IntoIterator<Item = S>, max_size: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for s in summaries {
            for w in metrics::normalize(s.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let words = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(w, _)| w))
            .take(max_size.max(SPECIALS.len()))
            .collect();
        Self::from_words(words)
    }

    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Self { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        metrics::normalize(text).iter().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().filter(|&&id| id >= UNK).map(|&id| self.words[id as usize].as_str()).collect::<Vec<_>>().join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.words)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let words: Vec<String> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if words.len() < SPECIALS.len() || words.iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(Error::Data("summary vocabulary lacks the reserved tokens".into()));
        }
        Ok(Self::from_words(words))
    }
}

/// Tokenizes code and marks global/identifier positions for the encoder.
pub fn prepare_code(tokenizer: &Tokenizer, code: &str, config: &ModelConfig) -> (TokenizedSequence, PositionSets) {
    let seq = tokenizer.encode(code, config.max_code_len);
    let positions = crate::tokenizer::project_positions(&seq, &analyze(code), &config.caps);
    (seq, positions)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub code_ids: Vec<u32>,
    pub positions: PositionSets,
    pub summary_ids: Vec<u32>,
    pub reference: String,
}

impl Example {
    pub fn new(tokenizer: &Tokenizer, vocab: &SummaryVocab, config: &ModelConfig, code: &str, summary: &str) -> Self {
        let (seq, positions) = prepare_code(tokenizer, code, config);
        Self { code_ids: seq.token_ids, positions, summary_ids: vocab.encode(summary), reference: summary.to_string() }
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct FeedForward {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    ln1: Norm,
    attn: AttnIds,
    ln2: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    ln1: Norm,
    self_attn: AttnIds,
    ln2: Norm,
    cross: AttnIds,
    ln3: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
struct ModelIds {
    code_embed: ParamId,
    code_pos: ParamId,
    encoder: Vec<EncoderLayer>,
    enc_norm: Norm,
    summary_embed: ParamId,
    summary_pos: ParamId,
    decoder: Vec<DecoderLayer>,
    dec_norm: Norm,
    out_w: ParamId,
    out_b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Beam(usize),
}

#[derive(Debug, Clone)]
pub struct Summarizer {
    pub config: ModelConfig,
    pub store: ParamStore,
    ids: ModelIds,
}

fn norm(store: &mut ParamStore, name: &str, d: usize) -> Norm {
    Norm {
        gamma: store.add(format!("{name}.gamma"), Tensor::from_vec(1, d, vec![1.0; d]).unwrap()),
        beta: store.add(format!("{name}.beta"), Tensor::zeros(1, d)),
    }
}

fn feed_forward(store: &mut ParamStore, name: &str, d: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> FeedForward {
    FeedForward {
        w1: store.add(format!("{name}.w1"), Tensor::randn(d, d_ff, 1.0 / (d as f64).sqrt(), rng)),
        b1: store.add(format!("{name}.b1"), Tensor::zeros(1, d_ff)),
        w2: store.add(format!("{name}.w2"), Tensor::randn(d_ff, d, 1.0 / (d_ff as f64).sqrt(), rng)),
        b2: store.add(format!("{name}.b2"), Tensor::zeros(1, d)),
    }
}

/// Handles for cross-attention keys and values of every decoder layer.
type CrossMemory = Vec<(Var, Var)>;

impl Summarizer {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.d_h;
        let attn = config.attention();
        let code_embed = store.add("code_embed", Tensor::randn(config.code_vocab_size + 1, d, 0.02, &mut rng));
        let code_pos = store.add("code_pos", Tensor::randn(config.max_code_len, d, 0.02, &mut rng));
        let encoder = (0..config.encoder_layers)
            .map(|l| EncoderLayer {
                ln1: norm(&mut store, &format!("enc{l}.ln1"), d),
                attn: AttnIds::init(&mut store, &format!("enc{l}.attn"), &attn, true, &mut rng),
                ln2: norm(&mut store, &format!("enc{l}.ln2"), d),
                ff: feed_forward(&mut store, &format!("enc{l}.ff"), d, config.d_ff, &mut rng),
            })
            .collect();
        let enc_norm = norm(&mut store, "enc_norm", d);
        let summary_embed = store.add("summary_embed", Tensor::randn(config.summary_vocab_size, d, 0.02, &mut rng));
        let summary_pos = store.add("summary_pos", Tensor::randn(config.max_summary_len, d, 0.02, &mut rng));
        let decoder = (0..config.decoder_layers)
            .map(|l| DecoderLayer {
                ln1: norm(&mut store, &format!("dec{l}.ln1"), d),
                self_attn: AttnIds::init(&mut store, &format!("dec{l}.self"), &attn, false, &mut rng),
                ln2: norm(&mut store, &format!("dec{l}.ln2"), d),
                cross: AttnIds::init(&mut store, &format!("dec{l}.cross"), &attn, false, &mut rng),
                ln3: norm(&mut store, &format!("dec{l}.ln3"), d),
                ff: feed_forward(&mut store, &format!("dec{l}.ff"), d, config.d_ff, &mut rng),
            })
            .collect();
        let dec_norm = norm(&mut store, "dec_norm", d);
        let out_w = store.add("out_w", Tensor::randn(d, config.summary_vocab_size, 1.0 / (d as f64).sqrt(), &mut rng));
        let out_b = store.add("out_b", Tensor::zeros(1, config.summary_vocab_size));
        let ids = ModelIds { code_embed, code_pos, encoder, enc_norm, summary_embed, summary_pos, decoder, dec_norm, out_w, out_b };
        Ok(Self { config, store, ids })
    }

    pub fn code_pad_id(&self) -> u32 {
        self.config.code_vocab_size as u32
    }

    fn layer_norm(&self, g: &mut Graph, x: Var, n: Norm) -> Var {
        let (gamma, beta) = (g.param(&self.store, n.gamma), g.param(&self.store, n.beta));
        g.layer_norm(x, gamma, beta)
    }

    fn feed_forward(&self, g: &mut Graph, x: Var, ff: FeedForward) -> Var {
        let p = |g: &mut Graph, id| g.param(&self.store, id);
        let (w1, b1, w2, b2) = (p(g, ff.w1), p(g, ff.b1), p(g, ff.w2), p(g, ff.b2));
        let h = g.matmul(x, w1);
        let h = g.add_row(h, b1);
        let h = g.gelu(h);
        let h = g.matmul(h, w2);
        g.add_row(h, b2)
    }

    /// Encoder over `code_ids` followed by padding up to `total` rows. Pad
    /// rows attend only to themselves and are never attended to.
    fn encoder_graph(&self, g: &mut Graph, code_ids: &[u32], positions: &PositionSets, total: usize) -> Result<Var> {
        let n = code_ids.len();
        if total > self.config.max_code_len {
            return Err(Error::Length { len: total, max: self.config.max_code_len });
        }
        if let Some(&bad) = code_ids.iter().find(|&&t| t as usize >= self.config.code_vocab_size) {
            return Err(Error::Data(format!("code token {bad} outside vocabulary of {}", self.config.code_vocab_size)));
        }
        let (pattern, roles) = match self.config.encoder_attention {
            AttentionMode::Sparse => {
                let spec = AttentionMaskSpec::new(n, self.config.w, &positions.global, &positions.ident)?;
                let mut roles = vec![false; total];
                for &p in spec.global() {
                    roles[p] = true;
                }
                (AttentionPattern::from_spec_padded(&spec, total), roles)
            }
            AttentionMode::Dense => (AttentionPattern::full_padded(n, total), vec![false; total]),
        };
        let pattern = Rc::new(pattern);
        let roles: Rc<[bool]> = roles.into();
        let ids: Vec<usize> = code_ids.iter().map(|&t| t as usize).chain(std::iter::repeat_n(self.code_pad_id() as usize, total - n)).collect();
        let (embed, pos_table) = (g.param(&self.store, self.ids.code_embed), g.param(&self.store, self.ids.code_pos));
        let tok = g.gather(embed, &ids);
        let pos_ids: Vec<usize> = (0..total).collect();
        let pos = g.gather(pos_table, &pos_ids);
        let mut x = g.add(tok, pos);
        for layer in &self.ids.encoder {
            let h = self.layer_norm(g, x, layer.ln1);
            let vars = layer.attn.bind(g, &self.store);
            let a = attention_block(g, &vars, self.config.heads, h, &roles, &pattern);
            x = g.add(x, a);
            let h = self.layer_norm(g, x, layer.ln2);
            let f = self.feed_forward(g, h, layer.ff);
            x = g.add(x, f);
        }
        Ok(self.layer_norm(g, x, self.ids.enc_norm))
    }

    /// Final encoder hidden states, one row per code token.
    pub fn encode_file(&self, seq: &TokenizedSequence, positions: &PositionSets) -> Result<Tensor> {
        self.encode_file_padded(seq, positions, seq.n())
    }

    /// Hidden states with `total - n` padding rows appended.
    pub fn encode_file_padded(&self, seq: &TokenizedSequence, positions: &PositionSets, total: usize) -> Result<Tensor> {
        if seq.n() > self.config.max_code_len {
            return Err(Error::Length { len: seq.n(), max: self.config.max_code_len });
        }
        let mut g = Graph::new();
        let out = self.encoder_graph(&mut g, &seq.token_ids, positions, total.max(seq.n()))?;
        Ok(g.value(out).clone())
    }

    fn cross_memory(&self, g: &mut Graph, enc: Var) -> CrossMemory {
        self.ids
            .decoder
            .iter()
            .map(|layer| {
                let (wk, wv) = (g.param(&self.store, layer.cross.wk), g.param(&self.store, layer.cross.wv));
                (g.matmul(enc, wk), g.matmul(enc, wv))
            })
            .collect()
    }

    /// Logits for every decoder input position.
    fn decoder_graph(&self, g: &mut Graph, memory: &CrossMemory, key_len: usize, inputs: &[u32]) -> Var {
        let m = inputs.len();
        let ids: Vec<usize> = inputs.iter().map(|&t| t as usize).collect();
        let (embed, pos_table) = (g.param(&self.store, self.ids.summary_embed), g.param(&self.store, self.ids.summary_pos));
        let tok = g.gather(embed, &ids);
        let pos_ids: Vec<usize> = (0..m).collect();
        let pos = g.gather(pos_table, &pos_ids);
        let mut x = g.add(tok, pos);
        let heads = self.config.heads;
        for (layer, &(ck, cv)) in self.ids.decoder.iter().zip(memory) {
            let h = self.layer_norm(g, x, layer.ln1);
            let AttnVars { wq, wk, wv, wo, .. } = layer.self_attn.bind(g, &self.store);
            let (q, k, v) = (g.matmul(h, wq), g.matmul(h, wk), g.matmul(h, wv));
            let a = g.dense_attention(q, k, v, heads, DenseRule { causal: true, key_len: m });
            let a = g.matmul(a, wo);
            x = g.add(x, a);

            let h = self.layer_norm(g, x, layer.ln2);
            let (cq, co) = (g.param(&self.store, layer.cross.wq), g.param(&self.store, layer.cross.wo));
            let q = g.matmul(h, cq);
            let c = g.dense_attention(q, ck, cv, heads, DenseRule::full(key_len));
            let c = g.matmul(c, co);
            x = g.add(x, c);

            let h = self.layer_norm(g, x, layer.ln3);
            let f = self.feed_forward(g, h, layer.ff);
            x = g.add(x, f);
        }
        let h = self.layer_norm(g, x, self.ids.dec_norm);
        let (ow, ob) = (g.param(&self.store, self.ids.out_w), g.param(&self.store, self.ids.out_b));
        let logits = g.matmul(h, ow);
        g.add_row(logits, ob)
    }

    /// Decoder inputs and targets for teacher forcing.
    fn teacher_pair(&self, summary: &[u32]) -> (Vec<u32>, Vec<Option<usize>>) {
        let body = &summary[..summary.len().min(self.config.max_summary_len - 1)];
        let inputs = std::iter::once(BOS).chain(body.iter().copied()).collect();
        let targets = body.iter().chain(std::iter::once(&EOS)).map(|&t| Some(t as usize)).collect();
        (inputs, targets)
    }

    fn loss_graph(&self, g: &mut Graph, ex: &Example) -> Result<Var> {
        let enc = self.encoder_graph(g, &ex.code_ids, &ex.positions, ex.code_ids.len())?;
        let memory = self.cross_memory(g, enc);
        let (inputs, targets) = self.teacher_pair(&ex.summary_ids);
        let logits = self.decoder_graph(g, &memory, ex.code_ids.len(), &inputs);
        Ok(g.cross_entropy(logits, &targets))
    }

    /// Mean teacher-forced cross-entropy in nats per summary token.
    pub fn loss(&self, ex: &Example) -> Result<f64> {
        let mut g = Graph::new();
        let l = self.loss_graph(&mut g, ex)?;
        Ok(g.value(l).data[0])
    }

    /// Teacher-forced logits, optionally with the code padded to `pad_to`.
    pub fn teacher_logits(&self, ex: &Example, pad_to: Option<usize>) -> Result<Tensor> {
        let n = ex.code_ids.len();
        let mut g = Graph::new();
        let enc = self.encoder_graph(&mut g, &ex.code_ids, &ex.positions, pad_to.unwrap_or(n).max(n))?;
        let memory = self.cross_memory(&mut g, enc);
        let (inputs, _) = self.teacher_pair(&ex.summary_ids);
        let logits = self.decoder_graph(&mut g, &memory, n, &inputs);
        Ok(g.value(logits).clone())
    }

    /// Loss and parameter gradients for one example.
    pub fn gradients(&self, ex: &Example) -> Result<(f64, Vec<Option<Tensor>>)> {
        let mut g = Graph::new();
        let l = self.loss_graph(&mut g, ex)?;
        let grads = g.backward(l);
        Ok((g.value(l).data[0], g.param_grads(&grads, &self.store)))
    }

    /// One optimizer step on the mean gradient of `batch`. Returns the mean
    /// loss.
    pub fn train_step(&mut self, adam: &mut Adam, batch: &[&Example]) -> Result<f64> {
        let mut total: Vec<Option<Tensor>> = (0..self.store.len()).map(|_| None).collect();
        let mut loss = 0.0;
        for ex in batch {
            let (l, grads) = self.gradients(ex)?;
            loss += l;
            for (acc, g) in total.iter_mut().zip(grads) {
                match (acc.as_mut(), g) {
                    (Some(a), Some(g)) => a.add_assign(&g),
                    (None, Some(g)) => *acc = Some(g),
                    _ => {}
                }
            }
        }
        let scale = 1.0 / batch.len() as f64;
        for t in total.iter_mut().flatten() {
            for x in t.data.iter_mut() {
                *x *= scale;
            }
        }
        adam.update(&mut self.store, &total);
        Ok(loss * scale)
    }

    /// Summary token ids, without BOS/EOS.
    pub fn generate(&self, code_ids: &[u32], positions: &PositionSets, strategy: Strategy) -> Result<Vec<u32>> {
        let mut g = Graph::new();
        let enc = self.encoder_graph(&mut g, code_ids, positions, code_ids.len())?;
        let memory = self.cross_memory(&mut g, enc);
        let frozen: Vec<(Tensor, Tensor)> = memory.iter().map(|&(k, v)| (g.value(k).clone(), g.value(v).clone())).collect();
        let key_len = code_ids.len();
        let step = |prefix: &[u32]| -> Vec<f64> {
            let mut g = Graph::new();
            let memory: CrossMemory = frozen.iter().map(|(k, v)| (g.leaf(k.clone()), g.leaf(v.clone()))).collect();
            let logits = self.decoder_graph(&mut g, &memory, key_len, prefix);
            log_softmax(g.value(logits).row(prefix.len() - 1))
        };
        let max_steps = self.config.max_summary_len - 1;
        let width = match strategy {
            Strategy::Greedy => 1,
            Strategy::Beam(k) => k.max(1),
        };
        Ok(beam_search(step, width, max_steps))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&self.config)?)?;
        archive::save(dir, &self.store)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(&std::fs::read_to_string(dir.join("config.json"))?)?;
        let mut model = Self::new(config)?;
        archive::restore(&mut model.store, archive::load(dir)?)?;
        Ok(model)
    }
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// Beam search over raw log-probability sums. Width 1 is greedy decoding;
/// ties go to the lower token id.
fn beam_search(step: impl Fn(&[u32]) -> Vec<f64>, width: usize, max_steps: usize) -> Vec<u32> {
    let mut beams: Vec<(Vec<u32>, f64)> = vec![(vec![BOS], 0.0)];
    let mut finished: Vec<(Vec<u32>, f64)> = Vec::new();
    for _ in 0..max_steps {
        let mut candidates: Vec<(Vec<u32>, f64)> = Vec::new();
        for (prefix, score) in &beams {
            let lp = step(prefix);
            let mut order: Vec<usize> = (0..lp.len()).filter(|&t| t as u32 != PAD && t as u32 != BOS).collect();
            order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
            for &t in order.iter().take(width) {
                let mut next = prefix.clone();
                next.push(t as u32);
                candidates.push((next, score + lp[t]));
            }
        }
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        beams.clear();
        for (seq, score) in candidates.into_iter().take(width) {
            if *seq.last().unwrap() == EOS {
                finished.push((seq, score));
            } else {
                beams.push((seq, score));
            }
        }
        if beams.is_empty() || finished.len() >= width {
            break;
        }
    }
    finished.extend(beams);
    let best = finished.into_iter().max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0))).map(|(s, _)| s).unwrap_or_default();
    best.into_iter().skip(1).filter(|&t| t != EOS).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 5e-5, batch: 16, epochs: 10, patience: 2, clip_norm: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_bleu: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub epoch: usize,
    pub adam: Adam,
    pub best_dev_bleu: f64,
    pub epochs_since_improvement: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochLog>,
}

/// Greedy-decodes `examples` and scores them with macro BLEU.
pub fn dev_bleu(model: &Summarizer, vocab: &SummaryVocab, examples: &[Example]) -> Result<f64> {
    let mut pairs = Vec::with_capacity(examples.len());
    for ex in examples {
        let out = model.generate(&ex.code_ids, &ex.positions, Strategy::Greedy)?;
        pairs.push((vocab.decode(&out), ex.reference.clone()));
    }
    Ok(metrics::evaluate_corpus(&pairs)?.bleu)
}

/// Trains with Adam and keeps the parameters with the best dev BLEU.
/// Stops once dev BLEU has not improved for more than `patience` epochs.
pub fn train(
    model: &mut Summarizer,
    vocab: &SummaryVocab,
    train_set: &[Example],
    dev_set: &[Example],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainState> {
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::Data("training needs non-empty train and dev splits".into()));
    }
    if config.batch == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let adam_config = AdamConfig { lr: config.lr, clip_norm: config.clip_norm, ..AdamConfig::default() };
    let mut state = TrainState {
        step: 0,
        epoch: 0,
        adam: Adam::new(adam_config, &model.store),
        best_dev_bleu: f64::NEG_INFINITY,
        epochs_since_improvement: 0,
        stopped_early: false,
        history: Vec::new(),
    };
    let mut best = model.store.clone();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        state.epoch = epoch + 1;
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64)));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            loss_sum += model.train_step(&mut state.adam, &batch)? * batch.len() as f64;
            state.step += 1;
        }
        let dev = dev_bleu(model, vocab, dev_set)?;
        let log = EpochLog { epoch: state.epoch, train_loss: loss_sum / train_set.len() as f64, dev_bleu: dev };
        log::info!("epoch {} loss {:.4} dev bleu {:.4}", log.epoch, log.train_loss, log.dev_bleu);
        on_epoch(&log);
        state.history.push(log);
        if dev > state.best_dev_bleu {
            state.best_dev_bleu = dev;
            state.epochs_since_improvement = 0;
            best = model.store.clone();
        } else {
            state.epochs_since_improvement += 1;
            if state.epochs_since_improvement > config.patience {
                state.stopped_early = true;
                break;
            }
        }
    }
    model.store = best;
    Ok(state)
}

/// Model plus the tokenizer and vocabulary it was trained with.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Summarizer,
    pub tokenizer: Tokenizer,
    pub vocab: SummaryVocab,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.model.save(dir)?;
        self.tokenizer.save(&dir.join("tokenizer.json"))?;
        self.vocab.save(&dir.join("summary_vocab.json"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            model: Summarizer::load(dir)?,
            tokenizer: Tokenizer::load(&dir.join("tokenizer.json"))?,
            vocab: SummaryVocab::load(&dir.join("summary_vocab.json"))?,
        })
    }

    pub fn summarize(&self, code: &str, strategy: Strategy) -> Result<String> {
        let (seq, positions) = prepare_code(&self.tokenizer, code, &self.model.config);
        let ids = self.model.generate(&seq.token_ids, &positions, strategy)?;
        Ok(self.vocab.decode(&ids))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::train_tokenizer;

    fn tiny_config(code_vocab: usize, summary_vocab: usize) -> ModelConfig {
        ModelConfig {
            encoder_layers: 1,
            decoder_layers: 1,
            d_h: 16,
            heads: 2,
            r: 2,
            w: 4,
            d_ff: 32,
            max_code_len: 256,
            max_summary_len: 16,
            code_vocab_size: code_vocab,
            summary_vocab_size: summary_vocab,
            ..ModelConfig::default()
        }
    }

    const CODE: &str = "import os\n\nclass Loader:\n    def load(self, path):\n        return os.path.join(path, 'x')\n";

    fn setup() -> (Tokenizer, SummaryVocab, Summarizer) {
        let tok = train_tokenizer([CODE], 300).unwrap();
        let vocab = SummaryVocab::build(["load files from a directory path"], 50);
        let model = Summarizer::new(tiny_config(tok.vocab_size(), vocab.len())).unwrap();
        (tok, vocab, model)
    }

    #[test]
    fn vocab_round_trip() {
        let v = SummaryVocab::build(["b a a", "c"], 100);
        assert_eq!(v.len(), 7);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.encode("A zz"), vec![4, UNK]);
        assert_eq!(v.decode(&[BOS, 4, 5, EOS]), "a b");
    }

    #[test]
    fn single_token_encoding() {
        let (tok, _, model) = setup();
        let seq = tok.encode("x", 16);
        let out = model.encode_file(&seq, &PositionSets::default()).unwrap();
        assert_eq!(out.shape(), (1, 16));
        assert!(out.all_finite());
    }

    #[test]
    fn length_limit() {
        let (tok, _, model) = setup();
        let seq = tok.encode(&"x ".repeat(300), 4096);
        assert!(matches!(model.encode_file(&seq, &PositionSets::default()), Err(Error::Length { .. })));
    }

    #[test]
    fn padding_leaves_real_rows_unchanged() {
        let (tok, vocab, model) = setup();
        let ex = Example::new(&tok, &vocab, &model.config, CODE, "load files from a directory path");
        let plain = model.teacher_logits(&ex, None).unwrap();
        let padded = model.teacher_logits(&ex, Some(ex.code_ids.len() + 7)).unwrap();
        assert!(plain.max_abs_diff(&padded) < 1e-12);
    }

    #[test]
    fn beam_one_is_greedy_and_empty_code_works() {
        let (tok, vocab, model) = setup();
        let ex = Example::new(&tok, &vocab, &model.config, CODE, "x");
        let greedy = model.generate(&ex.code_ids, &ex.positions, Strategy::Greedy).unwrap();
        let beam = model.generate(&ex.code_ids, &ex.positions, Strategy::Beam(1)).unwrap();
        assert_eq!(greedy, beam);
        assert!(greedy.len() < model.config.max_summary_len);
        let empty = model.generate(&[], &PositionSets::default(), Strategy::Beam(3)).unwrap();
        assert!(empty.len() < model.config.max_summary_len);
    }

    #[test]
    fn checkpoint_round_trip() {
        let (tok, vocab, model) = setup();
        let dir = tempfile::tempdir().unwrap();
        let ckpt = Checkpoint { model, tokenizer: tok, vocab };
        ckpt.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.vocab, ckpt.vocab);
        assert_eq!(back.tokenizer, ckpt.tokenizer);
        for ((n1, a), (n2, b)) in back.model.store.iter().zip(ckpt.model.store.iter()) {
            assert_eq!(n1, n2);
            assert!(a.max_abs_diff(b) < 1e-6);
        }
    }

    #[test]
    fn config_validation() {
        assert!(Summarizer::new(ModelConfig { encoder_layers: 0, ..tiny_config(300, 10) }).is_err());
        assert!(Summarizer::new(ModelConfig { summary_vocab_size: 4, ..tiny_config(300, 10) }).is_err());
        let partial: ModelConfig = serde_json::from_str(r#"{"d_h": 64, "heads": 2}"#).unwrap();
        assert_eq!(partial.encoder_layers, 4);
        assert_eq!(partial.d_h, 64);
    }
}
