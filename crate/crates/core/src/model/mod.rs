//! The two neural module types and their parameters.
//!
//! Everything is plain f64 with hand-rolled forward and backward passes:
//! one shared token-embedding table, one self-attention block encoding code
//! tokens, an entity head scoring tokens against a phrase, and three action
//! module variants (one per number of entity inputs) that predict the
//! masked argument's token scores cloze-style.

pub mod gradcheck;
pub mod graph;
mod linalg;

mod backward;
mod forward;

pub use forward::{
    action_forward, action_forward_cached, encode_code, entity_forward, entity_forward_cached,
    joint_verb_prep_embed, positional_encoding, ActionCache, EncodeCache, EntityCache,
    JointCache,
};
pub use linalg::{dot, sigmoid, Mat};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize_query, Corpus};
use crate::layout;
use crate::parser::QueryParser;

/// Number of action-module variants (1 to 3 entity inputs).
pub const NUM_VARIANTS: usize = 3;

/// Per-token relevance scores in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TokenScoreVector {
    pub scores: Vec<f64>,
}

impl TokenScoreVector {
    pub fn new(scores: Vec<f64>) -> Self {
        debug_assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
        TokenScoreVector { scores }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("action evaluation has variant {expected} but {got} seen score vectors were supplied")]
    VariantMismatch { expected: usize, got: usize },
    #[error("snippet has {got} tokens, exceeding the configured maximum {max}")]
    TooManyTokens { got: usize, max: usize },
    #[error("non-finite gradient encountered in {0}")]
    NonFiniteGradient(String),
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format error: {0}")]
    Format(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Embedding and encoder width.
    pub d: usize,
    /// Hidden width of the two-layer heads.
    pub h: usize,
    /// Maximum tokens per snippet.
    pub n_max: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams { d: 64, h: 128, n_max: 256 }
    }
}

/// Token vocabulary; id 0 is the out-of-vocabulary bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    words: IndexMap<String, usize>,
}

impl Vocab {
    /// Vocabulary over all code tokens plus all query words, verbs and
    /// prepositions reachable through parsing.
    pub fn build(corpus: &Corpus, parser: &QueryParser) -> Self {
        let mut words = IndexMap::new();
        let mut add = |w: &str| {
            let next = words.len() + 1;
            words.entry(w.to_lowercase()).or_insert(next);
        };
        for snippet in corpus.snippets() {
            for tok in &snippet.tokens {
                add(&tok.text);
            }
        }
        for query in corpus.queries() {
            for w in tokenize_query(&query.raw_text) {
                add(&w);
            }
            if let Ok(parse) = parser.parse_raw(&query.raw_text) {
                if let Ok(l) = layout::compile(&parse) {
                    for eval in &l.evaluations {
                        add(&eval.verb);
                        for (prep, phrase) in
                            eval.seen_args.iter().chain(std::iter::once(&eval.masked_arg))
                        {
                            if let Some(p) = prep {
                                add(p);
                            }
                            for w in tokenize_query(phrase) {
                                add(&w);
                            }
                        }
                    }
                }
            }
        }
        Vocab { words }
    }

    /// Lookup a word's id; unknown words map to the OOV bucket (0).
    pub fn id(&self, word: &str) -> usize {
        self.words.get(&word.to_lowercase()).copied().unwrap_or(0)
    }

    /// Total embedding rows, including the OOV bucket.
    pub fn len(&self) -> usize {
        self.words.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Single-head self-attention block weights, all (d, d).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
}

impl AttentionParams {
    fn init(d: usize, rng: &mut ChaCha8Rng) -> Self {
        AttentionParams {
            wq: Mat::init(d, d, rng),
            wk: Mat::init(d, d, rng),
            wv: Mat::init(d, d, rng),
            wo: Mat::init(d, d, rng),
        }
    }

    fn zeros(d: usize) -> Self {
        AttentionParams {
            wq: Mat::zeros(d, d),
            wk: Mat::zeros(d, d),
            wv: Mat::zeros(d, d),
            wo: Mat::zeros(d, d),
        }
    }
}

/// Two-layer feed-forward weights: in -> hidden (tanh) -> out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLayer {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

impl TwoLayer {
    fn init(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        TwoLayer {
            w1: Mat::init(input, hidden, rng),
            b1: vec![0.0; hidden],
            w2: Mat::init(hidden, output, rng),
            b2: vec![0.0; output],
        }
    }

    fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        TwoLayer {
            w1: Mat::zeros(input, hidden),
            b1: vec![0.0; hidden],
            w2: Mat::zeros(hidden, output),
            b2: vec![0.0; output],
        }
    }
}

/// Weights of one action-module variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionVariantParams {
    /// Joint verb-preposition embedder: 2d -> h -> d.
    pub joint: TwoLayer,
    /// Projects the stacked per-token input (width depends on the variant)
    /// down to d before the attention block.
    pub input_proj: Mat,
    pub input_bias: Vec<f64>,
    pub attention: AttentionParams,
    /// Token score head: d -> h -> 1.
    pub head: TwoLayer,
}

/// Stacked per-token input width for a variant: the masked argument's joint
/// embedding, each seen argument's joint embedding plus its entity score,
/// and the code token row.
pub fn stacked_width(d: usize, variant: usize) -> usize {
    2 * d + (variant - 1) * (d + 1)
}

impl ActionVariantParams {
    fn init(hp: &HyperParams, variant: usize, rng: &mut ChaCha8Rng) -> Self {
        let width = stacked_width(hp.d, variant);
        ActionVariantParams {
            joint: TwoLayer::init(2 * hp.d, hp.h, hp.d, rng),
            input_proj: Mat::init(width, hp.d, rng),
            input_bias: vec![0.0; hp.d],
            attention: AttentionParams::init(hp.d, rng),
            head: TwoLayer::init(hp.d, hp.h, 1, rng),
        }
    }

    fn zeros(hp: &HyperParams, variant: usize) -> Self {
        let width = stacked_width(hp.d, variant);
        ActionVariantParams {
            joint: TwoLayer::zeros(2 * hp.d, hp.h, hp.d),
            input_proj: Mat::zeros(width, hp.d),
            input_bias: vec![0.0; hp.d],
            attention: AttentionParams::zeros(hp.d),
            head: TwoLayer::zeros(hp.d, hp.h, 1),
        }
    }
}

/// Every learnable tensor. [`ModelGrads`] shares this shape so updates and
/// gradient checks can walk parameters and gradients in lockstep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub embeddings: Mat,
    pub encoder: AttentionParams,
    pub entity_head: TwoLayer,
    pub variants: Vec<ActionVariantParams>,
    /// Per-position weights for the weighted-cosine similarity metric.
    pub cosine_weights: Vec<f64>,
}

pub type ModelGrads = ParamSet;

impl ParamSet {
    pub fn zeros_like(hp: &HyperParams, vocab_len: usize) -> Self {
        ParamSet {
            embeddings: Mat::zeros(vocab_len, hp.d),
            encoder: AttentionParams::zeros(hp.d),
            entity_head: TwoLayer::zeros(hp.d, hp.h, 1),
            variants: (1..=NUM_VARIANTS).map(|v| ActionVariantParams::zeros(hp, v)).collect(),
            cosine_weights: vec![0.0; hp.n_max],
        }
    }

    /// Visit every tensor as a named flat slice, in a fixed order.
    pub fn for_each_slice<'a>(&'a self, f: &mut impl FnMut(&'static str, &'a [f64])) {
        f("embeddings", &self.embeddings.data);
        f("encoder.wq", &self.encoder.wq.data);
        f("encoder.wk", &self.encoder.wk.data);
        f("encoder.wv", &self.encoder.wv.data);
        f("encoder.wo", &self.encoder.wo.data);
        f("entity_head.w1", &self.entity_head.w1.data);
        f("entity_head.b1", &self.entity_head.b1);
        f("entity_head.w2", &self.entity_head.w2.data);
        f("entity_head.b2", &self.entity_head.b2);
        for (i, v) in self.variants.iter().enumerate() {
            let names = variant_slice_names(i);
            f(names[0], &v.joint.w1.data);
            f(names[1], &v.joint.b1);
            f(names[2], &v.joint.w2.data);
            f(names[3], &v.joint.b2);
            f(names[4], &v.input_proj.data);
            f(names[5], &v.input_bias);
            f(names[6], &v.attention.wq.data);
            f(names[7], &v.attention.wk.data);
            f(names[8], &v.attention.wv.data);
            f(names[9], &v.attention.wo.data);
            f(names[10], &v.head.w1.data);
            f(names[11], &v.head.b1);
            f(names[12], &v.head.w2.data);
            f(names[13], &v.head.b2);
        }
        f("cosine_weights", &self.cosine_weights);
    }

    pub fn for_each_slice_mut(&mut self, f: &mut impl FnMut(&'static str, &mut [f64])) {
        f("embeddings", &mut self.embeddings.data);
        f("encoder.wq", &mut self.encoder.wq.data);
        f("encoder.wk", &mut self.encoder.wk.data);
        f("encoder.wv", &mut self.encoder.wv.data);
        f("encoder.wo", &mut self.encoder.wo.data);
        f("entity_head.w1", &mut self.entity_head.w1.data);
        f("entity_head.b1", &mut self.entity_head.b1);
        f("entity_head.w2", &mut self.entity_head.w2.data);
        f("entity_head.b2", &mut self.entity_head.b2);
        for (i, v) in self.variants.iter_mut().enumerate() {
            let names = variant_slice_names(i);
            f(names[0], &mut v.joint.w1.data);
            f(names[1], &mut v.joint.b1);
            f(names[2], &mut v.joint.w2.data);
            f(names[3], &mut v.joint.b2);
            f(names[4], &mut v.input_proj.data);
            f(names[5], &mut v.input_bias);
            f(names[6], &mut v.attention.wq.data);
            f(names[7], &mut v.attention.wk.data);
            f(names[8], &mut v.attention.wv.data);
            f(names[9], &mut v.attention.wo.data);
            f(names[10], &mut v.head.w1.data);
            f(names[11], &mut v.head.b1);
            f(names[12], &mut v.head.w2.data);
            f(names[13], &mut v.head.b2);
        }
        f("cosine_weights", &mut self.cosine_weights);
    }

    pub fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.for_each_slice(&mut |_, s| n += s.len());
        n
    }

    pub fn get_flat(&self, index: usize) -> (&'static str, f64) {
        let mut remaining = index;
        let mut result = None;
        self.for_each_slice(&mut |name, s| {
            if result.is_none() {
                if remaining < s.len() {
                    result = Some((name, s[remaining]));
                } else {
                    remaining -= s.len();
                }
            }
        });
        result.expect("flat index out of range")
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        let mut remaining = index;
        let mut done = false;
        self.for_each_slice_mut(&mut |_, s| {
            if !done {
                if remaining < s.len() {
                    s[remaining] = value;
                    done = true;
                } else {
                    remaining -= s.len();
                }
            }
        });
        assert!(done, "flat index out of range");
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_slice(&mut |_, s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }

    /// In-place SGD step: p -= lr * g for every parameter.
    pub fn sgd_step(&mut self, grads: &ParamSet, lr: f64) {
        self.sgd_step_filtered(grads, lr, |_| true);
    }

    /// SGD step restricted to tensors whose name the filter accepts; used
    /// by the pretraining phases to freeze parameter groups.
    pub fn sgd_step_filtered(
        &mut self,
        grads: &ParamSet,
        lr: f64,
        filter: impl Fn(&str) -> bool,
    ) {
        let mut grad_slices: Vec<&[f64]> = Vec::new();
        grads.for_each_slice(&mut |_, s| grad_slices.push(s));
        let mut i = 0;
        self.for_each_slice_mut(&mut |name, p| {
            if filter(name) {
                let g = grad_slices[i];
                debug_assert_eq!(p.len(), g.len());
                for (pv, gv) in p.iter_mut().zip(g) {
                    *pv -= lr * gv;
                }
            }
            i += 1;
        });
    }
}

fn variant_slice_names(i: usize) -> [&'static str; 14] {
    const NAMES: [[&str; 14]; NUM_VARIANTS] = [
        [
            "v1.joint.w1", "v1.joint.b1", "v1.joint.w2", "v1.joint.b2", "v1.input_proj",
            "v1.input_bias", "v1.attn.wq", "v1.attn.wk", "v1.attn.wv", "v1.attn.wo",
            "v1.head.w1", "v1.head.b1", "v1.head.w2", "v1.head.b2",
        ],
        [
            "v2.joint.w1", "v2.joint.b1", "v2.joint.w2", "v2.joint.b2", "v2.input_proj",
            "v2.input_bias", "v2.attn.wq", "v2.attn.wk", "v2.attn.wv", "v2.attn.wo",
            "v2.head.w1", "v2.head.b1", "v2.head.w2", "v2.head.b2",
        ],
        [
            "v3.joint.w1", "v3.joint.b1", "v3.joint.w2", "v3.joint.b2", "v3.input_proj",
            "v3.input_bias", "v3.attn.wq", "v3.attn.wk", "v3.attn.wv", "v3.attn.wo",
            "v3.head.w1", "v3.head.b1", "v3.head.w2", "v3.head.b2",
        ],
    ];
    NAMES[i]
}

/// Full model: hyperparameters, vocabulary and all learnable tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub hp: HyperParams,
    pub vocab: Vocab,
    pub set: ParamSet,
}

impl ModelParams {
    /// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization;
    /// cosine weights start at 1.
    pub fn init(hp: HyperParams, vocab: Vocab, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = ParamSet {
            embeddings: Mat::init(vocab.len(), hp.d, &mut rng),
            encoder: AttentionParams::init(hp.d, &mut rng),
            entity_head: TwoLayer::init(hp.d, hp.h, 1, &mut rng),
            variants: (1..=NUM_VARIANTS)
                .map(|v| ActionVariantParams::init(&hp, v, &mut rng))
                .collect(),
            cosine_weights: vec![1.0; hp.n_max],
        };
        ModelParams { hp, vocab, set }
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ParamSet::zeros_like(&self.hp, self.vocab.len())
    }

    pub fn embedding(&self, id: usize) -> &[f64] {
        self.set.embeddings.row(id)
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    params: ModelParams,
}

/// Write the model as a versioned JSON tensor dump.
pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<std::path::Path>) -> Result<(), ModelError> {
    let file = std::fs::File::create(path)?;
    let writer = std::io::BufWriter::new(file);
    serde_json::to_writer(writer, &Checkpoint { version: CHECKPOINT_VERSION, params: params.clone() })?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<std::path::Path>) -> Result<ModelParams, ModelError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let ckpt: Checkpoint = serde_json::from_reader(reader)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(ModelError::Version(ckpt.version));
    }
    Ok(ckpt.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_synthetic_corpus;

    #[test]
    fn vocab_maps_known_words_and_oov() {
        let corpus = generate_synthetic_corpus(0, 5).unwrap();
        let vocab = Vocab::build(&corpus, &QueryParser::default());
        assert!(vocab.len() > 1);
        assert_eq!(vocab.id("certainly-not-a-word-in-the-corpus"), 0);
        let some_token = corpus.snippets().next().unwrap().tokens[0].text.clone();
        assert!(vocab.id(&some_token) > 0);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let corpus = generate_synthetic_corpus(0, 3).unwrap();
        let vocab = Vocab::build(&corpus, &QueryParser::default());
        let hp = HyperParams { d: 8, h: 4, n_max: 32 };
        let a = ModelParams::init(hp, vocab.clone(), 42);
        let b = ModelParams::init(hp, vocab.clone(), 42);
        assert_eq!(a, b);
        let c = ModelParams::init(hp, vocab, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn flat_indexing_round_trips() {
        let corpus = generate_synthetic_corpus(0, 2).unwrap();
        let vocab = Vocab::build(&corpus, &QueryParser::default());
        let hp = HyperParams { d: 4, h: 3, n_max: 16 };
        let mut params = ModelParams::init(hp, vocab, 0);
        let n = params.set.num_parameters();
        assert!(n > 0);
        for idx in [0, 1, n / 2, n - 1] {
            let (_, v) = params.set.get_flat(idx);
            params.set.set_flat(idx, v + 1.0);
            let (_, v2) = params.set.get_flat(idx);
            assert_eq!(v2, v + 1.0);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let corpus = generate_synthetic_corpus(0, 2).unwrap();
        let vocab = Vocab::build(&corpus, &QueryParser::default());
        let hp = HyperParams { d: 4, h: 3, n_max: 16 };
        let params = ModelParams::init(hp, vocab, 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(params, loaded);
    }
}
