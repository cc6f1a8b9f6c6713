//! Combine module outputs into a match probability and re-rank first-stage
//! candidates with it.

mod bm25;
mod similarity;

pub use bm25::{Bm25Index, ExternalScoreRanker, FirstStageRanker, IndexError, BM25_B, BM25_K1};
pub use similarity::{l1_normalize, similarity, SimilarityConfig, SimilarityError, SimilarityMetric};

pub(crate) use similarity::similarity_grad;

use thiserror::Error;

use crate::corpus::{tokenize_query, CodeSnippet, Corpus, QueryRecord};
use crate::layout::{self, ActionEvaluation, ModuleLayout};
use crate::model::{
    action_forward_cached, encode_code, entity_forward_cached, EncodeCache, ModelError,
    ModelParams, TokenScoreVector,
};
use crate::parser::QueryParser;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("snippet {0:?} not present in corpus")]
    UnknownSnippet(String),
}

/// One ranked candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct RankEntry {
    pub snippet_id: String,
    pub first_stage_score: f64,
    pub rerank_score: Option<f64>,
}

impl RankEntry {
    /// The score currently ordering this entry.
    pub fn active_score(&self) -> f64 {
        self.rerank_score.unwrap_or(self.first_stage_score)
    }
}

/// Scored candidates for one query, sorted descending by the active score
/// with ties broken by ascending snippet id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankEntry>,
}

impl RankedList {
    /// 1-based rank of a snippet, if present.
    pub fn rank_of(&self, snippet_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.snippet_id == snippet_id).map(|p| p + 1)
    }
}

/// Resolve the effective weighted-cosine weights for `n` tokens: explicit
/// config weights win, otherwise the model's learned weights.
fn effective_config(cfg: &SimilarityConfig, params: &ModelParams, n: usize) -> SimilarityConfig {
    let mut cfg = cfg.clone();
    if cfg.metric == SimilarityMetric::WeightedCosine && cfg.weighted_cosine_weights.is_none() {
        cfg.weighted_cosine_weights = Some(params.set.cosine_weights[..n.min(params.set.cosine_weights.len())].to_vec());
    }
    cfg
}

/// Probability that one action evaluation matches the snippet: the
/// similarity between the action module's prediction and the entity
/// module's output for the masked argument.
pub fn action_score(
    eval: &ActionEvaluation,
    snippet: &CodeSnippet,
    params: &ModelParams,
    cfg: &SimilarityConfig,
) -> Result<f64, ScoreError> {
    let encode = encode_code(snippet, params)?;
    action_score_cached(eval, &encode, params, cfg)
}

fn action_score_cached(
    eval: &ActionEvaluation,
    encode: &EncodeCache,
    params: &ModelParams,
    cfg: &SimilarityConfig,
) -> Result<f64, ScoreError> {
    let seen_scores: Vec<Vec<f64>> = eval
        .seen_args
        .iter()
        .map(|(_, phrase)| entity_forward_cached(phrase, encode, params).scores)
        .collect();
    let masked = entity_forward_cached(&eval.masked_arg.1, encode, params);
    let action = action_forward_cached(eval, &seen_scores, encode, params)?;

    let n = action.scores.len();
    let cfg = effective_config(cfg, params, n);
    let score = similarity(
        &TokenScoreVector::new(action.scores),
        &TokenScoreVector::new(masked.scores),
        &cfg,
    )?;
    Ok(score)
}

/// Match probability for a whole layout: the product of its action scores.
pub fn model_score(
    layout: &ModuleLayout,
    snippet: &CodeSnippet,
    params: &ModelParams,
    cfg: &SimilarityConfig,
) -> Result<f64, ScoreError> {
    let encode = encode_code(snippet, params)?;
    let mut product = 1.0;
    for eval in &layout.evaluations {
        product *= action_score_cached(eval, &encode, params, cfg)?;
    }
    Ok(product)
}

/// First-stage BM25 ranking over the whole corpus.
pub fn bm25_rank(
    query_tokens: &[String],
    corpus: &Corpus,
    k: usize,
) -> Result<RankedList, ScoreError> {
    let index = Bm25Index::build(corpus);
    Ok(index.rank("", query_tokens, None, k)?)
}

/// Re-rank the top `k` first-stage entries by model score, leaving lower
/// ranks untouched. Queries that fail to parse fall back to the first
/// stage unchanged; the return flags whether a fallback happened.
pub fn rerank(
    query: &QueryRecord,
    first_stage: &RankedList,
    corpus: &Corpus,
    parser: &QueryParser,
    params: &ModelParams,
    cfg: &SimilarityConfig,
    k: usize,
) -> Result<(RankedList, bool), ScoreError> {
    let layout = match parser.parse_raw(&query.raw_text).ok().and_then(|p| layout::compile(&p).ok()) {
        Some(layout) => layout,
        None => return Ok((first_stage.clone(), true)),
    };

    let top = first_stage.entries.len().min(k);
    let mut head: Vec<RankEntry> = first_stage.entries[..top].to_vec();
    for entry in head.iter_mut() {
        let snippet = corpus
            .snippet(&entry.snippet_id)
            .ok_or_else(|| ScoreError::UnknownSnippet(entry.snippet_id.clone()))?;
        entry.rerank_score = Some(model_score(&layout, snippet, params, cfg)?);
    }
    head.sort_by(|a, b| {
        b.active_score()
            .total_cmp(&a.active_score())
            .then_with(|| a.snippet_id.cmp(&b.snippet_id))
    });

    let mut entries = head;
    entries.extend_from_slice(&first_stage.entries[top..]);
    Ok((RankedList { query_id: first_stage.query_id.clone(), entries }, false))
}

/// Tokenize a raw query for first-stage ranking.
pub fn query_terms(raw: &str) -> Vec<String> {
    tokenize_query(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_synthetic_corpus;
    use crate::model::{HyperParams, Vocab};

    fn setup() -> (Corpus, ModelParams, QueryParser) {
        let corpus = generate_synthetic_corpus(1, 12).unwrap();
        let parser = QueryParser::default();
        let vocab = Vocab::build(&corpus, &parser);
        let params = ModelParams::init(HyperParams { d: 8, h: 6, n_max: 64 }, vocab, 0);
        (corpus, params, parser)
    }

    #[test]
    fn model_score_is_product_of_action_scores() {
        let (corpus, params, parser) = setup();
        let cfg = SimilarityConfig::default();
        for query in corpus.queries().iter().take(6) {
            let layout =
                layout::compile(&parser.parse_raw(&query.raw_text).unwrap()).unwrap();
            let snippet = corpus.paired_snippet(query);
            let combined = model_score(&layout, snippet, &params, &cfg).unwrap();
            let mut product = 1.0;
            for eval in &layout.evaluations {
                product *= action_score(eval, snippet, &params, &cfg).unwrap();
            }
            assert!((combined - product).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&combined));
        }
    }

    #[test]
    fn rerank_preserves_set_and_tail() {
        let (corpus, params, parser) = setup();
        let cfg = SimilarityConfig::default();
        let index = Bm25Index::build(&corpus);
        let query = &corpus.queries()[0];
        let first = index
            .rank(&query.id, &query_terms(&query.raw_text), None, corpus.num_snippets())
            .unwrap();
        let (reranked, fallback) =
            rerank(query, &first, &corpus, &parser, &params, &cfg, 5).unwrap();
        assert!(!fallback);

        let mut before: Vec<&str> = first.entries.iter().map(|e| e.snippet_id.as_str()).collect();
        let mut after: Vec<&str> = reranked.entries.iter().map(|e| e.snippet_id.as_str()).collect();
        assert_eq!(reranked.entries[5..], first.entries[5..], "tail untouched");
        before.sort_unstable();
        after.sort_unstable();
        assert_eq!(before, after, "rerank is a permutation");

        let top: &[RankEntry] = &reranked.entries[..5];
        assert!(top.iter().all(|e| e.rerank_score.is_some()));
    }

    #[test]
    fn unparsable_query_falls_back_to_first_stage() {
        let (corpus, params, parser) = setup();
        let cfg = SimilarityConfig::default();
        let index = Bm25Index::build(&corpus);
        let query = QueryRecord {
            id: "weird".into(),
            raw_text: "does not. parse; at all.".into(),
            paired_snippet_id: corpus.queries()[0].paired_snippet_id.clone(),
        };
        let first = index.rank("weird", &query_terms(&query.raw_text), None, 8).unwrap();
        let (reranked, fallback) =
            rerank(&query, &first, &corpus, &parser, &params, &cfg, 5).unwrap();
        assert!(fallback);
        assert_eq!(reranked, first);
    }
}
