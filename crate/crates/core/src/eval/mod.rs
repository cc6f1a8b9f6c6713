//! Distractor-based retrieval evaluation: MRR and P@K over seeded candidate
//! sets, the re-ranking upper bound, per-query breakdowns, and the
//! perturbed-query robustness protocol.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CodeSnippet, Corpus, QueryRecord};
use crate::layout;
use crate::model::ModelParams;
use crate::parser::{
    avg_args_per_action, max_depth, ActionNode, Arg, ArgPayload, QueryParser, SemanticParse,
};
use crate::scorer::{
    self, query_terms, FirstStageRanker, RankedList, ScoreError, SimilarityConfig,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Distractors per query; the candidate pool is this plus the correct
    /// snippet. The protocol value is 999; the desk-scale default is 99.
    pub num_distractors: usize,
    pub k_rerank: usize,
    pub p_at_k: Vec<usize>,
    pub seed: u64,
    /// Iterate with only one correct snippet in the pool at a time:
    /// snippets paired to other queries with identical text are excluded
    /// from the distractor pool.
    pub exclude_alternate_positives: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            num_distractors: 99,
            k_rerank: 10,
            p_at_k: vec![1, 3, 5],
            seed: 0,
            exclude_alternate_positives: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("rank must be >= 1")]
    InvalidRank,
    #[error("corpus has {available} snippets but {needed} are needed")]
    CorpusTooSmall { needed: usize, available: usize },
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error("perturbation pool has only {available} distinct replacements, need {needed}")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("query shape unsupported for perturbation (need one verb, one entity argument)")]
    UnsupportedShape,
    #[error("original model score is zero")]
    ZeroOriginalScore,
    #[error(transparent)]
    Score(#[from] ScoreError),
}

/// 1/rank.
pub fn reciprocal_rank(rank: usize) -> Result<f64, EvalError> {
    if rank == 0 {
        return Err(EvalError::InvalidRank);
    }
    Ok(1.0 / rank as f64)
}

/// 1 when the correct snippet sits in the top k, else 0.
pub fn precision_at_k(ranked: &RankedList, correct_id: &str, k: usize) -> u8 {
    debug_assert!(k >= 1);
    match ranked.rank_of(correct_id) {
        Some(rank) if rank <= k => 1,
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub mrr: f64,
    pub p_at_k: BTreeMap<usize, f64>,
    pub upper_bound_mrr: f64,
    pub n_queries: usize,
    pub n_fallbacks: usize,
}

/// Per-query outcome kept for breakdown tables.
#[derive(Debug, Clone, Serialize)]
pub struct PerQueryOutcome {
    pub query_id: String,
    pub final_rank: usize,
    pub first_stage_rank: usize,
    pub fell_back: bool,
    pub max_depth: Option<usize>,
    pub avg_args: Option<f64>,
}

pub struct EvalOutcome {
    pub metrics: MetricsRecord,
    pub per_query: Vec<PerQueryOutcome>,
}

/// Second-stage reranking abstraction so oracle and random scorers can
/// stand in for the trained model.
pub trait Reranker {
    fn rerank(
        &self,
        query: &QueryRecord,
        first_stage: &RankedList,
        corpus: &Corpus,
        k: usize,
    ) -> Result<(RankedList, bool), ScoreError>;
}

/// The trained model as a reranker.
pub struct NeuralReranker<'a> {
    pub parser: &'a QueryParser,
    pub params: &'a ModelParams,
    pub cfg: SimilarityConfig,
}

impl Reranker for NeuralReranker<'_> {
    fn rerank(
        &self,
        query: &QueryRecord,
        first_stage: &RankedList,
        corpus: &Corpus,
        k: usize,
    ) -> Result<(RankedList, bool), ScoreError> {
        scorer::rerank(query, first_stage, corpus, self.parser, self.params, &self.cfg, k)
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// The fixed, seeded distractor set for one query.
fn sample_distractors(
    corpus: &Corpus,
    query: &QueryRecord,
    excluded: &[String],
    cfg: &EvalConfig,
) -> Result<Vec<String>, EvalError> {
    let mut pool: Vec<&str> = corpus
        .snippet_ids()
        .filter(|id| *id != query.paired_snippet_id && !excluded.iter().any(|e| e == id))
        .collect();
    if pool.len() < cfg.num_distractors {
        return Err(EvalError::CorpusTooSmall {
            needed: cfg.num_distractors + 1,
            available: pool.len() + 1,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ fnv1a(&query.id));
    for i in 0..cfg.num_distractors {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    Ok(pool[..cfg.num_distractors].iter().map(|s| s.to_string()).collect())
}

/// Run the full protocol: per query, rank a seeded candidate set with the
/// first stage, re-rank the top `k_rerank` with the given reranker (if
/// any), and aggregate MRR/P@K plus the re-ranking upper bound.
pub fn evaluate(
    first_stage: &dyn FirstStageRanker,
    reranker: Option<&dyn Reranker>,
    corpus: &Corpus,
    parser: &QueryParser,
    cfg: &EvalConfig,
) -> Result<EvalOutcome, EvalError> {
    if cfg.num_distractors < 1 {
        return Err(EvalError::InvalidConfig("num_distractors must be >= 1".into()));
    }
    if cfg.k_rerank > cfg.num_distractors + 1 {
        return Err(EvalError::InvalidConfig(
            "k_rerank cannot exceed the candidate count".into(),
        ));
    }
    if corpus.num_snippets() < cfg.num_distractors + 1 {
        return Err(EvalError::CorpusTooSmall {
            needed: cfg.num_distractors + 1,
            available: corpus.num_snippets(),
        });
    }

    // snippets paired to queries with identical text, for the
    // multi-correct-answer mode
    let mut same_text: HashMap<&str, Vec<String>> = HashMap::new();
    if cfg.exclude_alternate_positives {
        for q in corpus.queries() {
            same_text
                .entry(q.raw_text.as_str())
                .or_default()
                .push(q.paired_snippet_id.clone());
        }
    }

    let mut rr_sum = 0.0;
    let mut ub_sum = 0.0;
    let mut hits: BTreeMap<usize, usize> = cfg.p_at_k.iter().map(|&k| (k, 0)).collect();
    let mut n_fallbacks = 0;
    let mut per_query = Vec::with_capacity(corpus.queries().len());

    for query in corpus.queries() {
        let excluded: Vec<String> = match same_text.get(query.raw_text.as_str()) {
            Some(ids) => ids
                .iter()
                .filter(|id| **id != query.paired_snippet_id)
                .cloned()
                .collect(),
            None => Vec::new(),
        };
        let mut candidates = sample_distractors(corpus, query, &excluded, cfg)?;
        candidates.push(query.paired_snippet_id.clone());

        let terms = query_terms(&query.raw_text);
        let first = first_stage
            .rank(&query.id, &terms, Some(&candidates), candidates.len())
            .map_err(ScoreError::from)?;
        let first_rank = first
            .rank_of(&query.paired_snippet_id)
            .expect("correct snippet is always a candidate");

        let (final_list, fell_back) = match reranker {
            Some(r) => r.rerank(query, &first, corpus, cfg.k_rerank)?,
            None => (first.clone(), false),
        };
        if fell_back {
            n_fallbacks += 1;
        }

        let final_rank = final_list
            .rank_of(&query.paired_snippet_id)
            .expect("rerank preserves the candidate set");
        rr_sum += reciprocal_rank(final_rank)?;
        ub_sum += if first_rank <= cfg.k_rerank {
            1.0
        } else {
            reciprocal_rank(first_rank)?
        };
        for (&k, count) in hits.iter_mut() {
            *count += usize::from(precision_at_k(&final_list, &query.paired_snippet_id, k));
        }

        let parse = parser.parse_raw(&query.raw_text).ok();
        per_query.push(PerQueryOutcome {
            query_id: query.id.clone(),
            final_rank,
            first_stage_rank: first_rank,
            fell_back,
            max_depth: parse.as_ref().map(max_depth),
            avg_args: parse.as_ref().map(avg_args_per_action),
        });
    }

    let n = corpus.queries().len();
    let metrics = MetricsRecord {
        mrr: rr_sum / n as f64,
        p_at_k: hits.into_iter().map(|(k, c)| (k, c as f64 / n as f64)).collect(),
        upper_bound_mrr: ub_sum / n as f64,
        n_queries: n,
        n_fallbacks,
    };
    assert!(
        metrics.mrr <= metrics.upper_bound_mrr + 1e-9,
        "re-ranked MRR {} exceeded its upper bound {}",
        metrics.mrr,
        metrics.upper_bound_mrr
    );
    Ok(EvalOutcome { metrics, per_query })
}

/// The upper-bound MRR given first-stage ranks: queries whose correct
/// snippet lies in the first-stage top-k count 1.0 (a perfect reranker
/// moves them to the top); the rest keep their first-stage reciprocal rank.
pub fn upper_bound_mrr(first_stage_ranks: &[usize], k_rerank: usize) -> Result<f64, EvalError> {
    let mut sum = 0.0;
    for &rank in first_stage_ranks {
        sum += if rank <= k_rerank { 1.0 } else { reciprocal_rank(rank)? };
    }
    Ok(sum / first_stage_ranks.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    SwapEntity,
    SwapVerb,
}

/// Shape check for the perturbation protocol: exactly one verb with exactly
/// one entity argument.
fn single_verb_single_arg(parse: &SemanticParse) -> Option<(Option<String>, String)> {
    let root = &parse.root;
    if root.args.len() != 1 {
        return None;
    }
    match &root.args[0].payload {
        ArgPayload::Entity(phrase) => Some((root.args[0].preposition.clone(), phrase.clone())),
        ArgPayload::Action(_) => None,
    }
}

/// Generate `count` perturbed variants of a single-verb single-argument
/// parse, swapping either the entity or the verb with values sampled
/// without replacement from the pool, never equal to the original.
pub fn perturb_query(
    parse: &SemanticParse,
    pool: &[SemanticParse],
    kind: PerturbKind,
    count: usize,
    seed: u64,
) -> Result<Vec<SemanticParse>, EvalError> {
    let (prep, original_phrase) =
        single_verb_single_arg(parse).ok_or(EvalError::UnsupportedShape)?;
    let original_verb = parse.root.verb.clone();

    let mut replacements: Vec<String> = Vec::new();
    for p in pool {
        match kind {
            PerturbKind::SwapEntity => {
                collect_entity_phrases(&p.root, &mut replacements);
            }
            PerturbKind::SwapVerb => {
                collect_verbs(&p.root, &mut replacements);
            }
        }
    }
    replacements.sort_unstable();
    replacements.dedup();
    replacements.retain(|r| match kind {
        PerturbKind::SwapEntity => *r != original_phrase,
        PerturbKind::SwapVerb => *r != original_verb,
    });
    if replacements.len() < count {
        return Err(EvalError::PoolTooSmall { needed: count, available: replacements.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let j = rng.gen_range(i..replacements.len());
        replacements.swap(i, j);
    }

    Ok(replacements[..count]
        .iter()
        .map(|r| {
            let (verb, phrase) = match kind {
                PerturbKind::SwapEntity => (original_verb.clone(), r.clone()),
                PerturbKind::SwapVerb => (r.clone(), original_phrase.clone()),
            };
            SemanticParse {
                root: ActionNode {
                    verb,
                    args: vec![Arg {
                        preposition: prep.clone(),
                        payload: ArgPayload::Entity(phrase),
                    }],
                },
            }
        })
        .collect())
}

fn collect_entity_phrases(node: &ActionNode, out: &mut Vec<String>) {
    for arg in &node.args {
        match &arg.payload {
            ArgPayload::Entity(phrase) => out.push(phrase.clone()),
            ArgPayload::Action(nested) => collect_entity_phrases(nested, out),
        }
    }
}

fn collect_verbs(node: &ActionNode, out: &mut Vec<String>) {
    out.push(node.verb.clone());
    for arg in &node.args {
        if let ArgPayload::Action(nested) = &arg.payload {
            collect_verbs(nested, out);
        }
    }
}

/// Mean perturbed/original score ratio per kind, pooled over pairs and
/// perturbations. Pairs whose original score is zero are an error.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_ratio(
    pairs: &[(SemanticParse, &CodeSnippet)],
    pool: &[SemanticParse],
    kinds: &[PerturbKind],
    count: usize,
    params: &ModelParams,
    cfg: &SimilarityConfig,
    seed: u64,
) -> Result<BTreeMap<PerturbKind, f64>, EvalError> {
    let mut out = BTreeMap::new();
    for &kind in kinds {
        let mut ratios = Vec::new();
        for (i, (parse, snippet)) in pairs.iter().enumerate() {
            let original_layout = layout::compile(parse).map_err(|_| EvalError::UnsupportedShape)?;
            let original = scorer::model_score(&original_layout, snippet, params, cfg)?;
            if original <= 0.0 {
                return Err(EvalError::ZeroOriginalScore);
            }
            let perturbed = perturb_query(parse, pool, kind, count, seed ^ (i as u64) << 1)?;
            for p in &perturbed {
                let l = layout::compile(p).map_err(|_| EvalError::UnsupportedShape)?;
                let s = scorer::model_score(&l, snippet, params, cfg)?;
                ratios.push(s / original);
            }
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
        out.insert(kind, mean);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakdownKey {
    MaxDepth,
    AvgArgs,
}

#[derive(Debug, Clone, Serialize)]
pub struct BreakdownRow {
    pub key: String,
    pub count: usize,
    pub p_at_1: f64,
}

/// Group per-query P@1 by parse depth or average arguments per action.
/// Unparsable queries group under "unparsed".
pub fn breakdown(key: BreakdownKey, results: &[PerQueryOutcome]) -> Vec<BreakdownRow> {
    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in results {
        let label = match key {
            BreakdownKey::MaxDepth => {
                r.max_depth.map(|d| format!("{d}")).unwrap_or_else(|| "unparsed".into())
            }
            BreakdownKey::AvgArgs => {
                r.avg_args.map(|a| format!("{a:.2}")).unwrap_or_else(|| "unparsed".into())
            }
        };
        let entry = groups.entry(label).or_insert((0, 0));
        entry.0 += 1;
        entry.1 += usize::from(r.final_rank == 1);
    }
    groups
        .into_iter()
        .map(|(key, (count, hits))| BreakdownRow { key, count, p_at_1: hits as f64 / count as f64 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_synthetic_corpus;
    use crate::scorer::Bm25Index;

    #[test]
    fn reciprocal_rank_basics() {
        assert_eq!(reciprocal_rank(1).unwrap(), 1.0);
        assert_eq!(reciprocal_rank(4).unwrap(), 0.25);
        assert!((0.5 * (reciprocal_rank(1).unwrap() + reciprocal_rank(2).unwrap()) - 0.75).abs() < 1e-15);
        assert!(matches!(reciprocal_rank(0), Err(EvalError::InvalidRank)));
    }

    fn ranked(ids: &[&str]) -> RankedList {
        RankedList {
            query_id: "q".into(),
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, id)| crate::scorer::RankEntry {
                    snippet_id: id.to_string(),
                    first_stage_score: 1.0 - i as f64 * 0.1,
                    rerank_score: None,
                })
                .collect(),
        }
    }

    #[test]
    fn precision_at_k_basics() {
        let list = ranked(&["a", "b", "c", "d"]);
        assert_eq!(precision_at_k(&list, "c", 3), 1);
        assert_eq!(precision_at_k(&list, "d", 3), 0);
        assert_eq!(precision_at_k(&list, "d", 10), 1);
        assert_eq!(precision_at_k(&list, "zzz", 10), 0);
    }

    #[test]
    fn upper_bound_examples() {
        assert_eq!(upper_bound_mrr(&[1, 5, 10], 10).unwrap(), 1.0);
        assert_eq!(upper_bound_mrr(&[20, 20], 10).unwrap(), 1.0 / 20.0);
        let mixed = upper_bound_mrr(&[3, 20], 10).unwrap();
        assert!((mixed - 0.5 * (1.0 + 1.0 / 20.0)).abs() < 1e-12);
    }

    /// An oracle reranker that always puts the correct snippet first.
    struct OracleReranker;

    impl Reranker for OracleReranker {
        fn rerank(
            &self,
            query: &QueryRecord,
            first_stage: &RankedList,
            _corpus: &Corpus,
            k: usize,
        ) -> Result<(RankedList, bool), ScoreError> {
            let top = first_stage.entries.len().min(k);
            let mut head = first_stage.entries[..top].to_vec();
            for e in head.iter_mut() {
                e.rerank_score =
                    Some(if e.snippet_id == query.paired_snippet_id { 1.0 } else { 0.0 });
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
    }

    #[test]
    fn oracle_reranker_reaches_perfect_metrics() {
        let corpus = generate_synthetic_corpus(0, 30).unwrap();
        let parser = QueryParser::default();
        let index = Bm25Index::build(&corpus);
        let cfg = EvalConfig {
            num_distractors: 9,
            k_rerank: 10, // rerank the whole candidate set
            ..Default::default()
        };
        let out = evaluate(&index, Some(&OracleReranker), &corpus, &parser, &cfg).unwrap();
        assert_eq!(out.metrics.mrr, 1.0);
        for (_, p) in out.metrics.p_at_k.iter() {
            assert_eq!(*p, 1.0);
        }
        assert_eq!(out.metrics.upper_bound_mrr, 1.0);
    }

    #[test]
    fn evaluation_is_reproducible() {
        let corpus = generate_synthetic_corpus(3, 25).unwrap();
        let parser = QueryParser::default();
        let index = Bm25Index::build(&corpus);
        let cfg = EvalConfig { num_distractors: 9, ..Default::default() };
        let a = evaluate(&index, None, &corpus, &parser, &cfg).unwrap();
        let b = evaluate(&index, None, &corpus, &parser, &cfg).unwrap();
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn distractor_sets_are_fixed_per_seed_and_disjoint_from_correct() {
        let corpus = generate_synthetic_corpus(1, 20).unwrap();
        let cfg = EvalConfig { num_distractors: 9, ..Default::default() };
        let query = &corpus.queries()[0];
        let a = sample_distractors(&corpus, query, &[], &cfg).unwrap();
        let b = sample_distractors(&corpus, query, &[], &cfg).unwrap();
        assert_eq!(a, b);
        assert!(!a.contains(&query.paired_snippet_id));
        let other = EvalConfig { seed: 99, ..cfg };
        let c = sample_distractors(&corpus, query, &[], &other).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn corpus_too_small_is_detected() {
        let corpus = generate_synthetic_corpus(0, 5).unwrap();
        let parser = QueryParser::default();
        let index = Bm25Index::build(&corpus);
        let cfg = EvalConfig { num_distractors: 99, ..Default::default() };
        assert!(matches!(
            evaluate(&index, None, &corpus, &parser, &cfg),
            Err(EvalError::CorpusTooSmall { .. })
        ));
    }

    #[test]
    fn perturbation_swaps() {
        let parser = QueryParser::default();
        let parse = parser.parse("load file").unwrap();
        let pool: Vec<SemanticParse> = ["sort dict", "remove folder", "read table"]
            .iter()
            .map(|q| parser.parse(q).unwrap())
            .collect();

        let swapped = perturb_query(&parse, &pool, PerturbKind::SwapEntity, 2, 0).unwrap();
        for p in &swapped {
            assert_eq!(p.root.verb, "load");
            let ArgPayload::Entity(phrase) = &p.root.args[0].payload else { panic!() };
            assert_ne!(phrase, "file");
        }

        let swapped = perturb_query(&parse, &pool, PerturbKind::SwapVerb, 2, 0).unwrap();
        for p in &swapped {
            assert_ne!(p.root.verb, "load");
            let ArgPayload::Entity(phrase) = &p.root.args[0].payload else { panic!() };
            assert_eq!(phrase, "file");
        }

        assert!(matches!(
            perturb_query(&parse, &pool, PerturbKind::SwapEntity, 20, 0),
            Err(EvalError::PoolTooSmall { .. })
        ));

        let nested = parser.parse("construct point record by reading points from stream").unwrap();
        assert!(matches!(
            perturb_query(&nested, &pool, PerturbKind::SwapEntity, 1, 0),
            Err(EvalError::UnsupportedShape)
        ));
    }

    #[test]
    fn breakdown_recomposes_overall_p1() {
        let corpus = generate_synthetic_corpus(2, 40).unwrap();
        let parser = QueryParser::default();
        let index = Bm25Index::build(&corpus);
        let cfg = EvalConfig { num_distractors: 9, ..Default::default() };
        let out = evaluate(&index, None, &corpus, &parser, &cfg).unwrap();

        let rows = breakdown(BreakdownKey::MaxDepth, &out.per_query);
        assert!(rows.len() >= 2, "synthetic corpus has depth 1 and 2 queries");
        let total: usize = rows.iter().map(|r| r.count).sum();
        let weighted: f64 = rows.iter().map(|r| r.p_at_1 * r.count as f64).sum::<f64>() / total as f64;
        assert!((weighted - out.metrics.p_at_k[&1]).abs() < 1e-12);
    }

    #[test]
    fn multi_answer_mode_excludes_alternate_positives() {
        use crate::corpus::{CodeSnippet, QueryRecord};
        let mut corpus = Corpus::new();
        for i in 0..12 {
            corpus
                .insert_snippet(CodeSnippet::new(format!("s{i:02}"), format!("x{i} = {i}"), 64))
                .unwrap();
        }
        // two queries with identical text pairing different snippets
        corpus
            .insert_query(QueryRecord { id: "q1".into(), raw_text: "load file".into(), paired_snippet_id: "s00".into() })
            .unwrap();
        corpus
            .insert_query(QueryRecord { id: "q2".into(), raw_text: "load file".into(), paired_snippet_id: "s01".into() })
            .unwrap();

        let cfg = EvalConfig {
            num_distractors: 10,
            exclude_alternate_positives: true,
            ..Default::default()
        };
        let q1 = &corpus.queries()[0];
        let distractors = sample_distractors(&corpus, q1, &["s01".to_string()], &cfg).unwrap();
        assert!(!distractors.contains(&"s01".to_string()));
        assert_eq!(distractors.len(), 10);
    }
}
