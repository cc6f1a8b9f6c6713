//! BM25 first-stage ranking over code-token documents, plus the ranker
//! abstraction that lets an external score file stand in for it.

use std::collections::HashMap;

use thiserror::Error;

use crate::corpus::Corpus;

use super::{RankEntry, RankedList};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot rank against an empty index")]
    EmptyIndex,
    #[error("io error reading score file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed score line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Anything that can produce a first-stage ranking for a query.
pub trait FirstStageRanker {
    /// Rank candidate snippets for a query, best first, ties broken by
    /// ascending snippet id. `candidates` restricts the pool; the full
    /// index is used when it is `None`.
    fn rank(
        &self,
        query_id: &str,
        query_tokens: &[String],
        candidates: Option<&[String]>,
        k: usize,
    ) -> Result<RankedList, IndexError>;
}

/// Inverted index with document statistics for BM25 scoring.
pub struct Bm25Index {
    /// term -> (doc ordinal, term frequency)
    postings: HashMap<String, Vec<(usize, f64)>>,
    doc_ids: Vec<String>,
    doc_ordinals: HashMap<String, usize>,
    doc_lengths: Vec<f64>,
    avg_doc_length: f64,
}

impl Bm25Index {
    /// Index every snippet's token texts (lowercased).
    pub fn build(corpus: &Corpus) -> Self {
        let mut postings: HashMap<String, Vec<(usize, f64)>> = HashMap::new();
        let mut doc_ids = Vec::new();
        let mut doc_lengths = Vec::new();

        for (ord, snippet) in corpus.snippets().enumerate() {
            doc_ids.push(snippet.id.clone());
            doc_lengths.push(snippet.tokens.len() as f64);
            let mut counts: HashMap<String, f64> = HashMap::new();
            for tok in &snippet.tokens {
                *counts.entry(tok.text.to_lowercase()).or_insert(0.0) += 1.0;
            }
            let mut terms: Vec<(String, f64)> = counts.into_iter().collect();
            terms.sort_by(|a, b| a.0.cmp(&b.0));
            for (term, tf) in terms {
                postings.entry(term).or_default().push((ord, tf));
            }
        }

        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            doc_lengths.iter().sum::<f64>() / doc_lengths.len() as f64
        };
        let doc_ordinals =
            doc_ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Bm25Index { postings, doc_ids, doc_ordinals, doc_lengths, avg_doc_length }
    }

    pub fn num_documents(&self) -> usize {
        self.doc_ids.len()
    }

    /// Okapi BM25 with the +1 idf floor:
    /// idf = ln((N - df + 0.5) / (df + 0.5) + 1).
    fn idf(&self, term: &str) -> f64 {
        let n = self.doc_ids.len() as f64;
        let df = self.postings.get(term).map_or(0.0, |p| p.len() as f64);
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// BM25 score of one document for the query terms.
    pub fn score(&self, query_tokens: &[String], snippet_id: &str) -> f64 {
        let Some(&ord) = self.doc_ordinals.get(snippet_id) else {
            return 0.0;
        };
        let dl = self.doc_lengths[ord];
        let mut total = 0.0;
        for term in query_tokens {
            let Some(postings) = self.postings.get(term.as_str()) else {
                continue;
            };
            let Ok(pos) = postings.binary_search_by(|(o, _)| o.cmp(&ord)) else {
                continue;
            };
            let tf = postings[pos].1;
            let idf = self.idf(term);
            let denom = tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / self.avg_doc_length);
            total += idf * tf * (BM25_K1 + 1.0) / denom;
        }
        total
    }
}

impl FirstStageRanker for Bm25Index {
    fn rank(
        &self,
        query_id: &str,
        query_tokens: &[String],
        candidates: Option<&[String]>,
        k: usize,
    ) -> Result<RankedList, IndexError> {
        if self.doc_ids.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        let mut entries: Vec<RankEntry> = match candidates {
            Some(ids) => ids
                .iter()
                .map(|id| RankEntry {
                    snippet_id: id.clone(),
                    first_stage_score: self.score(query_tokens, id),
                    rerank_score: None,
                })
                .collect(),
            None => self
                .doc_ids
                .iter()
                .map(|id| RankEntry {
                    snippet_id: id.clone(),
                    first_stage_score: self.score(query_tokens, id),
                    rerank_score: None,
                })
                .collect(),
        };
        sort_entries_first_stage(&mut entries);
        entries.truncate(k);
        Ok(RankedList { query_id: query_id.to_string(), entries })
    }
}

pub(super) fn sort_entries_first_stage(entries: &mut [RankEntry]) {
    entries.sort_by(|a, b| {
        b.first_stage_score
            .total_cmp(&a.first_stage_score)
            .then_with(|| a.snippet_id.cmp(&b.snippet_id))
    });
}

/// First stage backed by an external TSV of `query_id  snippet_id  score`.
pub struct ExternalScoreRanker {
    scores: HashMap<String, Vec<(String, f64)>>,
}

impl ExternalScoreRanker {
    pub fn from_tsv(path: impl AsRef<std::path::Path>) -> Result<Self, IndexError> {
        let text = std::fs::read_to_string(path)?;
        let mut scores: HashMap<String, Vec<(String, f64)>> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(IndexError::Format {
                    line: i + 1,
                    message: format!("expected 3 tab-separated fields, got {}", parts.len()),
                });
            }
            let score: f64 = parts[2].parse().map_err(|e| IndexError::Format {
                line: i + 1,
                message: format!("bad score: {e}"),
            })?;
            scores
                .entry(parts[0].to_string())
                .or_default()
                .push((parts[1].to_string(), score));
        }
        Ok(ExternalScoreRanker { scores })
    }
}

impl FirstStageRanker for ExternalScoreRanker {
    fn rank(
        &self,
        query_id: &str,
        _query_tokens: &[String],
        candidates: Option<&[String]>,
        k: usize,
    ) -> Result<RankedList, IndexError> {
        let all = self.scores.get(query_id).cloned().unwrap_or_default();
        let mut entries: Vec<RankEntry> = all
            .into_iter()
            .filter(|(id, _)| candidates.is_none_or(|c| c.iter().any(|x| x == id)))
            .map(|(snippet_id, score)| RankEntry {
                snippet_id,
                first_stage_score: score,
                rerank_score: None,
            })
            .collect();
        if entries.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        sort_entries_first_stage(&mut entries);
        entries.truncate(k);
        Ok(RankedList { query_id: query_id.to_string(), entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CodeSnippet, Corpus, QueryRecord};

    fn corpus_from(snippets: &[(&str, &str)]) -> Corpus {
        let mut c = Corpus::new();
        for (id, code) in snippets {
            c.insert_snippet(CodeSnippet::new(*id, *code, 256)).unwrap();
            c.insert_query(QueryRecord {
                id: id.to_string(),
                raw_text: String::new(),
                paired_snippet_id: id.to_string(),
            })
            .unwrap();
        }
        c
    }

    fn q(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn matching_document_ranks_first() {
        let corpus = corpus_from(&[("a", "load_table(x)"), ("b", "send_mail(y)")]);
        let index = Bm25Index::build(&corpus);
        let ranked = index.rank("q", &q(&["load", "table"]), None, 10).unwrap();
        assert_eq!(ranked.entries[0].snippet_id, "a");
        assert!(ranked.entries[0].first_stage_score > ranked.entries[1].first_stage_score);
    }

    /// Oracle: BM25 computed by hand for a three-document index and a
    /// two-term query.
    #[test]
    fn scores_match_hand_computation() {
        // docs (token counts): d1 = [x, =, alpha]  d2 = [alpha, alpha, beta, y]
        // d3 = [beta]
        let corpus = corpus_from(&[("d1", "x = alpha"), ("d2", "alpha(alpha, beta, y)"), ("d3", "beta")]);
        let index = Bm25Index::build(&corpus);

        // d2 tokens: alpha ( alpha , beta , y ) -> 8 tokens, tf(alpha)=2
        // dl: d1=3, d2=8, d3=1; avgdl=4
        // idf(alpha): df=2, N=3 -> ln((3-2+0.5)/(2+0.5)+1) = ln(1.6)
        // idf(beta):  df=2 -> ln(1.6)
        let k1 = BM25_K1;
        let b = BM25_B;
        let idf = (1.6f64).ln();

        // query [alpha, beta] against d2:
        let tf_alpha = 2.0;
        let tf_beta = 1.0;
        let dl = 8.0;
        let avgdl = 4.0;
        let expected = idf * tf_alpha * (k1 + 1.0) / (tf_alpha + k1 * (1.0 - b + b * dl / avgdl))
            + idf * tf_beta * (k1 + 1.0) / (tf_beta + k1 * (1.0 - b + b * dl / avgdl));
        let got = index.score(&q(&["alpha", "beta"]), "d2");
        assert!((got - expected).abs() < 1e-12, "got {got}, expected {expected}");

        // d3: tf(beta)=1, dl=1
        let expected3 = idf * 1.0 * (k1 + 1.0) / (1.0 + k1 * (1.0 - b + b * 1.0 / avgdl));
        let got3 = index.score(&q(&["alpha", "beta"]), "d3");
        assert!((got3 - expected3).abs() < 1e-12);
    }

    #[test]
    fn k_larger_than_corpus_returns_all() {
        let corpus = corpus_from(&[("a", "x = 1"), ("b", "y = 2")]);
        let index = Bm25Index::build(&corpus);
        let ranked = index.rank("q", &q(&["x"]), None, 100).unwrap();
        assert_eq!(ranked.entries.len(), 2);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let corpus = corpus_from(&[("b", "same = code"), ("a", "same = code"), ("c", "same = code")]);
        let index = Bm25Index::build(&corpus);
        let ranked = index.rank("q", &q(&["same"]), None, 10).unwrap();
        let ids: Vec<&str> = ranked.entries.iter().map(|e| e.snippet_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn empty_index_is_an_error() {
        let corpus = Corpus::new();
        let index = Bm25Index::build(&corpus);
        assert!(matches!(index.rank("q", &q(&["x"]), None, 5), Err(IndexError::EmptyIndex)));
    }

    #[test]
    fn external_scores_rank_and_filter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.tsv");
        std::fs::write(&path, "q1\ta\t0.2\nq1\tb\t0.9\nq1\tc\t0.5\nq2\ta\t1.0\n").unwrap();
        let ranker = ExternalScoreRanker::from_tsv(&path).unwrap();
        let ranked = ranker.rank("q1", &[], None, 10).unwrap();
        let ids: Vec<&str> = ranked.entries.iter().map(|e| e.snippet_id.as_str()).collect();
        assert_eq!(ids, vec!["b", "c", "a"]);

        let only = vec!["a".to_string(), "c".to_string()];
        let ranked = ranker.rank("q1", &[], Some(&only), 10).unwrap();
        assert_eq!(ranked.entries.len(), 2);
    }
}
