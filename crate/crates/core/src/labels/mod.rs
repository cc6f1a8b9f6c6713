//! Noisy supervision labels from keyword matching and static analysis.

mod static_analysis;

pub use static_analysis::{detect_constructs, static_type_labels, StaticConstruct, StaticLabels};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{tokenize_query, CodeSnippet, Corpus};
use crate::layout;
use crate::parser::QueryParser;

/// Which labeler(s) set a token's label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LabelSources {
    pub keyword: bool,
    pub static_analysis: bool,
}

impl LabelSources {
    pub fn is_empty(&self) -> bool {
        !self.keyword && !self.static_analysis
    }

    fn union(&self, other: &LabelSources) -> LabelSources {
        LabelSources {
            keyword: self.keyword || other.keyword,
            static_analysis: self.static_analysis || other.static_analysis,
        }
    }
}

/// Per-token binary supervision labels with their provenance. A label is 1
/// exactly when its source set is non-empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeakLabelVector {
    pub labels: Vec<u8>,
    pub sources: Vec<LabelSources>,
}

impl WeakLabelVector {
    pub fn zeros(len: usize) -> Self {
        WeakLabelVector { labels: vec![0; len], sources: vec![LabelSources::default(); len] }
    }

    /// Build from sources alone, deriving labels.
    pub fn from_sources(sources: Vec<LabelSources>) -> Self {
        let labels = sources.iter().map(|s| u8::from(!s.is_empty())).collect();
        WeakLabelVector { labels, sources }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("label vectors have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Synonym groups seeded from the common-noun keyword inventory.
const SYNONYM_GROUPS: &[&[&str]] = &[
    &["dict", "map"],
    &["list", "array"],
    &["string", "str", "text"],
    &["directory", "folder", "dir", "path"],
    &["boolean", "bool", "flag"],
    &["file", "fp"],
];

/// Expand a lowercase word to itself plus its synonym group, looking the
/// word up both literally and with a plural `-s` stripped.
fn expand_synonyms(word: &str) -> Vec<&str> {
    let singular = word.strip_suffix('s').filter(|stem| stem.len() >= 3);
    for group in SYNONYM_GROUPS {
        if group.contains(&word) || singular.is_some_and(|s| group.contains(&s)) {
            let mut out = vec![word];
            out.extend(group.iter().copied().filter(|w| *w != word));
            return out;
        }
    }
    vec![word]
}

/// Minimum length for substring matches; shorter fragments match everything.
const MIN_SUBSTRING_LEN: usize = 3;

fn word_matches_token(word: &str, token: &str) -> bool {
    for w in expand_synonyms(word) {
        if w == token {
            return true;
        }
        if w.len() >= MIN_SUBSTRING_LEN && token.contains(w) {
            return true;
        }
        if token.len() >= MIN_SUBSTRING_LEN && w.contains(token) {
            return true;
        }
    }
    false
}

/// Label a token 1 when it exactly matches, is a substring of, or is a
/// superstring of any phrase word (case-insensitively), directly or through
/// the synonym table.
pub fn keyword_labels(entity_phrase: &str, snippet: &CodeSnippet) -> WeakLabelVector {
    let words = tokenize_query(entity_phrase);
    let sources = snippet
        .tokens
        .iter()
        .map(|tok| {
            let token_text = tok.text.to_lowercase();
            let hit = words.iter().any(|w| word_matches_token(w, &token_text));
            LabelSources { keyword: hit, static_analysis: false }
        })
        .collect();
    WeakLabelVector::from_sources(sources)
}

/// Element-wise OR of labels; union of sources.
pub fn combine_labels(
    a: &WeakLabelVector,
    b: &WeakLabelVector,
) -> Result<WeakLabelVector, LabelError> {
    if a.len() != b.len() {
        return Err(LabelError::LengthMismatch(a.len(), b.len()));
    }
    let sources = a
        .sources
        .iter()
        .zip(&b.sources)
        .map(|(x, y)| x.union(y))
        .collect();
    Ok(WeakLabelVector::from_sources(sources))
}

/// One pretraining example: an entity phrase labeled against a snippet.
#[derive(Debug, Clone, Serialize)]
pub struct PretrainExample {
    pub phrase: String,
    pub snippet_id: String,
    #[serde(serialize_with = "serialize_labels")]
    pub labels: WeakLabelVector,
    pub matched: bool,
}

fn serialize_labels<S: serde::Serializer>(
    v: &WeakLabelVector,
    s: S,
) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.labels.len()))?;
    for l in &v.labels {
        seq.serialize_element(l)?;
    }
    seq.end()
}

/// Combined keyword + static labels for one phrase/snippet pair.
pub fn phrase_labels(phrase: &str, snippet: &CodeSnippet) -> WeakLabelVector {
    let kw = keyword_labels(phrase, snippet);
    let st = static_type_labels(snippet, phrase);
    combine_labels(&kw, &st.vector).expect("same snippet, same length")
}

/// Build the pretraining set: for every parsable query, each entity phrase
/// is labeled against its paired snippet (matched) and against one random
/// non-paired snippet (mismatched), giving equal counts of both.
pub fn build_pretraining_set(
    corpus: &Corpus,
    parser: &QueryParser,
    seed: u64,
) -> Vec<PretrainExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let snippet_ids: Vec<&str> = corpus.snippet_ids().collect();
    let mut out = Vec::new();

    for query in corpus.queries() {
        let parse = match parser.parse_raw(&query.raw_text) {
            Ok(p) => p,
            Err(reason) => {
                log::debug!("skipping unparsable query {:?}: {reason}", query.id);
                continue;
            }
        };
        let layout = match layout::compile(&parse) {
            Ok(l) => l,
            Err(e) => {
                log::debug!("skipping query {:?}: {e}", query.id);
                continue;
            }
        };
        let paired = corpus.paired_snippet(query);
        for (_, phrase) in layout::entity_phrases(&layout) {
            out.push(PretrainExample {
                phrase: phrase.clone(),
                snippet_id: paired.id.clone(),
                labels: phrase_labels(&phrase, paired),
                matched: true,
            });

            if snippet_ids.len() > 1 {
                let other_id = loop {
                    let candidate = snippet_ids[rng.gen_range(0..snippet_ids.len())];
                    if candidate != paired.id {
                        break candidate;
                    }
                };
                let other = corpus.snippet(other_id).expect("id from corpus");
                out.push(PretrainExample {
                    phrase: phrase.clone(),
                    snippet_id: other.id.clone(),
                    labels: phrase_labels(&phrase, other),
                    matched: false,
                });
            }
        }
    }
    out
}
