//! Corpus loading, validation, tokenization and synthesis.
//!
//! The on-disk format is JSONL: one object per line with fields `id`,
//! `code` and `docstring` (UTF-8, unknown fields ignored). Each line yields
//! one [`CodeSnippet`] and one [`QueryRecord`] paired to it.

mod synth;
mod tokenize;

pub use synth::generate_synthetic_corpus;
pub use tokenize::{tokenize_code, tokenize_query};

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on tokens kept per snippet; longer snippets are truncated.
pub const DEFAULT_MAX_TOKENS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Identifier,
    Keyword,
    Literal,
    Punctuation,
    Other,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TokenKind::Identifier => "identifier",
            TokenKind::Keyword => "keyword",
            TokenKind::Literal => "literal",
            TokenKind::Punctuation => "punctuation",
            TokenKind::Other => "other",
        };
        f.write_str(s)
    }
}

/// A single code token with its byte span into the original source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeToken {
    pub text: String,
    pub byte_span: (usize, usize),
    pub kind: TokenKind,
}

/// A code snippet with deterministically derived tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSnippet {
    pub id: String,
    pub source_text: String,
    pub tokens: Vec<CodeToken>,
}

impl CodeSnippet {
    /// Build a snippet from raw source, tokenizing and truncating to
    /// `max_tokens`.
    pub fn new(id: impl Into<String>, source_text: impl Into<String>, max_tokens: usize) -> Self {
        let id = id.into();
        let source_text = source_text.into();
        let mut tokens = tokenize_code(&source_text);
        if tokens.len() > max_tokens {
            log::warn!(
                "snippet {id}: truncating {} tokens to {max_tokens}",
                tokens.len()
            );
            tokens.truncate(max_tokens);
        }
        CodeSnippet { id, source_text, tokens }
    }
}

/// A natural-language query paired with its one correct snippet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRecord {
    pub id: String,
    pub raw_text: String,
    pub paired_snippet_id: String,
}

/// An immutable collection of snippets and the queries paired to them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    snippets: IndexMap<String, CodeSnippet>,
    queries: Vec<QueryRecord>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error reading corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("duplicate snippet id {0:?}")]
    DuplicateId(String),
    #[error("query {query_id:?} refers to missing snippet {snippet_id:?}")]
    MissingSnippet { query_id: String, snippet_id: String },
    #[error("n_pairs must be >= 1, got {0}")]
    InvalidArgument(usize),
}

/// One line of the JSONL corpus format. Unknown fields are ignored.
#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    code: String,
    docstring: String,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a snippet, rejecting duplicate ids and empty token sequences.
    pub fn insert_snippet(&mut self, snippet: CodeSnippet) -> Result<(), CorpusError> {
        if snippet.tokens.is_empty() {
            return Err(CorpusError::Format {
                line: 0,
                message: format!("snippet {:?} produces no tokens", snippet.id),
            });
        }
        if self.snippets.contains_key(&snippet.id) {
            return Err(CorpusError::DuplicateId(snippet.id));
        }
        self.snippets.insert(snippet.id.clone(), snippet);
        Ok(())
    }

    /// Insert a query; its paired snippet must already exist.
    pub fn insert_query(&mut self, query: QueryRecord) -> Result<(), CorpusError> {
        if !self.snippets.contains_key(&query.paired_snippet_id) {
            return Err(CorpusError::MissingSnippet {
                query_id: query.id,
                snippet_id: query.paired_snippet_id,
            });
        }
        self.queries.push(query);
        Ok(())
    }

    pub fn snippet(&self, id: &str) -> Option<&CodeSnippet> {
        self.snippets.get(id)
    }

    pub fn snippets(&self) -> impl Iterator<Item = &CodeSnippet> {
        self.snippets.values()
    }

    pub fn snippet_ids(&self) -> impl Iterator<Item = &str> {
        self.snippets.keys().map(|s| s.as_str())
    }

    pub fn queries(&self) -> &[QueryRecord] {
        &self.queries
    }

    pub fn num_snippets(&self) -> usize {
        self.snippets.len()
    }

    pub fn paired_snippet(&self, query: &QueryRecord) -> &CodeSnippet {
        &self.snippets[&query.paired_snippet_id]
    }
}

/// Load a corpus from a JSONL file, truncating snippets to
/// [`DEFAULT_MAX_TOKENS`].
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    load_corpus_with(path, DEFAULT_MAX_TOKENS)
}

/// Load a corpus with an explicit per-snippet token cap.
pub fn load_corpus_with(path: impl AsRef<Path>, max_tokens: usize) -> Result<Corpus, CorpusError> {
    let file = File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut corpus = Corpus::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Format {
            line: line_no,
            message: e.to_string(),
        })?;
        let snippet = CodeSnippet::new(record.id.clone(), record.code, max_tokens);
        if snippet.tokens.is_empty() {
            return Err(CorpusError::Format {
                line: line_no,
                message: format!("snippet {:?} produces no tokens", record.id),
            });
        }
        corpus.insert_snippet(snippet)?;
        corpus.insert_query(QueryRecord {
            id: record.id.clone(),
            raw_text: record.docstring,
            paired_snippet_id: record.id,
        })?;
    }
    Ok(corpus)
}

/// Write a corpus in the JSONL format read by [`load_corpus`]. Snippets are
/// written in insertion order; each line carries the docstring of the first
/// query paired to that snippet (empty when none is).
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let file = File::create(path.as_ref())?;
    let mut writer = BufWriter::new(file);
    for snippet in corpus.snippets() {
        let docstring = corpus
            .queries()
            .iter()
            .find(|q| q.paired_snippet_id == snippet.id)
            .map(|q| q.raw_text.clone())
            .unwrap_or_default();
        let record = RawRecord {
            id: snippet.id.clone(),
            code: snippet.source_text.clone(),
            docstring,
        };
        serde_json::to_writer(&mut writer, &record).map_err(|e| CorpusError::Format {
            line: 0,
            message: e.to_string(),
        })?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_temp(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f
    }

    #[test]
    fn loads_single_record() {
        let f = write_temp(&[r#"{"id":"q1","code":"def f(): pass","docstring":"do nothing"}"#]);
        let corpus = load_corpus(f.path()).unwrap();
        assert_eq!(corpus.num_snippets(), 1);
        assert_eq!(corpus.queries().len(), 1);
        assert_eq!(corpus.queries()[0].raw_text, "do nothing");
        assert_eq!(corpus.queries()[0].paired_snippet_id, "q1");
    }

    #[test]
    fn loads_empty_file() {
        let f = write_temp(&[]);
        let corpus = load_corpus(f.path()).unwrap();
        assert_eq!(corpus.num_snippets(), 0);
        assert!(corpus.queries().is_empty());
    }

    #[test]
    fn rejects_duplicate_ids() {
        let f = write_temp(&[
            r#"{"id":"q1","code":"x = 1","docstring":"a"}"#,
            r#"{"id":"q1","code":"y = 2","docstring":"b"}"#,
        ]);
        match load_corpus(f.path()) {
            Err(CorpusError::DuplicateId(id)) => assert_eq!(id, "q1"),
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_line_with_line_number() {
        let f = write_temp(&[
            r#"{"id":"q1","code":"x = 1","docstring":"a"}"#,
            r#"{"id":"q2", nope}"#,
        ]);
        match load_corpus(f.path()) {
            Err(CorpusError::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected Format error, got {other:?}"),
        }
    }

    #[test]
    fn ignores_unknown_fields() {
        let f =
            write_temp(&[r#"{"id":"q1","code":"x = 1","docstring":"a","language":"python"}"#]);
        assert_eq!(load_corpus(f.path()).unwrap().num_snippets(), 1);
    }

    #[test]
    fn truncates_long_snippets() {
        let body: String = (0..300).map(|i| format!("x{i} = {i}\n")).collect();
        let json = serde_json::json!({"id": "q1", "code": body, "docstring": "d"});
        let f = write_temp(&[&json.to_string()]);
        let corpus = load_corpus(f.path()).unwrap();
        assert_eq!(corpus.snippet("q1").unwrap().tokens.len(), DEFAULT_MAX_TOKENS);
    }

    #[test]
    fn save_load_round_trip() {
        let f = write_temp(&[
            r#"{"id":"a","code":"def f(): pass","docstring":"do nothing"}"#,
            r#"{"id":"b","code":"y = [1]","docstring":"make list"}"#,
        ]);
        let corpus = load_corpus(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_corpus(&corpus, out.path()).unwrap();
        let reloaded = load_corpus(out.path()).unwrap();
        assert_eq!(corpus, reloaded);
    }
}
