//! Lightweight syntactic analysis of Python snippets.
//!
//! Recognizes literal constructors, comprehensions and boolean operators
//! from the token stream alone: bracket pairs are matched, subscripts and
//! calls are told apart from displays by the preceding token, and `for` /
//! `:` at the top nesting level of a pair decide the comprehension and dict
//! cases. No full parse is attempted; unbalanced brackets make the analysis
//! unavailable and yield an all-zero vector.

use super::{LabelSources, WeakLabelVector};
use crate::corpus::{tokenize_query, CodeSnippet, TokenKind};

/// Construct kinds assignable by the analyzer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StaticConstruct {
    List,
    ListComprehension,
    GeneratorExpression,
    Dict,
    DictComprehension,
    Set,
    SetComprehension,
    BoolOperator,
    Bytes,
    Str,
    Tuple,
}

impl StaticConstruct {
    /// Canonical type word used for cross-matching against query entities.
    pub fn type_word(&self) -> &'static str {
        match self {
            StaticConstruct::List | StaticConstruct::ListComprehension => "list",
            StaticConstruct::GeneratorExpression => "generator",
            StaticConstruct::Dict | StaticConstruct::DictComprehension => "dict",
            StaticConstruct::Set | StaticConstruct::SetComprehension => "set",
            StaticConstruct::BoolOperator => "boolean",
            StaticConstruct::Bytes => "bytes",
            StaticConstruct::Str => "string",
            StaticConstruct::Tuple => "tuple",
        }
    }
}

/// Result of static labeling; `available` is false when the snippet could
/// not be analyzed (labels are then all zero).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticLabels {
    pub vector: WeakLabelVector,
    pub available: bool,
}

/// Detect constructs as (kind, token index range) pairs. Token ranges are
/// inclusive of the bracketing tokens. Returns `None` when brackets do not
/// balance.
pub fn detect_constructs(snippet: &CodeSnippet) -> Option<Vec<(StaticConstruct, std::ops::Range<usize>)>> {
    let tokens = &snippet.tokens;
    let mut constructs = Vec::new();
    let mut stack: Vec<(usize, char)> = Vec::new();

    for (i, tok) in tokens.iter().enumerate() {
        match tok.kind {
            TokenKind::Literal => {
                if let Some(kind) = classify_literal(&tok.text) {
                    constructs.push((kind, i..i + 1));
                }
            }
            TokenKind::Keyword => {
                if matches!(tok.text.as_str(), "and" | "or" | "not") {
                    constructs.push((StaticConstruct::BoolOperator, i..i + 1));
                }
            }
            TokenKind::Punctuation => match tok.text.as_str() {
                "[" | "{" | "(" => stack.push((i, tok.text.chars().next().unwrap())),
                "]" | "}" | ")" => {
                    let (open_idx, open) = stack.pop()?;
                    let expected = match tok.text.as_str() {
                        "]" => '[',
                        "}" => '{',
                        _ => '(',
                    };
                    if open != expected {
                        return None;
                    }
                    if let Some(kind) = classify_pair(tokens, open_idx, i, open) {
                        constructs.push((kind, open_idx..i + 1));
                    }
                }
                _ => {}
            },
            _ => {}
        }
    }
    if !stack.is_empty() {
        return None;
    }
    Some(constructs)
}

fn classify_literal(text: &str) -> Option<StaticConstruct> {
    let prefix_end = text.find(['\'', '"'])?;
    let prefix = text[..prefix_end].to_ascii_lowercase();
    if prefix.contains('b') {
        Some(StaticConstruct::Bytes)
    } else {
        Some(StaticConstruct::Str)
    }
}

/// Decide what a bracket pair denotes, if anything.
fn classify_pair(
    tokens: &[crate::corpus::CodeToken],
    open: usize,
    close: usize,
    bracket: char,
) -> Option<StaticConstruct> {
    // Subscripts and calls follow a value; displays follow an operator,
    // keyword, comma or the start of a line.
    let follows_value = open > 0
        && matches!(
            (&tokens[open - 1].kind, tokens[open - 1].text.as_str()),
            (TokenKind::Identifier, _) | (TokenKind::Literal, _) | (_, ")") | (_, "]")
        );

    let mut depth = 0usize;
    let mut has_for = false;
    let mut has_colon = false;
    let mut has_comma = false;
    for tok in &tokens[open + 1..close] {
        match (tok.kind, tok.text.as_str()) {
            (TokenKind::Punctuation, "[" | "{" | "(") => depth += 1,
            (TokenKind::Punctuation, "]" | "}" | ")") => depth = depth.saturating_sub(1),
            (TokenKind::Keyword, "for") if depth == 0 => has_for = true,
            (TokenKind::Punctuation, ":") if depth == 0 => has_colon = true,
            (TokenKind::Punctuation, ",") if depth == 0 => has_comma = true,
            _ => {}
        }
    }
    let empty = close == open + 1;

    match bracket {
        '[' if follows_value => None, // subscript
        '[' if has_for => Some(StaticConstruct::ListComprehension),
        '[' => Some(StaticConstruct::List),
        '{' if empty || has_colon => {
            if has_for {
                Some(StaticConstruct::DictComprehension)
            } else {
                Some(StaticConstruct::Dict)
            }
        }
        '{' if has_for => Some(StaticConstruct::SetComprehension),
        '{' => Some(StaticConstruct::Set),
        '(' if follows_value => None, // call
        '(' if has_for => Some(StaticConstruct::GeneratorExpression),
        '(' if has_comma => Some(StaticConstruct::Tuple),
        _ => None, // plain grouping parentheses
    }
}

/// Assign label 1 to every token inside a construct whose type word
/// cross-matches a word of the entity phrase (directly or via synonyms).
/// Syntactically unanalyzable snippets yield an all-zero vector with
/// `available` set to false.
pub fn static_type_labels(snippet: &CodeSnippet, entity_phrase: &str) -> StaticLabels {
    let n = snippet.tokens.len();
    let constructs = match detect_constructs(snippet) {
        Some(c) => c,
        None => {
            return StaticLabels { vector: WeakLabelVector::zeros(n), available: false };
        }
    };

    let words = tokenize_query(entity_phrase);
    let mut sources = vec![LabelSources::default(); n];
    for (kind, range) in constructs {
        let type_word = kind.type_word();
        let hit = words.iter().any(|w| super::word_matches_token(w, type_word));
        if hit {
            for src in &mut sources[range] {
                src.static_analysis = true;
            }
        }
    }
    StaticLabels { vector: WeakLabelVector::from_sources(sources), available: true }
}
