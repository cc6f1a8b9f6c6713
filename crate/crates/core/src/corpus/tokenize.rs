//! Tokenizers for code snippets and natural-language queries.
//!
//! Code tokenization is word/identifier-level: identifiers are split on
//! underscores and camelCase boundaries into lowercased subtokens, each
//! carrying its exact byte sub-span so spans stay non-overlapping and
//! sorted. Comments and whitespace are dropped.

use super::{CodeToken, TokenKind};

const PYTHON_KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global",
    "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return",
    "try", "while", "with", "yield",
];

const MULTI_CHAR_OPS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "==", "!=", "<=", ">=", "->", ":=", "+=", "-=", "*=",
    "/=", "%=", "&=", "|=", "^=", "**", "//", "<<", ">>",
];

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Valid string-literal prefixes, checked case-insensitively.
fn is_string_prefix(s: &str) -> bool {
    matches!(
        s.to_ascii_lowercase().as_str(),
        "r" | "b" | "u" | "f" | "rb" | "br" | "fr" | "rf"
    )
}

/// Tokenize Python-style source text into [`CodeToken`]s.
///
/// Deterministic and total: malformed input (unterminated strings, stray
/// bytes) degrades to `Other`/`Literal` tokens, never an error. Empty input
/// yields an empty sequence.
pub fn tokenize_code(source_text: &str) -> Vec<CodeToken> {
    let mut tokens = Vec::new();
    let chars: Vec<(usize, char)> = source_text.char_indices().collect();
    let mut i = 0usize; // index into `chars`

    while i < chars.len() {
        let (start, c) = chars[i];

        if c.is_whitespace() {
            i += 1;
            continue;
        }

        // Line comment: skip to end of line.
        if c == '#' {
            while i < chars.len() && chars[i].1 != '\n' {
                i += 1;
            }
            continue;
        }

        if c == '"' || c == '\'' {
            i = lex_string(source_text, &chars, i, start, &mut tokens);
            continue;
        }

        if c.is_ascii_digit() {
            i = lex_number(source_text, &chars, i, &mut tokens);
            continue;
        }

        if is_ident_start(c) {
            while i < chars.len() && is_ident_continue(chars[i].1) {
                i += 1;
            }
            let end = byte_end(&chars, i, source_text);
            let word = &source_text[start..end];

            // String prefix glued to a quote forms one literal token.
            if is_string_prefix(word)
                && i < chars.len()
                && (chars[i].1 == '"' || chars[i].1 == '\'')
            {
                i = lex_string(source_text, &chars, i, start, &mut tokens);
                continue;
            }

            if PYTHON_KEYWORDS.contains(&word) {
                tokens.push(CodeToken {
                    text: word.to_string(),
                    byte_span: (start, end),
                    kind: TokenKind::Keyword,
                });
            } else {
                split_identifier(word, start, &mut tokens);
            }
            continue;
        }

        // Multi-character operators, longest match first.
        let rest = &source_text[start..];
        if let Some(op) = MULTI_CHAR_OPS.iter().find(|op| rest.starts_with(**op)) {
            tokens.push(CodeToken {
                text: (*op).to_string(),
                byte_span: (start, start + op.len()),
                kind: TokenKind::Punctuation,
            });
            i += op.chars().count();
            continue;
        }

        let char_end = start + c.len_utf8();
        let kind = if c.is_ascii_punctuation() {
            TokenKind::Punctuation
        } else {
            TokenKind::Other
        };
        tokens.push(CodeToken {
            text: source_text[start..char_end].to_string(),
            byte_span: (start, char_end),
            kind,
        });
        i += 1;
    }

    debug_assert!(tokens.windows(2).all(|w| w[0].byte_span.1 <= w[1].byte_span.0));
    tokens
}

fn byte_end(chars: &[(usize, char)], i: usize, source: &str) -> usize {
    if i < chars.len() {
        chars[i].0
    } else {
        source.len()
    }
}

/// Lex a (possibly triple-quoted, possibly prefixed) string literal starting
/// at char index `i`, with the token beginning at byte `tok_start` (which may
/// precede `i` when a prefix like `b` or `f` was consumed).
fn lex_string(
    source: &str,
    chars: &[(usize, char)],
    mut i: usize,
    tok_start: usize,
    tokens: &mut Vec<CodeToken>,
) -> usize {
    let quote = chars[i].1;
    let triple = i + 2 < chars.len() && chars[i + 1].1 == quote && chars[i + 2].1 == quote;
    i += if triple { 3 } else { 1 };

    loop {
        if i >= chars.len() {
            break; // unterminated: consume to end of input
        }
        let c = chars[i].1;
        if c == '\\' {
            i = (i + 2).min(chars.len());
            continue;
        }
        if c == quote {
            if triple {
                if i + 2 < chars.len() && chars[i + 1].1 == quote && chars[i + 2].1 == quote {
                    i += 3;
                    break;
                }
            } else {
                i += 1;
                break;
            }
        } else if !triple && c == '\n' {
            break; // unterminated single-line string
        }
        i += 1;
    }

    let end = byte_end(chars, i, source);
    tokens.push(CodeToken {
        text: source[tok_start..end].to_string(),
        byte_span: (tok_start, end),
        kind: TokenKind::Literal,
    });
    i
}

fn lex_number(
    source: &str,
    chars: &[(usize, char)],
    mut i: usize,
    tokens: &mut Vec<CodeToken>,
) -> usize {
    let start = chars[i].0;
    while i < chars.len() {
        let c = chars[i].1;
        if c.is_alphanumeric() || c == '.' || c == '_' {
            i += 1;
        } else if (c == '+' || c == '-')
            && i > 0
            && matches!(chars[i - 1].1, 'e' | 'E')
            && i + 1 < chars.len()
            && chars[i + 1].1.is_ascii_digit()
        {
            i += 1; // exponent sign
        } else {
            break;
        }
    }
    let end = byte_end(chars, i, source);
    tokens.push(CodeToken {
        text: source[start..end].to_string(),
        byte_span: (start, end),
        kind: TokenKind::Literal,
    });
    i
}

/// Split an identifier into lowercased subtokens on underscores and
/// camelCase boundaries. Each subtoken's span covers exactly its own bytes.
fn split_identifier(word: &str, word_start: usize, tokens: &mut Vec<CodeToken>) {
    for (part, part_offset) in underscore_parts(word) {
        for (sub, sub_offset) in camel_parts(part) {
            let start = word_start + part_offset + sub_offset;
            tokens.push(CodeToken {
                text: sub.to_lowercase(),
                byte_span: (start, start + sub.len()),
                kind: TokenKind::Identifier,
            });
        }
    }
}

fn underscore_parts(word: &str) -> Vec<(&str, usize)> {
    let mut parts = Vec::new();
    let mut start = 0;
    for (i, c) in word.char_indices() {
        if c == '_' {
            if i > start {
                parts.push((&word[start..i], start));
            }
            start = i + 1;
        }
    }
    if start < word.len() {
        parts.push((&word[start..], start));
    }
    parts
}

/// camelCase boundaries: before an uppercase that follows a non-uppercase,
/// and before the last uppercase of a run that is followed by lowercase
/// (`HTTPServer` -> `HTTP`, `Server`). Digits stay attached.
fn camel_parts(part: &str) -> Vec<(&str, usize)> {
    let chars: Vec<(usize, char)> = part.char_indices().collect();
    let mut boundaries = vec![0usize];
    for w in 1..chars.len() {
        let (bi, cur) = chars[w];
        let prev = chars[w - 1].1;
        if cur.is_uppercase() && !prev.is_uppercase() {
            boundaries.push(bi);
        } else if cur.is_lowercase()
            && prev.is_uppercase()
            && w >= 2
            && chars[w - 2].1.is_uppercase()
        {
            boundaries.push(chars[w - 1].0);
        }
    }
    boundaries.dedup();
    let mut out = Vec::new();
    for (n, &b) in boundaries.iter().enumerate() {
        let end = boundaries.get(n + 1).copied().unwrap_or(part.len());
        if b < end {
            out.push((&part[b..end], b));
        }
    }
    out
}

/// Tokenize a natural-language query into lowercase word tokens, splitting
/// on anything that is not alphanumeric.
pub fn tokenize_query(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(source: &str) -> Vec<String> {
        tokenize_code(source).into_iter().map(|t| t.text).collect()
    }

    /// Character-level reference splitter used as an oracle for identifier
    /// splitting: walks the word emitting a boundary at every underscore,
    /// lower->upper transition, and upper-run->lower transition.
    fn reference_split(word: &str) -> Vec<String> {
        let cs: Vec<char> = word.chars().collect();
        let mut out: Vec<String> = Vec::new();
        let mut cur = String::new();
        for i in 0..cs.len() {
            let c = cs[i];
            if c == '_' {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                continue;
            }
            let boundary = if cur.is_empty() {
                false
            } else if c.is_uppercase() && !cs[i - 1].is_uppercase() && cs[i - 1] != '_' {
                true
            } else {
                c.is_lowercase()
                    && cs[i - 1].is_uppercase()
                    && i >= 2
                    && cs[i - 2].is_uppercase()
            };
            if boundary {
                out.push(std::mem::take(&mut cur));
                if c.is_lowercase() && cs[i - 1].is_uppercase() {
                    // the previous uppercase belongs to this part
                    let moved = out.last_mut().unwrap().pop().unwrap();
                    cur.push(moved);
                }
            }
            cur.push(c);
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out.into_iter().map(|p| p.to_lowercase()).collect()
    }

    #[test]
    fn assignment_with_brackets() {
        let toks = tokenize_code("dirlist = []");
        let got: Vec<(&str, TokenKind)> = toks.iter().map(|t| (t.text.as_str(), t.kind)).collect();
        assert_eq!(
            got,
            vec![
                ("dirlist", TokenKind::Identifier),
                ("=", TokenKind::Punctuation),
                ("[", TokenKind::Punctuation),
                ("]", TokenKind::Punctuation),
            ]
        );
    }

    #[test]
    fn camel_case_split() {
        assert_eq!(texts("fileList"), vec!["file", "list"]);
    }

    #[test]
    fn call_with_snake_case_matches_reference_splitter() {
        assert_eq!(
            texts("load_all_tables(ds)"),
            vec!["load", "all", "tables", "(", "ds", ")"]
        );
        assert_eq!(reference_split("load_all_tables"), vec!["load", "all", "tables"]);
    }

    #[test]
    fn splitter_matches_reference_on_identifier_inventory() {
        for word in [
            "fileList", "load_all_tables", "HTTPServer", "parseJSONValue", "x", "a_b_c",
            "utf8Decode", "readCSVFile", "_private", "__dunder__", "camelCaseID", "v2Load",
        ] {
            let got: Vec<String> = {
                let mut v = Vec::new();
                split_identifier(word, 0, &mut v);
                v.into_iter().map(|t| t.text).collect()
            };
            assert_eq!(got, reference_split(word), "word: {word}");
        }
    }

    #[test]
    fn subtoken_spans_are_exact_and_sorted() {
        let src = "def readFileList(path_name):";
        let toks = tokenize_code(src);
        for t in &toks {
            let (s, e) = t.byte_span;
            assert!(s < e && e <= src.len());
            if t.kind == TokenKind::Identifier {
                assert_eq!(src[s..e].to_lowercase(), t.text);
            }
        }
        for w in toks.windows(2) {
            assert!(w[0].byte_span.1 <= w[1].byte_span.0);
        }
    }

    #[test]
    fn strings_numbers_comments() {
        assert_eq!(texts("s = 'abc'  # comment"), vec!["s", "=", "'abc'"]);
        assert_eq!(texts("b = b'\\x00'"), vec!["b", "=", "b'\\x00'"]);
        assert_eq!(texts("x = 1.5e-3"), vec!["x", "=", "1.5e-3"]);
        assert_eq!(texts("'''doc\nstring'''"), vec!["'''doc\nstring'''"]);
    }

    #[test]
    fn unterminated_string_does_not_panic() {
        assert_eq!(texts("s = 'oops"), vec!["s", "=", "'oops"]);
        assert_eq!(texts("s = '''oops"), vec!["s", "=", "'''oops"]);
    }

    #[test]
    fn empty_input_yields_empty_sequence() {
        assert!(tokenize_code("").is_empty());
    }

    #[test]
    fn query_tokenization() {
        assert_eq!(tokenize_query("Load all tables"), vec!["load", "all", "tables"]);
        assert!(tokenize_query("").is_empty());
        assert_eq!(tokenize_query("dict-to-list"), vec!["dict", "to", "list"]);
    }
}
