//! Query preprocessing and parsing into an action/entity tree.
//!
//! Queries follow the imperative DO-WHAT pattern: a head verb, then
//! arguments that are optionally prepositioned entity phrases or nested
//! actions introduced by gerunds ("by reading ...", "using ...") or
//! "to"-infinitives. The parser is lexicon-driven with catch-all rules:
//! unknown words are entity nouns in argument position and may head the
//! action sentence-initially.

mod chart;
mod lexicon;

pub use lexicon::{gerund_of, LexCategory, Lexicon, LexiconError, PREPOSITIONS};

use std::fmt;

use thiserror::Error;

/// Semantic parse of one query; the root is always an action.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticParse {
    pub root: ActionNode,
}

/// A verb with its ordered arguments. Always has at least one entity-kind
/// argument (the maskable argument).
#[derive(Debug, Clone, PartialEq)]
pub struct ActionNode {
    pub verb: String,
    pub args: Vec<Arg>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arg {
    pub preposition: Option<String>,
    pub payload: ArgPayload,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArgPayload {
    Entity(String),
    Action(ActionNode),
}

impl ActionNode {
    pub fn has_entity_arg(&self) -> bool {
        self.args
            .iter()
            .any(|a| matches!(a.payload, ArgPayload::Entity(_)))
    }

    /// Entity arguments of this node in order, excluding nested actions.
    pub fn entity_args(&self) -> Vec<(Option<String>, String)> {
        self.args
            .iter()
            .filter_map(|a| match &a.payload {
                ArgPayload::Entity(phrase) => Some((a.preposition.clone(), phrase.clone())),
                ArgPayload::Action(_) => None,
            })
            .collect()
    }

    fn nested_actions(&self) -> impl Iterator<Item = &ActionNode> {
        self.args.iter().filter_map(|a| match &a.payload {
            ArgPayload::Action(node) => Some(node),
            ArgPayload::Entity(_) => None,
        })
    }
}

/// Why a query could not be parsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ParseFailure {
    #[error("no verb found in DO position, even after preprocessing")]
    NoVerb,
    #[error("words could not be assembled into a DO-WHAT parse")]
    LexiconMiss,
    #[error("unsupported structure (multiple sentences or negation)")]
    StructureUnsupported,
}

/// Either a semantic parse or the reason parsing failed.
pub type ParseOutcome = Result<SemanticParse, ParseFailure>;

const QUESTION_PREFIXES: &[&[&str]] = &[
    &["how", "to"],
    &["how", "do", "i"],
    &["how", "do", "you"],
    &["how", "can", "i"],
    &["how", "can", "you"],
    &["what", "is"],
    &["what", "are"],
    &["whats"],
    &["ways", "to"],
];

const NEGATION_WORDS: &[&str] = &[
    "not", "never", "nor", "cannot", "dont", "doesnt", "isnt", "wont", "cant",
];

const SENTENCE_BREAKS: &[char] = &['.', ';', '?', '!'];

/// Lexicon-driven query parser. Immutable after construction; `parse` calls
/// are pure.
#[derive(Debug, Clone, Default)]
pub struct QueryParser {
    lexicon: Lexicon,
}

impl QueryParser {
    pub fn new(lexicon: Lexicon) -> Self {
        QueryParser { lexicon }
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    /// Normalize a raw query: lowercase, strip leading question words,
    /// trailing punctuation and language mentions, and prepend "load" when
    /// no action word remains. Idempotent.
    pub fn preprocess(&self, raw: &str) -> String {
        let lowered = raw.to_lowercase();
        // Keep sentence breaks as standalone marker words so parse() can
        // reject multi-sentence inputs; drop other punctuation.
        let mut normalized = String::with_capacity(lowered.len());
        for c in lowered.chars() {
            if c.is_alphanumeric() || c.is_whitespace() {
                normalized.push(c);
            } else if SENTENCE_BREAKS.contains(&c) {
                normalized.push(' ');
                normalized.push(c);
                normalized.push(' ');
            } else {
                normalized.push(' ');
            }
        }
        let mut words: Vec<String> =
            normalized.split_whitespace().map(|w| w.to_string()).collect();

        // Version numbers like "2.7" arrive as ["2", ".", "7"]; re-join them
        // so language-mention removal sees one word and no sentence break.
        let mut joined: Vec<String> = Vec::with_capacity(words.len());
        let mut i = 0;
        while i < words.len() {
            if i + 2 < words.len()
                && words[i].chars().all(|c| c.is_ascii_digit())
                && words[i + 1] == "."
                && words[i + 2].chars().all(|c| c.is_ascii_digit())
            {
                joined.push(format!("{}.{}", words[i], words[i + 2]));
                i += 3;
            } else {
                joined.push(words[i].clone());
                i += 1;
            }
        }
        words = joined;

        loop {
            let mut stripped = false;
            for prefix in QUESTION_PREFIXES {
                if words.len() > prefix.len()
                    && words[..prefix.len()].iter().map(|s| s.as_str()).eq(prefix.iter().copied())
                {
                    words.drain(..prefix.len());
                    stripped = true;
                }
            }
            if !stripped {
                break;
            }
        }

        strip_language_mentions(&mut words);

        while words
            .last()
            .is_some_and(|w| w.chars().all(|c| SENTENCE_BREAKS.contains(&c)))
        {
            words.pop();
        }

        if !words.is_empty() && !self.lexicon.has_action_word(&words) {
            words.insert(0, "load".to_string());
        }
        words.join(" ")
    }

    /// Parse a preprocessed query into its semantic parse.
    pub fn parse(&self, cleaned: &str) -> ParseOutcome {
        let words = tokenize_with_breaks(cleaned);
        if words.is_empty() {
            return Err(ParseFailure::NoVerb);
        }
        if words
            .iter()
            .any(|w| w.chars().all(|c| SENTENCE_BREAKS.contains(&c)))
        {
            return Err(ParseFailure::StructureUnsupported);
        }
        if words.iter().any(|w| NEGATION_WORDS.contains(&w.as_str())) {
            return Err(ParseFailure::StructureUnsupported);
        }

        match chart::Chart::parse_sentence(&self.lexicon, &words) {
            Some(root) => Ok(SemanticParse { root }),
            None => {
                let first = &words[0];
                let initial_can_act = match self.lexicon.lookup(first) {
                    Some(LexCategory::Verb) | Some(LexCategory::Gerund(_)) => true,
                    None => true, // catch-all verb
                    _ => false,
                };
                if initial_can_act {
                    Err(ParseFailure::LexiconMiss)
                } else {
                    Err(ParseFailure::NoVerb)
                }
            }
        }
    }

    /// Preprocess then parse.
    pub fn parse_raw(&self, raw: &str) -> ParseOutcome {
        self.parse(&self.preprocess(raw))
    }
}

/// Word split that keeps sentence-break markers produced by `preprocess`.
fn tokenize_with_breaks(cleaned: &str) -> Vec<String> {
    cleaned
        .split_whitespace()
        .map(|w| w.to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

fn strip_language_mentions(words: &mut Vec<String>) {
    let mut i = 0;
    while i < words.len() {
        if words[i] == "python" || words[i] == "python3" || words[i] == "python2" {
            let mut start = i;
            let mut end = i + 1;
            if i > 0 && words[i - 1] == "in" {
                start = i - 1;
            }
            if end < words.len() && is_version_word(&words[end]) {
                end += 1;
            }
            words.drain(start..end);
            i = start;
        } else {
            i += 1;
        }
    }
}

fn is_version_word(w: &str) -> bool {
    !w.is_empty() && w.chars().all(|c| c.is_ascii_digit() || c == '.')
}

/// Maximum number of nested action levels; 1 for a flat parse.
pub fn max_depth(parse: &SemanticParse) -> usize {
    fn depth(node: &ActionNode) -> usize {
        1 + node.nested_actions().map(depth).max().unwrap_or(0)
    }
    depth(&parse.root)
}

/// Mean entity-argument count over all action nodes (nested-action
/// arguments excluded from each node's count). The ratio of two small
/// integers, so equal ratios compare equal as f64 grouping keys.
pub fn avg_args_per_action(parse: &SemanticParse) -> f64 {
    fn walk(node: &ActionNode, sum: &mut usize, count: &mut usize) {
        *sum += node.entity_args().len();
        *count += 1;
        for nested in node.nested_actions() {
            walk(nested, sum, count);
        }
    }
    let (mut sum, mut count) = (0usize, 0usize);
    walk(&parse.root, &mut sum, &mut count);
    sum as f64 / count as f64
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

fn fmt_action(node: &ActionNode, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    write!(f, "ACTION({}", capitalize(&node.verb))?;
    for arg in &node.args {
        let prep = match &arg.preposition {
            Some(p) => p.to_uppercase(),
            None => "None".to_string(),
        };
        match &arg.payload {
            ArgPayload::Entity(phrase) => write!(f, ", ({prep}, {phrase})")?,
            ArgPayload::Action(nested) => {
                write!(f, ", ({prep}, ")?;
                fmt_action(nested, f)?;
                write!(f, ")")?;
            }
        }
    }
    write!(f, ")")
}

impl fmt::Display for ActionNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_action(self, f)
    }
}

impl fmt::Display for SemanticParse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parser() -> QueryParser {
        QueryParser::default()
    }

    #[test]
    fn preprocess_prepends_load_for_noun_phrases() {
        assert_eq!(parser().preprocess("video page"), "load video page");
    }

    #[test]
    fn preprocess_strips_question_words_and_language() {
        assert_eq!(parser().preprocess("How to open a file in Python?"), "open a file");
        assert_eq!(parser().preprocess("sort dict in python 2.7"), "sort dict");
        assert_eq!(parser().preprocess("sort a dict python 3"), "sort a dict");
    }

    #[test]
    fn preprocess_leaves_clean_queries_alone() {
        assert_eq!(
            parser().preprocess("Load all tables from dataset"),
            "load all tables from dataset"
        );
    }

    #[test]
    fn preprocess_is_idempotent() {
        let p = parser();
        for raw in [
            "How to open a file in Python?",
            "video page",
            "What is a dict",
            "Construct point record by reading points from stream",
            "multi. sentence. input.",
            "",
        ] {
            let once = p.preprocess(raw);
            assert_eq!(p.preprocess(&once), once, "raw: {raw:?}");
        }
    }

    #[test]
    fn parses_flat_query_with_preposition() {
        let outcome = parser().parse("load all tables from dataset").unwrap();
        assert_eq!(
            outcome.to_string(),
            "ACTION(Load, (None, all tables), (FROM, dataset))"
        );
    }

    #[test]
    fn parses_nested_gerund_query() {
        let outcome = parser()
            .parse("construct point record by reading points from stream")
            .unwrap();
        assert_eq!(
            outcome.to_string(),
            "ACTION(Construct, (None, point record), (BY, ACTION(Read, (None, points), (FROM, stream))))"
        );
    }

    #[test]
    fn parses_single_verb_object() {
        let outcome = parser().parse("navigate folders").unwrap();
        assert_eq!(outcome.to_string(), "ACTION(Navigate, (None, folders))");
    }

    #[test]
    fn parses_using_as_nested_action() {
        let outcome = parser().parse("load all tables from dataset using lib library").unwrap();
        assert_eq!(
            outcome.to_string(),
            "ACTION(Load, (None, all tables), (FROM, dataset), (None, ACTION(Use, (None, lib library))))"
        );
    }

    #[test]
    fn parses_infinitive_as_nested_action() {
        let outcome = parser().parse("read file to create index").unwrap();
        assert_eq!(
            outcome.to_string(),
            "ACTION(Read, (None, file), (TO, ACTION(Create, (None, index))))"
        );
    }

    #[test]
    fn catch_all_initial_unknown_word_heads_the_action() {
        let outcome = parser().parse("frobnicate list by reading file").unwrap();
        assert_eq!(outcome.root.verb, "frobnicate");
    }

    #[test]
    fn failure_reasons() {
        let p = parser();
        assert_eq!(p.parse(""), Err(ParseFailure::NoVerb));
        assert_eq!(p.parse("from folders load"), Err(ParseFailure::NoVerb));
        assert_eq!(
            p.parse("check that directory does not exist"),
            Err(ParseFailure::StructureUnsupported)
        );
        assert_eq!(
            p.parse("load files . then sort"),
            Err(ParseFailure::StructureUnsupported)
        );
        assert_eq!(p.parse("sort"), Err(ParseFailure::LexiconMiss));
        assert_eq!(p.parse("load from"), Err(ParseFailure::LexiconMiss));
    }

    #[test]
    fn depth_and_args_statistics() {
        let p = parser();
        let flat = p.parse("load all tables from dataset").unwrap();
        assert_eq!(max_depth(&flat), 1);
        assert_eq!(avg_args_per_action(&flat), 2.0);

        let nested = p
            .parse("construct point record by reading points from stream")
            .unwrap();
        assert_eq!(max_depth(&nested), 2);
        assert_eq!(avg_args_per_action(&nested), 1.5);

        let single = p.parse("load file").unwrap();
        assert_eq!(max_depth(&single), 1);
        assert_eq!(avg_args_per_action(&single), 1.0);
    }

    #[test]
    fn triple_nested_depth() {
        let p = parser();
        let parse = p
            .parse("construct record by reading points to create index from file")
            .unwrap();
        assert_eq!(max_depth(&parse), 3);
    }

    #[test]
    fn depth_one_iff_no_nested_payload() {
        let p = parser();
        for q in ["load file", "construct point record by reading points from stream"] {
            let parse = p.parse(q).unwrap();
            let has_nested = parse.root.args.iter().any(|a| matches!(a.payload, ArgPayload::Action(_)));
            assert_eq!(max_depth(&parse) == 1, !has_nested);
        }
    }

    #[test]
    fn verb_entity_partition_recovers_all_words() {
        let p = parser();
        for q in [
            "load all tables from dataset",
            "construct point record by reading points from stream",
            "navigate folders",
            "convert dict to list with keys",
        ] {
            let parse = p.parse(q).unwrap();
            let mut recovered: Vec<String> = Vec::new();
            flatten_words(&parse.root, &mut recovered);
            let original: Vec<String> = q.split_whitespace().map(|s| s.to_string()).collect();
            assert_eq!(recovered, original, "query: {q}");
        }
    }

    /// Reconstruct the query word sequence from a parse, mapping nested
    /// verbs back through their gerund surface form.
    fn flatten_words(node: &ActionNode, out: &mut Vec<String>) {
        out.push(node.verb.clone());
        for arg in &node.args {
            match &arg.payload {
                ArgPayload::Entity(phrase) => {
                    if let Some(p) = &arg.preposition {
                        out.push(p.clone());
                    }
                    out.extend(phrase.split_whitespace().map(|s| s.to_string()));
                }
                ArgPayload::Action(nested) => {
                    if let Some(p) = &arg.preposition {
                        out.push(p.clone());
                    }
                    let mut inner: Vec<String> = Vec::new();
                    flatten_words(nested, &mut inner);
                    // the nested verb surfaced as a gerund unless introduced
                    // by an infinitive "to"
                    if arg.preposition.as_deref() != Some("to") {
                        inner[0] = gerund_of(&inner[0]);
                    }
                    out.extend(inner);
                }
            }
        }
    }
}
