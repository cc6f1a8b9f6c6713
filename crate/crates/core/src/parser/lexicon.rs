//! Lexical categories and the seed lexicon driving the query parser.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

/// Category of a single query word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LexCategory {
    /// Action verb in base form.
    Verb,
    /// Gerund carrying its base verb ("reading" -> "read").
    Gerund(String),
    /// Entity noun.
    Noun,
    /// Determiner or adjective; absorbed into the following entity phrase.
    Modifier,
    /// Case-marking preposition from the closed list.
    Preposition,
}

/// Closed preposition list; "using" is lexicalized as the gerund of "use"
/// instead so that it introduces a nested action.
pub const PREPOSITIONS: &[&str] = &["to", "from", "in", "by", "with", "of", "into", "for"];

const VERBS: &[&str] = &[
    "load", "read", "write", "sort", "remove", "convert", "create", "construct", "open",
    "close", "parse", "find", "get", "fetch", "delete", "save", "check", "navigate",
    "iterate", "merge", "split", "filter", "count", "copy", "move", "rename", "download",
    "upload", "extract", "insert", "update", "append", "search", "build", "generate",
    "compute", "print", "send", "use", "make", "add", "run", "join", "replace", "validate",
];

const NOUNS: &[&str] = &[
    "file", "files", "list", "lists", "dict", "dicts", "dictionary", "string", "strings",
    "folder", "folders", "table", "tables", "dataset", "datasets", "data", "line", "lines",
    "point", "points", "record", "records", "stream", "streams", "path", "paths",
    "directory", "directories", "map", "array", "arrays", "number", "numbers", "value",
    "values", "key", "keys", "column", "columns", "row", "rows", "json", "csv", "xml",
    "text", "word", "words", "page", "pages", "image", "images", "url", "database", "index",
    "element", "elements", "object", "objects", "item", "items", "library", "tuple", "set",
    "bytes", "integer", "boolean", "character", "characters", "result", "results",
    "content", "contents", "argument", "arguments", "variable", "variables", "name",
    "names", "user", "users", "server", "message", "messages", "config", "log", "logs",
    "queue", "node", "nodes", "tree", "graph",
];

const MODIFIERS: &[&str] = &[
    "a", "an", "the", "all", "any", "each", "every", "some", "new", "old", "given",
    "current", "single", "multiple", "first", "last", "empty", "unique", "nested",
    "temporary", "specified",
];

/// Verbs whose final consonant doubles before "-ing".
const DOUBLING_VERBS: &[&str] = &["get", "run", "put", "cut", "set", "split", "stop"];

/// Regular gerund inflection; exceptions come from [`DOUBLING_VERBS`].
pub fn gerund_of(verb: &str) -> String {
    if DOUBLING_VERBS.contains(&verb) {
        let last = verb.chars().last().unwrap();
        return format!("{verb}{last}ing");
    }
    if let Some(stem) = verb.strip_suffix('e') {
        if !stem.ends_with('e') {
            return format!("{stem}ing");
        }
    }
    format!("{verb}ing")
}

/// Word -> category map. Unknown words are handled by catch-all rules in
/// the parser (entity noun in argument position, verb sentence-initially).
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: HashMap<String, LexCategory>,
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("io error reading lexicon: {0}")]
    Io(#[from] std::io::Error),
    #[error("lexicon is not a JSON object of word -> category strings: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown category {category:?} for word {word:?}")]
    UnknownCategory { word: String, category: String },
}

impl Lexicon {
    /// The built-in seed lexicon: ~45 verbs with derived gerunds, ~80 entity
    /// nouns, determiners/adjectives, and the closed preposition list.
    pub fn seed() -> Self {
        let mut entries = HashMap::new();
        for &p in PREPOSITIONS {
            entries.insert(p.to_string(), LexCategory::Preposition);
        }
        for &m in MODIFIERS {
            entries.insert(m.to_string(), LexCategory::Modifier);
        }
        for &n in NOUNS {
            entries.insert(n.to_string(), LexCategory::Noun);
        }
        for &v in VERBS {
            entries.insert(v.to_string(), LexCategory::Verb);
            entries.insert(gerund_of(v), LexCategory::Gerund(v.to_string()));
        }
        Lexicon { entries }
    }

    /// Load a lexicon from a JSON map of word -> category. Categories are
    /// `"verb"`, `"noun"`, `"modifier"`, `"preposition"`, or `"gerund:<base>"`.
    /// Verbs get regular gerund entries derived automatically.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path)?;
        let raw: HashMap<String, String> = serde_json::from_str(&text)?;
        let mut entries = HashMap::new();
        let mut verbs = Vec::new();
        for (word, category) in raw {
            let word = word.to_lowercase();
            let cat = match category.as_str() {
                "verb" => {
                    verbs.push(word.clone());
                    LexCategory::Verb
                }
                "noun" => LexCategory::Noun,
                "modifier" => LexCategory::Modifier,
                "preposition" => LexCategory::Preposition,
                other => match other.strip_prefix("gerund:") {
                    Some(base) => LexCategory::Gerund(base.to_string()),
                    None => {
                        return Err(LexiconError::UnknownCategory { word, category });
                    }
                },
            };
            entries.insert(word, cat);
        }
        for verb in verbs {
            entries
                .entry(gerund_of(&verb))
                .or_insert_with(|| LexCategory::Gerund(verb.clone()));
        }
        Ok(Lexicon { entries })
    }

    pub fn lookup(&self, word: &str) -> Option<&LexCategory> {
        self.entries.get(word)
    }

    pub fn is_verb(&self, word: &str) -> bool {
        matches!(self.lookup(word), Some(LexCategory::Verb))
    }

    /// True for verbs and gerunds; used by preprocessing to decide whether
    /// a query already names an action.
    pub fn has_action_word(&self, words: &[String]) -> bool {
        words.iter().any(|w| {
            matches!(
                self.lookup(w),
                Some(LexCategory::Verb) | Some(LexCategory::Gerund(_))
            )
        })
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::seed()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gerund_inflection() {
        assert_eq!(gerund_of("read"), "reading");
        assert_eq!(gerund_of("create"), "creating");
        assert_eq!(gerund_of("use"), "using");
        assert_eq!(gerund_of("get"), "getting");
        assert_eq!(gerund_of("split"), "splitting");
        assert_eq!(gerund_of("copy"), "copying");
    }

    #[test]
    fn seed_has_expected_categories() {
        let lex = Lexicon::seed();
        assert!(lex.is_verb("load"));
        assert_eq!(lex.lookup("using"), Some(&LexCategory::Gerund("use".into())));
        assert_eq!(lex.lookup("from"), Some(&LexCategory::Preposition));
        assert_eq!(lex.lookup("all"), Some(&LexCategory::Modifier));
        assert_eq!(lex.lookup("tables"), Some(&LexCategory::Noun));
        assert!(lex.lookup("frobnicate").is_none());
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lex.json");
        std::fs::write(
            &path,
            r#"{"sync": "verb", "archive": "noun", "via": "preposition", "zipping": "gerund:zip"}"#,
        )
        .unwrap();
        let lex = Lexicon::from_json_file(&path).unwrap();
        assert!(lex.is_verb("sync"));
        assert_eq!(lex.lookup("syncing"), Some(&LexCategory::Gerund("sync".into())));
        assert_eq!(lex.lookup("zipping"), Some(&LexCategory::Gerund("zip".into())));
        assert_eq!(lex.lookup("via"), Some(&LexCategory::Preposition));
    }
}
