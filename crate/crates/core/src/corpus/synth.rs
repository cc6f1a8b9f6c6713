//! Deterministic synthetic query/code corpus.
//!
//! Templates compose a fixed verb and entity inventory into an imperative
//! query and a small Python snippet whose identifiers echo the entities
//! (sometimes through a synonym) and whose body carries an idiom token for
//! the verb (sometimes the verb word itself, sometimes a related call like
//! `sorted` for "sort"). Every generated query parses; each action carries
//! one to three entity arguments and about a quarter of queries nest a
//! second action.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CodeSnippet, Corpus, CorpusError, QueryRecord, DEFAULT_MAX_TOKENS};
use crate::parser::gerund_of;

struct GenVerb {
    verb: &'static str,
    /// Code-side cue tokens; the idiom line uses one of these.
    cues: [&'static str; 2],
}

const GEN_VERBS: &[GenVerb] = &[
    GenVerb { verb: "load", cues: ["loads", "loader"] },
    GenVerb { verb: "read", cues: ["readlines", "reader"] },
    GenVerb { verb: "write", cues: ["writelines", "writer"] },
    GenVerb { verb: "sort", cues: ["sorted", "sortkey"] },
    GenVerb { verb: "remove", cues: ["pop", "discard"] },
    GenVerb { verb: "convert", cues: ["cast", "astype"] },
    GenVerb { verb: "create", cues: ["init", "newobj"] },
    GenVerb { verb: "merge", cues: ["update", "extend"] },
    GenVerb { verb: "filter", cues: ["select", "where"] },
    GenVerb { verb: "count", cues: ["len", "total"] },
    GenVerb { verb: "copy", cues: ["deepcopy", "clone"] },
    GenVerb { verb: "construct", cues: ["assemble", "factory"] },
];

struct GenEntity {
    word: &'static str,
    /// Synonym used for the code-side echo about a quarter of the time.
    synonym: Option<&'static str>,
    /// Literal constructor exposing the entity to static analysis.
    constructor: Option<&'static str>,
}

const GEN_ENTITIES: &[GenEntity] = &[
    GenEntity { word: "file", synonym: Some("fp"), constructor: None },
    GenEntity { word: "list", synonym: Some("array"), constructor: Some("[]") },
    GenEntity { word: "dict", synonym: Some("map"), constructor: Some("{}") },
    GenEntity { word: "string", synonym: Some("text"), constructor: Some("''") },
    GenEntity { word: "folder", synonym: Some("dir"), constructor: None },
    GenEntity { word: "table", synonym: None, constructor: None },
    GenEntity { word: "tables", synonym: None, constructor: None },
    GenEntity { word: "dataset", synonym: None, constructor: None },
    GenEntity { word: "lines", synonym: None, constructor: Some("[]") },
    GenEntity { word: "points", synonym: None, constructor: Some("[]") },
    GenEntity { word: "record", synonym: None, constructor: None },
    GenEntity { word: "stream", synonym: None, constructor: None },
    GenEntity { word: "path", synonym: Some("dirname"), constructor: None },
    GenEntity { word: "columns", synonym: None, constructor: Some("[]") },
    GenEntity { word: "rows", synonym: None, constructor: Some("[]") },
    GenEntity { word: "json", synonym: None, constructor: None },
    GenEntity { word: "keys", synonym: None, constructor: Some("[]") },
    GenEntity { word: "values", synonym: None, constructor: Some("[]") },
    GenEntity { word: "index", synonym: None, constructor: Some("0") },
    GenEntity { word: "tuple", synonym: None, constructor: Some("(0, 1)") },
];

const PREPS: &[&str] = &["from", "to", "in", "with", "into", "of"];

/// Generate `n_pairs` query/code pairs, deterministically for a fixed seed.
pub fn generate_synthetic_corpus(seed: u64, n_pairs: usize) -> Result<Corpus, CorpusError> {
    if n_pairs < 1 {
        return Err(CorpusError::InvalidArgument(n_pairs));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Corpus::new();

    for idx in 0..n_pairs {
        let id = format!("p{idx:04}");
        let (query, code) = generate_pair(&mut rng);
        corpus.insert_snippet(CodeSnippet::new(id.clone(), code, DEFAULT_MAX_TOKENS))?;
        corpus.insert_query(QueryRecord {
            id: id.clone(),
            raw_text: query,
            paired_snippet_id: id,
        })?;
    }
    Ok(corpus)
}

fn generate_pair(rng: &mut ChaCha8Rng) -> (String, String) {
    let nested = rng.gen_bool(0.25);
    let verb = pick(rng, GEN_VERBS);
    let n_args = 1 + rng.gen_range(0..3usize); // 1..=3
    let entities = pick_distinct(rng, GEN_ENTITIES, n_args + if nested { 2 } else { 0 });
    let (outer, extra) = entities.split_at(n_args);

    let mut query = String::new();
    query.push_str(verb.verb);
    query.push(' ');
    if rng.gen_bool(0.2) {
        query.push_str("all ");
    }
    query.push_str(outer[0].word);
    let preps: Vec<&str> = pick_distinct(rng, PREPS, 2).into_iter().copied().collect();
    for (i, e) in outer.iter().enumerate().skip(1) {
        query.push(' ');
        query.push_str(preps[i - 1]);
        query.push(' ');
        query.push_str(e.word);
    }

    let mut verbs = vec![verb];
    if nested {
        let inner_verb = pick(rng, GEN_VERBS);
        let use_infinitive = rng.gen_bool(0.3);
        if use_infinitive {
            query.push_str(&format!(" to {} {}", inner_verb.verb, extra[0].word));
        } else {
            query.push_str(&format!(" by {} {}", gerund_of(inner_verb.verb), extra[0].word));
            if rng.gen_bool(0.5) {
                query.push_str(&format!(" from {}", extra[1].word));
            }
        }
        verbs.push(inner_verb);
    }

    let code = generate_code(rng, &verbs, &entities);

    debug_assert!(
        crate::parser::QueryParser::default().parse_raw(&query).is_ok(),
        "generated query must parse: {query:?}"
    );
    (query, code)
}

fn generate_code(rng: &mut ChaCha8Rng, verbs: &[&GenVerb], entities: &[&GenEntity]) -> String {
    let head = entities[0];
    let include_verb_word = rng.gen_bool(0.5);
    let fn_head = if include_verb_word {
        format!("{}_{}", verbs[0].verb, ident_of(head.word))
    } else {
        format!("{}_{}", verbs[0].cues[0], ident_of(head.word))
    };
    let param = if entities.len() > 1 { ident_of(entities[1].word) } else { "src".to_string() };

    let mut lines = vec![format!("def {fn_head}({param}):")];
    for e in entities {
        let ident = echo_ident(rng, e);
        let rhs = match e.constructor {
            Some(c) if rng.gen_bool(0.7) => c.to_string(),
            _ => match rng.gen_range(0..3) {
                0 => format!("get_{ident}()"),
                1 => format!("{param}.{ident}"),
                _ => "None".to_string(),
            },
        };
        lines.push(format!("    {ident} = {rhs}"));
    }
    for v in verbs {
        let cue = v.cues[rng.gen_range(0..2)];
        let target_entity = entities[rng.gen_range(0..entities.len())];
        let target = echo_ident(rng, target_entity);
        let line = match rng.gen_range(0..3) {
            0 => format!("    out = {cue}({target})"),
            1 => format!("    {target} = {cue}({param})"),
            _ => format!("    out = {param}.{cue}({target})"),
        };
        lines.push(line);
    }
    if rng.gen_bool(0.3) {
        let noise = pick(rng, GEN_ENTITIES);
        lines.push(format!("    tmp = get_{}()", ident_of(noise.word)));
    }
    lines.push("    return out".to_string());
    lines.join("\n")
}

fn echo_ident(rng: &mut ChaCha8Rng, e: &GenEntity) -> String {
    match e.synonym {
        Some(s) if rng.gen_bool(0.25) => s.to_string(),
        _ => ident_of(e.word),
    }
}

fn ident_of(word: &str) -> String {
    word.replace(' ', "_")
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

fn pick_distinct<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T], n: usize) -> Vec<&'a T> {
    assert!(n <= items.len());
    let mut indices: Vec<usize> = Vec::new();
    while indices.len() < n {
        let i = rng.gen_range(0..items.len());
        if !indices.contains(&i) {
            indices.push(i);
        }
    }
    indices.into_iter().map(|i| &items[i]).collect()
}
