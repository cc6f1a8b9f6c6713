//! Compile a semantic parse into the flat list of action evaluations run by
//! the scorer.
//!
//! Each action node contributes one [`ActionEvaluation`]: its entity
//! arguments minus one, plus that one masked argument the action module must
//! predict. Nested actions are flattened depth-first and scored separately;
//! their conjunction forms the final match probability.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::parser::{ActionNode, ArgPayload, SemanticParse};

/// Module variants exist for 1 to 3 entity inputs; extra arguments are
/// dropped with a warning.
pub const MAX_ENTITY_ARGS: usize = 3;

/// One action-module evaluation: the seen arguments and the masked one.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionEvaluation {
    pub verb: String,
    pub seen_args: Vec<(Option<String>, String)>,
    pub masked_arg: (Option<String>, String),
    /// Total entity inputs, `seen_args.len() + 1`, in 1..=3.
    pub variant: usize,
}

impl ActionEvaluation {
    /// Appendix-style notation with seen arguments first and the masked
    /// argument last.
    pub fn to_notation(&self) -> String {
        let mut out = format!("ACTION({}", capitalize(&self.verb));
        for (prep, phrase) in self.seen_args.iter().chain(std::iter::once(&self.masked_arg)) {
            let prep = prep
                .as_deref()
                .map(|p| p.to_uppercase())
                .unwrap_or_else(|| "None".to_string());
            out.push_str(&format!(", ({prep}, {phrase})"));
        }
        out.push(')');
        out
    }
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// The compiled network layout: one evaluation per action node, in
/// depth-first order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleLayout {
    pub evaluations: Vec<ActionEvaluation>,
}

impl fmt::Display for ModuleLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, eval) in self.evaluations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}", eval.to_notation())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("action {verb:?} has no entity argument to mask")]
    NoEntityArg { verb: String },
}

/// Compile a parse into its module layout.
///
/// Within each node the last entity argument is masked. Nested actions
/// follow the rewritten argument order: the preposition-less direct object
/// moves to the end before masking, so "by reading points from stream"
/// masks "points" with "(from, stream)" seen.
pub fn compile(parse: &SemanticParse) -> Result<ModuleLayout, LayoutError> {
    let mut evaluations = Vec::new();
    compile_node(&parse.root, false, &mut evaluations)?;
    Ok(ModuleLayout { evaluations })
}

fn compile_node(
    node: &ActionNode,
    nested: bool,
    out: &mut Vec<ActionEvaluation>,
) -> Result<(), LayoutError> {
    let mut entity_args = node.entity_args();
    if entity_args.is_empty() {
        return Err(LayoutError::NoEntityArg { verb: node.verb.clone() });
    }
    if entity_args.len() > MAX_ENTITY_ARGS {
        log::warn!(
            "action {:?}: dropping {} entity argument(s) beyond the first {MAX_ENTITY_ARGS}",
            node.verb,
            entity_args.len() - MAX_ENTITY_ARGS
        );
        entity_args.truncate(MAX_ENTITY_ARGS);
    }

    if nested && entity_args.len() > 1 {
        if let Some(pos) = entity_args.iter().position(|(prep, _)| prep.is_none()) {
            let direct_object = entity_args.remove(pos);
            entity_args.push(direct_object);
        }
    }

    let masked_arg = entity_args.pop().expect("non-empty by check above");
    out.push(ActionEvaluation {
        verb: node.verb.clone(),
        variant: entity_args.len() + 1,
        seen_args: entity_args,
        masked_arg,
    });

    for arg in &node.args {
        if let ArgPayload::Action(child) = &arg.payload {
            compile_node(child, true, out)?;
        }
    }
    Ok(())
}

/// All distinct (preposition, phrase) pairs appearing in a layout, seen and
/// masked alike.
pub fn entity_phrases(layout: &ModuleLayout) -> BTreeSet<(Option<String>, String)> {
    let mut set = BTreeSet::new();
    for eval in &layout.evaluations {
        for pair in eval.seen_args.iter().chain(std::iter::once(&eval.masked_arg)) {
            set.insert(pair.clone());
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::QueryParser;

    fn parse(query: &str) -> SemanticParse {
        QueryParser::default().parse(query).unwrap()
    }

    #[test]
    fn appendix_style_nested_query_splits_into_two_evaluations() {
        let layout = compile(&parse("construct point record by reading points from stream")).unwrap();
        assert_eq!(layout.evaluations.len(), 2);

        let construct = &layout.evaluations[0];
        assert_eq!(construct.verb, "construct");
        assert!(construct.seen_args.is_empty());
        assert_eq!(construct.masked_arg, (None, "point record".to_string()));
        assert_eq!(construct.variant, 1);
        assert_eq!(construct.to_notation(), "ACTION(Construct, (None, point record))");

        let read = &layout.evaluations[1];
        assert_eq!(read.verb, "read");
        assert_eq!(read.seen_args, vec![(Some("from".to_string()), "stream".to_string())]);
        assert_eq!(read.masked_arg, (None, "points".to_string()));
        assert_eq!(read.variant, 2);
        assert_eq!(read.to_notation(), "ACTION(Read, (FROM, stream), (None, points))");
    }

    #[test]
    fn flat_query_masks_last_argument() {
        let layout = compile(&parse("load all tables from dataset")).unwrap();
        assert_eq!(layout.evaluations.len(), 1);
        let eval = &layout.evaluations[0];
        assert_eq!(eval.seen_args, vec![(None, "all tables".to_string())]);
        assert_eq!(eval.masked_arg, (Some("from".to_string()), "dataset".to_string()));
        assert_eq!(eval.variant, 2);
    }

    #[test]
    fn single_argument_action_is_variant_one() {
        let layout = compile(&parse("navigate folders")).unwrap();
        assert_eq!(layout.evaluations.len(), 1);
        let eval = &layout.evaluations[0];
        assert!(eval.seen_args.is_empty());
        assert_eq!(eval.masked_arg, (None, "folders".to_string()));
        assert_eq!(eval.variant, 1);
    }

    #[test]
    fn extra_arguments_are_dropped_at_three() {
        let layout = compile(&parse("merge rows with columns by keys into table of values")).unwrap();
        let eval = &layout.evaluations[0];
        assert_eq!(eval.variant, 3);
        assert_eq!(eval.seen_args.len(), 2);
        assert_eq!(
            eval.masked_arg,
            (Some("by".to_string()), "keys".to_string()),
            "cap keeps the first three arguments in order"
        );
    }

    #[test]
    fn zero_entity_args_is_an_error() {
        use crate::parser::{ActionNode, Arg, ArgPayload};
        let node = ActionNode {
            verb: "sort".into(),
            args: vec![Arg {
                preposition: Some("by".into()),
                payload: ArgPayload::Action(ActionNode {
                    verb: "compare".into(),
                    args: vec![Arg { preposition: None, payload: ArgPayload::Entity("values".into()) }],
                }),
            }],
        };
        let err = compile(&SemanticParse { root: node }).unwrap_err();
        assert_eq!(err, LayoutError::NoEntityArg { verb: "sort".into() });
    }

    #[test]
    fn evaluation_count_equals_verb_count() {
        for (query, verbs) in [
            ("load file", 1),
            ("construct point record by reading points from stream", 2),
            ("construct record by reading points to create index from file", 3),
        ] {
            let layout = compile(&parse(query)).unwrap();
            assert_eq!(layout.evaluations.len(), verbs, "query: {query}");
        }
    }

    #[test]
    fn entity_phrase_sets() {
        let fig2 = compile(&parse("load all tables from dataset")).unwrap();
        let phrases = entity_phrases(&fig2);
        assert_eq!(
            phrases.into_iter().collect::<Vec<_>>(),
            vec![
                (None, "all tables".to_string()),
                (Some("from".to_string()), "dataset".to_string()),
            ]
        );

        let nested = compile(&parse("construct point record by reading points from stream")).unwrap();
        let phrases = entity_phrases(&nested);
        assert_eq!(phrases.len(), 3);

        let shared = compile(&parse("copy file by reading file")).unwrap();
        let phrases = entity_phrases(&shared);
        assert_eq!(phrases.len(), 1, "identical (prep, phrase) pairs deduplicate");
    }

    #[test]
    fn compile_is_deterministic() {
        let p = parse("construct point record by reading points from stream");
        assert_eq!(compile(&p).unwrap(), compile(&p).unwrap());
    }
}
