//! Central finite-difference verification of the hand-rolled backward
//! passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{action_pretrain_loss, end_to_end_loss, entity_loss};
use super::{ModelError, ModelParams};
use crate::corpus::CodeSnippet;
use crate::layout::{ActionEvaluation, ModuleLayout};
use crate::scorer::SimilarityConfig;

/// One sampled training example to check gradients on.
#[derive(Debug, Clone)]
pub enum GradCheckCase {
    Entity { phrase: String, snippet: CodeSnippet, targets: Vec<f64> },
    /// Targets come from the frozen entity module, so only the variant's
    /// own parameters are inspected (the shared ones are frozen in this
    /// phase).
    ActionPretrain { eval: ActionEvaluation, snippet: CodeSnippet },
    EndToEnd { layout: ModuleLayout, snippet: CodeSnippet, label: f64 },
}

/// Compare analytic gradients with central finite differences over a
/// random subsample of at least `num_samples` parameters. Returns the
/// maximum relative error, where the error is normalized by
/// `max(|analytic|, |numeric|, 1e-2)` so near-zero gradients are compared
/// absolutely.
pub fn gradient_check(
    case: &GradCheckCase,
    params: &ModelParams,
    epsilon: f64,
    num_samples: usize,
    seed: u64,
) -> Result<f64, ModelError> {
    assert!(
        (1e-6..=1e-3).contains(&epsilon),
        "epsilon must lie in [1e-6, 1e-3], got {epsilon}"
    );

    let cfg = SimilarityConfig::default();
    let loss_of = |p: &ModelParams| -> Result<f64, ModelError> {
        match case {
            GradCheckCase::Entity { phrase, snippet, targets } => {
                Ok(entity_loss(phrase, snippet, targets, p)?.0)
            }
            GradCheckCase::ActionPretrain { eval, snippet } => {
                Ok(action_pretrain_loss(eval, snippet, p)?.0)
            }
            GradCheckCase::EndToEnd { layout, snippet, label } => {
                Ok(end_to_end_loss(layout, snippet, *label, p, &cfg)?.loss)
            }
        }
    };

    let (loss, grads) = match case {
        GradCheckCase::Entity { phrase, snippet, targets } => {
            entity_loss(phrase, snippet, targets, params)?
        }
        GradCheckCase::ActionPretrain { eval, snippet } => {
            action_pretrain_loss(eval, snippet, params)?
        }
        GradCheckCase::EndToEnd { layout, snippet, label } => {
            let out = end_to_end_loss(layout, snippet, *label, params, &cfg)?;
            (out.loss, out.grads)
        }
    };
    if !loss.is_finite() {
        return Err(ModelError::NonFiniteGradient("loss".into()));
    }

    // flat offsets of the parameter slices this case may inspect
    let mut allowed: Vec<(usize, usize)> = Vec::new(); // (start, len)
    {
        let filter: Box<dyn Fn(&str) -> bool> = match case {
            GradCheckCase::ActionPretrain { eval, .. } => {
                let prefix = format!("v{}.", eval.variant);
                Box::new(move |name: &str| name.starts_with(&prefix))
            }
            _ => Box::new(|_| true),
        };
        let mut offset = 0;
        params.set.for_each_slice(&mut |name, s| {
            if filter(name) {
                allowed.push((offset, s.len()));
            }
            offset += s.len();
        });
    }
    let allowed_total: usize = allowed.iter().map(|(_, l)| l).sum();
    assert!(allowed_total > 0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut max_rel: f64 = 0.0;

    for _ in 0..num_samples {
        let mut pick = rng.gen_range(0..allowed_total);
        let mut index = 0;
        for &(start, len) in &allowed {
            if pick < len {
                index = start + pick;
                break;
            }
            pick -= len;
        }

        let (_, original) = params.set.get_flat(index);
        work.set.set_flat(index, original + epsilon);
        let plus = loss_of(&work)?;
        work.set.set_flat(index, original - epsilon);
        let minus = loss_of(&work)?;
        work.set.set_flat(index, original);

        let numeric = (plus - minus) / (2.0 * epsilon);
        let (_, analytic) = grads_flat(&grads, index);
        if !numeric.is_finite() || !analytic.is_finite() {
            return Err(ModelError::NonFiniteGradient(format!("parameter {index}")));
        }
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

fn grads_flat(grads: &super::ModelGrads, index: usize) -> (&'static str, f64) {
    grads.get_flat(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_synthetic_corpus;
    use crate::labels;
    use crate::layout;
    use crate::model::{HyperParams, Vocab};
    use crate::parser::QueryParser;

    fn setup(seed: u64) -> (crate::corpus::Corpus, ModelParams, QueryParser) {
        let corpus = generate_synthetic_corpus(seed, 6).unwrap();
        let parser = QueryParser::default();
        let vocab = Vocab::build(&corpus, &parser);
        let params = ModelParams::init(HyperParams { d: 8, h: 6, n_max: 64 }, vocab, seed);
        (corpus, params, parser)
    }

    fn entity_case(corpus: &crate::corpus::Corpus) -> GradCheckCase {
        let query = &corpus.queries()[0];
        let snippet = corpus.paired_snippet(query).clone();
        let labels = labels::phrase_labels("file", &snippet);
        GradCheckCase::Entity {
            phrase: "file".into(),
            targets: labels.labels.iter().map(|&l| l as f64).collect(),
            snippet,
        }
    }

    #[test]
    fn entity_gradients_match_finite_differences() {
        let (corpus, params, _) = setup(0);
        let err = gradient_check(&entity_case(&corpus), &params, 1e-5, 200, 0).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn action_pretrain_gradients_match_finite_differences() {
        let (corpus, params, parser) = setup(1);
        let query = corpus
            .queries()
            .iter()
            .find(|q| parser.parse_raw(&q.raw_text).is_ok())
            .unwrap();
        let parse = parser.parse_raw(&query.raw_text).unwrap();
        let l = layout::compile(&parse).unwrap();
        let case = GradCheckCase::ActionPretrain {
            eval: l.evaluations[0].clone(),
            snippet: corpus.paired_snippet(query).clone(),
        };
        let err = gradient_check(&case, &params, 1e-5, 200, 1).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let (corpus, params, parser) = setup(2);
        let query = &corpus.queries()[0];
        let parse = parser.parse_raw(&query.raw_text).unwrap();
        let case = GradCheckCase::EndToEnd {
            layout: layout::compile(&parse).unwrap(),
            snippet: corpus.paired_snippet(query).clone(),
            label: 1.0,
        };
        let err = gradient_check(&case, &params, 1e-5, 200, 2).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn loss_constant_in_a_parameter_has_zero_gradient() {
        // the entity loss never touches action-variant parameters
        let (corpus, params, _) = setup(3);
        let case = entity_case(&corpus);
        let GradCheckCase::Entity { phrase, snippet, targets } = &case else { unreachable!() };
        let (_, grads) = crate::model::graph::entity_loss(phrase, snippet, targets, &params).unwrap();
        grads.for_each_slice(&mut |name, s| {
            if name.starts_with('v') {
                assert!(s.iter().all(|&g| g == 0.0), "{name} should be untouched");
            }
        });
    }

    #[test]
    fn variant_isolation() {
        // an example of variant v leaves other variants' gradients at zero
        let (corpus, params, parser) = setup(4);
        let query = corpus
            .queries()
            .iter()
            .find(|q| {
                parser
                    .parse_raw(&q.raw_text)
                    .ok()
                    .and_then(|p| layout::compile(&p).ok())
                    .is_some_and(|l| l.evaluations[0].variant == 2)
            })
            .expect("a two-argument query exists");
        let parse = parser.parse_raw(&query.raw_text).unwrap();
        let l = layout::compile(&parse).unwrap();
        let case = GradCheckCase::EndToEnd {
            layout: ModuleLayout { evaluations: vec![l.evaluations[0].clone()] },
            snippet: corpus.paired_snippet(query).clone(),
            label: 1.0,
        };
        let GradCheckCase::EndToEnd { layout, snippet, label } = &case else { unreachable!() };
        let out = crate::model::graph::end_to_end_loss(
            layout,
            snippet,
            *label,
            &params,
            &SimilarityConfig::default(),
        )
        .unwrap();
        out.grads.for_each_slice(&mut |name, s| {
            if name.starts_with("v1.") || name.starts_with("v3.") {
                assert!(s.iter().all(|&g| g == 0.0), "{name} should be isolated");
            }
        });
    }
}
