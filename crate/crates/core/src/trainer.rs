//! The three training phases: entity pretraining on weak labels, action
//! pretraining against frozen entity outputs, and end-to-end fine-tuning
//! on matched/mismatched pair labels. Plain seeded SGD with batch size 1
//! keeps every run bit-reproducible.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::eval::{self, EvalConfig, EvalError, MetricsRecord, NeuralReranker};
use crate::labels;
use crate::layout::{self, ActionEvaluation, ModuleLayout};
use crate::model::graph::{action_pretrain_loss, end_to_end_loss, entity_loss};
use crate::model::{HyperParams, ModelError, ModelParams, Vocab};
use crate::parser::QueryParser;
use crate::scorer::{Bm25Index, SimilarityConfig, SimilarityMetric};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseToggles {
    pub entity_pretrain: bool,
    pub action_pretrain: bool,
    pub end_to_end: bool,
}

impl Default for PhaseToggles {
    fn default() -> Self {
        PhaseToggles { entity_pretrain: true, action_pretrain: true, end_to_end: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    /// Fixed SGD learning rate. The desk-scale network needs a larger rate
    /// than the fine-tuning ranges used with large pretrained encoders.
    pub learning_rate: f64,
    pub entity_epochs: usize,
    pub action_epochs: usize,
    pub end_to_end_epochs: usize,
    /// Mismatched examples per positive in the end-to-end phase.
    pub negative_ratio: f64,
    /// Early-stopping patience, in validation evaluations.
    pub patience: usize,
    pub phases: PhaseToggles,
    pub hp: HyperParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            learning_rate: 3e-4,
            entity_epochs: 10,
            action_epochs: 6,
            end_to_end_epochs: 10,
            negative_ratio: 1.0,
            patience: 3,
            phases: PhaseToggles::default(),
            hp: HyperParams::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged in {phase}: non-finite loss")]
    DivergenceDetected { phase: &'static str },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// One line of the training log, serialized as line-delimited JSON.
#[derive(Debug, Clone, Serialize)]
pub struct TrainLogEntry {
    pub phase: &'static str,
    pub epoch: usize,
    pub loss: f64,
    pub val_loss: Option<f64>,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<TrainLogEntry>,
}

fn validate(cfg: &TrainConfig) -> Result<(), TrainError> {
    if cfg.learning_rate <= 0.0 {
        return Err(TrainError::InvalidConfig("learning_rate must be > 0".into()));
    }
    if cfg.negative_ratio <= 0.0 {
        return Err(TrainError::InvalidConfig("negative_ratio must be > 0".into()));
    }
    Ok(())
}

/// Split indices into (train, validation) with a deterministic 10% holdout
/// (at least one element when there are two or more).
fn holdout_split(n: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    if n < 2 {
        return (indices, Vec::new());
    }
    let n_val = (n / 10).max(1);
    let val = indices.split_off(n - n_val);
    (indices, val)
}

/// Generic seeded epoch loop with early stopping on validation loss.
/// `step` runs one example and returns its loss; `val` evaluates the
/// holdout under the current parameters.
fn run_phase(
    phase: &'static str,
    params: &mut ModelParams,
    epochs: usize,
    patience: usize,
    train_ids: &mut Vec<usize>,
    rng: &mut ChaCha8Rng,
    log: &mut Vec<TrainLogEntry>,
    mut step: impl FnMut(&mut ModelParams, usize) -> Result<f64, TrainError>,
    mut val: impl FnMut(&ModelParams) -> Result<Option<f64>, TrainError>,
) -> Result<(), TrainError> {
    let mut best: Option<(f64, ModelParams)> = None;
    let mut bad_evals = 0usize;

    for epoch in 0..epochs {
        train_ids.shuffle(rng);
        let mut total = 0.0;
        for &i in train_ids.iter() {
            let loss = step(params, i)?;
            if !loss.is_finite() {
                return Err(TrainError::DivergenceDetected { phase });
            }
            total += loss;
        }
        let train_loss = total / train_ids.len().max(1) as f64;
        let val_loss = val(params)?;
        log.push(TrainLogEntry { phase, epoch, loss: train_loss, val_loss });
        log::info!("{phase} epoch {epoch}: loss {train_loss:.5} val {val_loss:?}");

        if let Some(v) = val_loss {
            if !v.is_finite() {
                return Err(TrainError::DivergenceDetected { phase });
            }
            match &best {
                Some((b, _)) if v >= *b => {
                    bad_evals += 1;
                    if bad_evals >= patience {
                        break;
                    }
                }
                _ => {
                    best = Some((v, params.clone()));
                    bad_evals = 0;
                }
            }
        }
    }
    if let Some((_, snapshot)) = best {
        *params = snapshot;
    }
    Ok(())
}

/// Entity pretraining: per-token BCE between entity scores and weak labels
/// over balanced matched/mismatched pairs. Updates the shared encoder,
/// embeddings and entity head only.
pub fn pretrain_entity(
    corpus: &Corpus,
    parser: &QueryParser,
    params: &mut ModelParams,
    cfg: &TrainConfig,
    log: &mut Vec<TrainLogEntry>,
) -> Result<(), TrainError> {
    validate(cfg)?;
    let examples = labels::build_pretraining_set(corpus, parser, cfg.seed);
    let targets: Vec<Vec<f64>> = examples
        .iter()
        .map(|e| e.labels.labels.iter().map(|&l| l as f64).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x1));
    let (mut train_ids, val_ids) = holdout_split(examples.len(), &mut rng);
    let lr = cfg.learning_rate;
    let is_entity_param =
        |name: &str| name == "embeddings" || name.starts_with("encoder.") || name.starts_with("entity_head.");

    run_phase(
        "entity_pretrain",
        params,
        cfg.entity_epochs,
        cfg.patience,
        &mut train_ids,
        &mut rng,
        log,
        |params, i| {
            let e = &examples[i];
            let snippet = corpus.snippet(&e.snippet_id).expect("snippet from corpus");
            let (loss, grads) = entity_loss(&e.phrase, snippet, &targets[i], params)?;
            params.set.sgd_step_filtered(&grads, lr, is_entity_param);
            Ok(loss)
        },
        |params| {
            if val_ids.is_empty() {
                return Ok(None);
            }
            let mut total = 0.0;
            for &i in &val_ids {
                let e = &examples[i];
                let snippet = corpus.snippet(&e.snippet_id).expect("snippet from corpus");
                total += entity_loss(&e.phrase, snippet, &targets[i], params)?.0;
            }
            Ok(Some(total / val_ids.len() as f64))
        },
    )
}

/// Action pretraining: regress each action evaluation onto the frozen
/// entity module's output for its masked argument. Only the action-variant
/// parameters move; everything shared stays bit-identical.
pub fn pretrain_action(
    corpus: &Corpus,
    parser: &QueryParser,
    params: &mut ModelParams,
    cfg: &TrainConfig,
    log: &mut Vec<TrainLogEntry>,
) -> Result<(), TrainError> {
    validate(cfg)?;
    let mut examples: Vec<(ActionEvaluation, String)> = Vec::new();
    for query in corpus.queries() {
        let Ok(parse) = parser.parse_raw(&query.raw_text) else { continue };
        let Ok(l) = layout::compile(&parse) else { continue };
        for eval in l.evaluations {
            examples.push((eval, query.paired_snippet_id.clone()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x2));
    let (mut train_ids, val_ids) = holdout_split(examples.len(), &mut rng);
    let lr = cfg.learning_rate;
    let is_variant_param = |name: &str| name.starts_with('v');

    run_phase(
        "action_pretrain",
        params,
        cfg.action_epochs,
        cfg.patience,
        &mut train_ids,
        &mut rng,
        log,
        |params, i| {
            let (eval, snippet_id) = &examples[i];
            let snippet = corpus.snippet(snippet_id).expect("snippet from corpus");
            let (loss, grads) = action_pretrain_loss(eval, snippet, params)?;
            params.set.sgd_step_filtered(&grads, lr, is_variant_param);
            Ok(loss)
        },
        |params| {
            if val_ids.is_empty() {
                return Ok(None);
            }
            let mut total = 0.0;
            for &i in &val_ids {
                let (eval, snippet_id) = &examples[i];
                let snippet = corpus.snippet(snippet_id).expect("snippet from corpus");
                total += action_pretrain_loss(eval, snippet, params)?.0;
            }
            Ok(Some(total / val_ids.len() as f64))
        },
    )
}

struct PairExample {
    layout: ModuleLayout,
    snippet_id: String,
    label: f64,
}

/// End-to-end fine-tuning: BCE on the model's match probability against
/// binary pair labels, with seeded random mismatches as negatives. Updates
/// all parameters.
pub fn train_end_to_end(
    corpus: &Corpus,
    parser: &QueryParser,
    params: &mut ModelParams,
    cfg: &TrainConfig,
    sim_cfg: &SimilarityConfig,
    log: &mut Vec<TrainLogEntry>,
) -> Result<(), TrainError> {
    validate(cfg)?;
    let snippet_ids: Vec<String> = corpus.snippet_ids().map(|s| s.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x3));

    let mut examples: Vec<PairExample> = Vec::new();
    for query in corpus.queries() {
        let Ok(parse) = parser.parse_raw(&query.raw_text) else { continue };
        let Ok(l) = layout::compile(&parse) else { continue };
        examples.push(PairExample {
            layout: l.clone(),
            snippet_id: query.paired_snippet_id.clone(),
            label: 1.0,
        });

        // negatives: seeded mismatches, never the query's own snippet
        let mut negatives = cfg.negative_ratio.floor() as usize;
        if rng.gen_bool(cfg.negative_ratio.fract().clamp(0.0, 1.0 - f64::EPSILON)) {
            negatives += 1;
        }
        for _ in 0..negatives {
            if snippet_ids.len() < 2 {
                break;
            }
            let other = loop {
                let candidate = &snippet_ids[rng.gen_range(0..snippet_ids.len())];
                if *candidate != query.paired_snippet_id {
                    break candidate.clone();
                }
            };
            examples.push(PairExample { layout: l.clone(), snippet_id: other, label: 0.0 });
        }
    }

    let (mut train_ids, val_ids) = holdout_split(examples.len(), &mut rng);
    let lr = cfg.learning_rate;
    let clamp_weights = sim_cfg.metric == SimilarityMetric::WeightedCosine;

    run_phase(
        "end_to_end",
        params,
        cfg.end_to_end_epochs,
        cfg.patience,
        &mut train_ids,
        &mut rng,
        log,
        |params, i| {
            let e = &examples[i];
            let snippet = corpus.snippet(&e.snippet_id).expect("snippet from corpus");
            let out = end_to_end_loss(&e.layout, snippet, e.label, params, sim_cfg)?;
            params.set.sgd_step(&out.grads, lr);
            if clamp_weights {
                for w in params.set.cosine_weights.iter_mut() {
                    *w = w.max(1e-6);
                }
            }
            Ok(out.loss)
        },
        |params| {
            if val_ids.is_empty() {
                return Ok(None);
            }
            let mut total = 0.0;
            for &i in &val_ids {
                let e = &examples[i];
                let snippet = corpus.snippet(&e.snippet_id).expect("snippet from corpus");
                total += end_to_end_loss(&e.layout, snippet, e.label, params, sim_cfg)?.loss;
            }
            Ok(Some(total / val_ids.len() as f64))
        },
    )
}

/// Run the enabled phases in order on a freshly initialized model.
pub fn train(
    corpus: &Corpus,
    parser: &QueryParser,
    cfg: &TrainConfig,
    sim_cfg: &SimilarityConfig,
) -> Result<TrainOutcome, TrainError> {
    validate(cfg)?;
    let vocab = Vocab::build(corpus, parser);
    let mut params = ModelParams::init(cfg.hp, vocab, cfg.seed);
    let mut log = Vec::new();

    if cfg.phases.entity_pretrain {
        pretrain_entity(corpus, parser, &mut params, cfg, &mut log)?;
    }
    if cfg.phases.action_pretrain {
        pretrain_action(corpus, parser, &mut params, cfg, &mut log)?;
    }
    if cfg.phases.end_to_end {
        train_end_to_end(corpus, parser, &mut params, cfg, sim_cfg, &mut log)?;
    }
    Ok(TrainOutcome { params, log })
}

/// Training-regime ablation arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationArm {
    Full,
    NoActionPretrain,
    NoBothPretrain,
    NoEndToEnd,
}

impl AblationArm {
    pub fn toggles(&self) -> PhaseToggles {
        match self {
            AblationArm::Full => PhaseToggles::default(),
            AblationArm::NoActionPretrain => {
                PhaseToggles { action_pretrain: false, ..Default::default() }
            }
            AblationArm::NoBothPretrain => PhaseToggles {
                entity_pretrain: false,
                action_pretrain: false,
                end_to_end: true,
            },
            AblationArm::NoEndToEnd => PhaseToggles {
                entity_pretrain: true,
                action_pretrain: true,
                end_to_end: false,
            },
        }
    }

    pub fn all() -> [AblationArm; 4] {
        [
            AblationArm::Full,
            AblationArm::NoActionPretrain,
            AblationArm::NoBothPretrain,
            AblationArm::NoEndToEnd,
        ]
    }
}

/// Metrics record shared by every arm.
#[derive(Debug, Clone, Serialize)]
pub struct AblationOutcome {
    pub arm: AblationArm,
    pub metrics: MetricsRecord,
}

/// Train one arm and evaluate it with the shared protocol.
pub fn run_ablation(
    arm: AblationArm,
    corpus: &Corpus,
    parser: &QueryParser,
    cfg: &TrainConfig,
    sim_cfg: &SimilarityConfig,
    eval_cfg: &EvalConfig,
) -> Result<AblationOutcome, TrainError> {
    let mut cfg = cfg.clone();
    cfg.phases = arm.toggles();
    let outcome = train(corpus, parser, &cfg, sim_cfg)?;

    let index = Bm25Index::build(corpus);
    let reranker = NeuralReranker { parser, params: &outcome.params, cfg: sim_cfg.clone() };
    let result = eval::evaluate(&index, Some(&reranker), corpus, parser, eval_cfg)?;
    Ok(AblationOutcome { arm, metrics: result.metrics })
}
