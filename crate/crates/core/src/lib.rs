//! Compositional semantic code search over small corpora of query/code pairs.
//!
//! The pipeline: natural-language queries are parsed into an action/entity
//! tree ([`parser`]), compiled into a flat list of module evaluations
//! ([`layout`]), and scored against candidate snippets by small neural
//! modules ([`model`]) whose per-token predictions are combined into a match
//! probability ([`scorer`]). Training runs in three phases driven by weak
//! supervision ([`labels`], [`trainer`]), and retrieval quality is measured
//! with a distractor-based harness ([`eval`]).

pub mod corpus;
pub mod eval;
pub mod labels;
pub mod layout;
pub mod model;
pub mod parser;
pub mod scorer;
pub mod trainer;

pub use corpus::{CodeSnippet, CodeToken, Corpus, QueryRecord, TokenKind};
pub use layout::{ActionEvaluation, ModuleLayout};
pub use model::ModelParams;
pub use parser::{ActionNode, Arg, ArgPayload, ParseFailure, QueryParser, SemanticParse};
pub use scorer::{RankedList, SimilarityConfig, SimilarityMetric};
