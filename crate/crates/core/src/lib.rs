//! Constrained integer evolutionary search for automatic channel pruning.
//!
//! A network is described declaratively ([`arch`]); its prunable widths form
//! a structure vector searched over a step-compressed space ([`space`]) by
//! differential evolution with stagnation reinitialization ([`ide`]). Fitness
//! comes from pluggable evaluators ([`fitness`]), including a client for
//! remote accuracy estimators speaking a line-delimited JSON protocol.

pub mod arch;
pub mod benchmark;
pub mod cli;
pub mod error;
pub mod fitness;
pub mod history;
pub mod ide;
pub mod space;

pub use arch::{ArchitectureSpec, CostReport, LayerSpec, SparsityTargets};
pub use error::{Error, EvalError, Result};
pub use fitness::{
    Cached, Evaluator, EvaluatorDescriptor, FitnessValue, SphereEvaluator, SurrogateEvaluator,
};
pub use ide::{IdeConfig, Individual, Mode, Population, SearchHistory, SearchOutcome};
pub use space::{CompressedSpace, IntegerBox, StepVector, StructureVector};
