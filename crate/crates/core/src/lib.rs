//! Budgeted black-box search for failure modes of decision models.
//!
//! A failure mode is a valid composition of interpretable scene concepts on
//! which a target model consistently answers incorrectly. The crate provides
//! the concept grammar ([`catalog`]), anchor scene-graph construction
//! ([`scene`]), rule-based ground-truth oracles ([`oracle`]), a budgeted
//! evaluation layer with synthetic / replay / subprocess targets
//! ([`evaluator`]), Gaussian-process regression over binary set encodings
//! ([`gp`]), the search strategies themselves ([`search`]), result analysis
//! ([`metrics`]), and experiment orchestration ([`runner`]).

pub mod catalog;
pub mod evaluator;
pub mod gp;
pub mod metrics;
pub mod oracle;
pub mod runner;
pub mod scene;
pub mod search;
pub mod seeds;

pub use catalog::{Catalog, CatalogError, ConceptDef, ConceptKind, ConceptSet, ValidityVerdict};
pub use evaluator::{
    BudgetLedger, EvalContext, EvalError, EvalRecord, SyntheticScenario, TargetModel,
};
pub use gp::{GpError, GpModel, KernelSpec};
pub use metrics::{ConceptProfile, LiftEntry, RunSummary};
pub use oracle::{ExpectedAnswer, OracleError, OracleRules};
pub use runner::{RunConfig, RunError, TargetSpec};
pub use scene::{Composition, SceneError, SceneGraph};
pub use search::{Algorithm, SearchConfig, SearchError, SearchResult};
