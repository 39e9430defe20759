//! Causal effect estimation on discrete Bayesian networks with latent
//! confounders: graph algorithms, factor arithmetic, exact inference,
//! do-calculus checks, front-door style estimators and refutation tests.

pub mod data;
pub mod dataset;
pub mod error;
pub mod estimation;
pub mod factors;
pub mod graph;
pub mod identification;
pub mod inference;
pub mod presets;
pub mod refutation;
pub mod scm;

pub use dataset::{DiscreteDataset, Provenance};
pub use error::{Error, Result};
pub use estimation::{expectation, probability_ratio, EffectEstimate, Estimator, FitOptions};
pub use factors::{estimate_cpt, DiscreteVariable, Factor, FactorDump, State};
pub use graph::{CausalGraph, NodeKind, Path, Relation, Step, SELECTION_NODE};
pub use refutation::{placebo_test, subsample_test, RefutationKind, RefutationReport};
pub use inference::{conditioning_sets, Cpt, FactorizedModel, ParentPolicy};
pub use identification::{
    check_rule1, check_rule2, check_rule3, check_selection_recoverability,
    find_backdoor_adjustment_sets, identification_report, verify_estimator_preconditions,
    ClaimResult, EstimatorRoles, GraphVariant, IdentificationReport, IndependenceClaim, Rule,
};
