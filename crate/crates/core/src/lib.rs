//! Federated averaging with two-level importance sampling without
//! replacement.
//!
//! A server repeatedly selects a subset of agents; each selected agent runs
//! local epochs of mini-batch SGD on its own data and the server averages the
//! returned models. Both selections — agents at the server, samples inside
//! each agent — can run under non-uniform inclusion probabilities with
//! importance-weighted gradients, which keeps the round estimator unbiased
//! and lowers its variance on heterogeneous data.
//!
//! Module map:
//! - [`sampling`]: inclusion-probability vectors, feasibility capping,
//!   systematic (progressive-totals) draws, and exact small-instance oracles.
//! - [`objectives`]: ridge-regression and logistic losses with analytic
//!   gradients, local risks, and the closed-form regression optimum.
//! - [`probability`]: optimal inclusion probabilities and their round-by-round
//!   approximation from participant reports.
//! - [`federation`]: the round engine for the baseline and both
//!   importance-sampling variants, plus the gradient-noise diagnostic.
//! - [`experiments`]: synthetic benchmarks, metrics, the multi-run driver,
//!   and CSV/metadata persistence.
//! - [`seeding`]: deterministic stream derivation from one master seed.

pub mod experiments;
pub mod federation;
pub mod objectives;
pub mod probability;
pub mod sampling;
pub mod seeding;

pub use experiments::{
    msd, test_error, ClassificationScenario, ExperimentError, MetricTable, RegressionScenario,
};
pub use federation::{
    AgentSpec, FederationConfig, FederationError, ProbabilityStates, RoundOptions, RoundTrace,
    Variant,
};
pub use objectives::{
    ClassificationSample, LogisticLoss, Model, Objective, ObjectiveError, RegressionSample,
    RidgeRegressionLoss,
};
pub use probability::{AgentProbabilityState, DataProbabilityState, ProbabilityError};
pub use sampling::{ProbabilityVector, SampleDraw, SamplingError};
