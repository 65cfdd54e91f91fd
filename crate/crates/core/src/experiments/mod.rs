//! Synthetic benchmark scenarios, metric computation, multi-run averaging,
//! and persistence of results.

mod data;
mod runner;

pub use data::{
    gen_classification, gen_regression, logistic_global_optimum, ClassificationInstance,
    RegressionInstance,
};
pub use runner::{
    csv_file_name, read_metric_csv, run_classification_experiment, run_regression_experiment,
    write_metadata, write_metric_csv, MetricTable,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::federation::FederationError;
use crate::objectives::{ClassificationSample, Model, ObjectiveError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("malformed results file: {0}")]
    MalformedCsv(String),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ridge-regression benchmark: heterogeneous agents, a closed-form global
/// optimum, and the squared model deviation as the metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionScenario {
    /// Number of agents `K`.
    pub agents: usize,
    /// Samples per agent `N_k` (identical across agents here).
    pub samples_per_agent: usize,
    /// Feature dimension `M`.
    pub dim: usize,
    /// Variance of the additive observation noise.
    pub noise_var: f64,
    /// Ridge coefficient folded into every per-sample loss.
    pub ridge: f64,
    /// Agents selected per round `L`.
    pub participants: usize,
    /// Inclusive range the per-agent epoch counts are drawn from.
    pub epochs_range: (usize, usize),
    /// Inclusive range the per-agent batch sizes are drawn from.
    pub batch_range: (usize, usize),
    /// Step size `mu`.
    pub step_size: f64,
    /// Independent runs averaged in the result table.
    pub runs: usize,
    /// Rounds per run `T`.
    pub iterations: usize,
    /// Draw every agent's features around a per-agent mean (non-IID) or from
    /// the same standard normal (IID ablation).
    pub iid_features: bool,
    /// Master seed; every stream in every run derives from it.
    pub seed: u64,
}

impl Default for RegressionScenario {
    fn default() -> Self {
        Self {
            agents: 300,
            samples_per_agent: 100,
            dim: 10,
            noise_var: 0.01,
            ridge: 0.001,
            participants: 6,
            epochs_range: (1, 5),
            batch_range: (1, 10),
            step_size: 0.01,
            runs: 100,
            iterations: 1000,
            iid_features: false,
            seed: 0,
        }
    }
}

impl RegressionScenario {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |msg: String| Err(ExperimentError::InvalidScenario(msg));
        if self.agents == 0 || self.samples_per_agent == 0 || self.dim == 0 {
            return fail("agents, samples-per-agent and dim must be positive".into());
        }
        if self.participants == 0 || self.participants > self.agents {
            return fail(format!(
                "participants must satisfy 1 <= L <= K (got L = {}, K = {})",
                self.participants, self.agents
            ));
        }
        validate_count_range("epochs", self.epochs_range)?;
        validate_count_range("batch", self.batch_range)?;
        if self.batch_range.1 > self.samples_per_agent {
            return fail(format!(
                "largest batch {} exceeds samples per agent {}",
                self.batch_range.1, self.samples_per_agent
            ));
        }
        if !self.step_size.is_finite() || self.step_size < 0.0 {
            return fail(format!(
                "step size must be non-negative, got {}",
                self.step_size
            ));
        }
        if !self.noise_var.is_finite() || self.noise_var < 0.0 {
            return fail(format!(
                "noise variance must be non-negative, got {}",
                self.noise_var
            ));
        }
        if !self.ridge.is_finite() || self.ridge < 0.0 {
            return fail(format!("ridge must be non-negative, got {}", self.ridge));
        }
        if self.runs == 0 {
            return fail("at least one run is required".into());
        }
        Ok(())
    }
}

/// Logistic-classification benchmark: per-agent feature distributions and
/// generating models that drift around a shared one; metric is the percent
/// error on a held-out test set drawn from the agent mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassificationScenario {
    pub agents: usize,
    /// Inclusive range the per-agent dataset sizes `N_k` are drawn from.
    pub samples_range: (usize, usize),
    pub dim: usize,
    /// Scale of the per-agent feature means (0 centers every agent).
    pub mean_scale: f64,
    /// Range the per-agent feature standard deviations are drawn from.
    pub sigma_range: (f64, f64),
    /// Per-agent generating models sit on a sphere of radius
    /// `drift * |w_star|` around the shared model.
    pub drift: f64,
    /// Held-out test samples drawn from the agent mixture.
    pub test_samples: usize,
    pub participants: usize,
    pub epochs_range: (usize, usize),
    pub batch_range: (usize, usize),
    pub step_size: f64,
    pub runs: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for ClassificationScenario {
    fn default() -> Self {
        Self {
            agents: 100,
            samples_range: (20, 100),
            dim: 2,
            mean_scale: 1.0,
            sigma_range: (0.5, 1.5),
            drift: 0.2,
            test_samples: 100,
            participants: 6,
            epochs_range: (1, 5),
            batch_range: (1, 10),
            step_size: 0.3,
            runs: 20,
            iterations: 500,
            seed: 0,
        }
    }
}

impl ClassificationScenario {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |msg: String| Err(ExperimentError::InvalidScenario(msg));
        if self.agents == 0 || self.dim == 0 || self.test_samples == 0 {
            return fail("agents, dim and test-samples must be positive".into());
        }
        if self.participants == 0 || self.participants > self.agents {
            return fail(format!(
                "participants must satisfy 1 <= L <= K (got L = {}, K = {})",
                self.participants, self.agents
            ));
        }
        validate_count_range("samples", self.samples_range)?;
        validate_count_range("epochs", self.epochs_range)?;
        validate_count_range("batch", self.batch_range)?;
        if self.batch_range.1 > self.samples_range.0 {
            return fail(format!(
                "largest batch {} exceeds the smallest dataset {}",
                self.batch_range.1, self.samples_range.0
            ));
        }
        if !(self.sigma_range.0 > 0.0 && self.sigma_range.1 >= self.sigma_range.0) {
            return fail(format!("invalid sigma range {:?}", self.sigma_range));
        }
        if !self.mean_scale.is_finite() || self.mean_scale < 0.0 {
            return fail(format!(
                "mean scale must be non-negative, got {}",
                self.mean_scale
            ));
        }
        if !self.drift.is_finite() || self.drift < 0.0 {
            return fail(format!("drift must be non-negative, got {}", self.drift));
        }
        if !self.step_size.is_finite() || self.step_size < 0.0 {
            return fail(format!(
                "step size must be non-negative, got {}",
                self.step_size
            ));
        }
        if self.runs == 0 {
            return fail("at least one run is required".into());
        }
        Ok(())
    }
}

fn validate_count_range(name: &str, range: (usize, usize)) -> Result<(), ExperimentError> {
    if range.0 == 0 || range.1 < range.0 {
        return Err(ExperimentError::InvalidScenario(format!(
            "{name} range {range:?} must satisfy 1 <= lo <= hi"
        )));
    }
    Ok(())
}

/// Squared model deviation `|w - w_o|^2`.
pub fn msd(model: &Model, optimum: &Model) -> Result<f64, ExperimentError> {
    if model.len() != optimum.len() {
        return Err(ExperimentError::DimensionMismatch {
            left: model.len(),
            right: optimum.len(),
        });
    }
    Ok((model - optimum).norm_squared())
}

/// Percent of test samples whose predicted sign disagrees with the label.
///
/// A score of exactly zero predicts the negative class, so the error of the
/// zero model equals the positive-label frequency.
pub fn test_error(
    model: &Model,
    test_set: &[ClassificationSample],
) -> Result<f64, ExperimentError> {
    if test_set.is_empty() {
        return Err(ExperimentError::EmptyTestSet);
    }
    let mut wrong = 0usize;
    for sample in test_set {
        if model.len() != sample.features.len() {
            return Err(ExperimentError::DimensionMismatch {
                left: model.len(),
                right: sample.features.len(),
            });
        }
        let predicted = if sample.features.dot(model) > 0.0 {
            1.0
        } else {
            -1.0
        };
        if predicted != sample.label {
            wrong += 1;
        }
    }
    Ok(100.0 * wrong as f64 / test_set.len() as f64)
}
