//! Per-sample convex losses with analytic gradients, local risks, and the
//! closed-form global optimum of the ridge-regression experiment.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Model parameter vector, shared by every loss and by the federation engine.
pub type Model = DVector<f64>;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("dimension mismatch: model has {model} entries, features have {features}")]
    DimensionMismatch { model: usize, features: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("got {datasets} datasets but {noises} noise records")]
    MismatchedNoise { datasets: usize, noises: usize },
    #[error("normal matrix is singular; cannot solve for the global optimum")]
    SingularSystem,
}

/// One least-squares observation: feature row `u` and scalar target `d`.
#[derive(Debug, Clone)]
pub struct RegressionSample {
    pub features: DVector<f64>,
    pub target: f64,
}

impl RegressionSample {
    pub fn new(features: DVector<f64>, target: f64) -> Self {
        debug_assert!(features.iter().all(|v| v.is_finite()));
        debug_assert!(target.is_finite());
        Self { features, target }
    }
}

/// One classification observation: feature vector `h` and label in {-1, +1}.
#[derive(Debug, Clone)]
pub struct ClassificationSample {
    pub features: DVector<f64>,
    pub label: f64,
}

impl ClassificationSample {
    pub fn new(features: DVector<f64>, label: f64) -> Self {
        assert!(
            label == 1.0 || label == -1.0,
            "label must be -1 or +1, got {label}"
        );
        debug_assert!(features.iter().all(|v| v.is_finite()));
        Self { features, label }
    }
}

/// Per-sample loss contract: value and gradient of `Q(w; x)`.
///
/// `grad_into` overwrites `out`; callers accumulate with `axpy` so the hot
/// loops of the federation engine allocate nothing per sample.
pub trait Objective {
    type Sample;

    fn loss(&self, model: &Model, sample: &Self::Sample) -> f64;

    fn grad_into(&self, model: &Model, sample: &Self::Sample, out: &mut Model);

    fn grad(&self, model: &Model, sample: &Self::Sample) -> Model {
        let mut out = Model::zeros(model.len());
        self.grad_into(model, sample, &mut out);
        out
    }
}

/// Squared-error loss with the ridge term folded into every sample:
/// `Q(w; (u, d)) = (d - u.w)^2 + ridge * |w|^2`, so the local risk
/// (the sample mean of `Q`) keeps its closed form.
#[derive(Debug, Clone, Copy)]
pub struct RidgeRegressionLoss {
    pub ridge: f64,
}

impl RidgeRegressionLoss {
    pub fn new(ridge: f64) -> Self {
        assert!(ridge >= 0.0 && ridge.is_finite());
        Self { ridge }
    }

    /// Checked analytic gradient: `-2 (d - u.w) u + 2 ridge w`.
    pub fn sample_grad(
        &self,
        model: &Model,
        sample: &RegressionSample,
    ) -> Result<Model, ObjectiveError> {
        check_dims(model, &sample.features)?;
        Ok(self.grad(model, sample))
    }
}

impl Objective for RidgeRegressionLoss {
    type Sample = RegressionSample;

    fn loss(&self, model: &Model, sample: &Self::Sample) -> f64 {
        let residual = sample.target - sample.features.dot(model);
        residual * residual + self.ridge * model.norm_squared()
    }

    fn grad_into(&self, model: &Model, sample: &Self::Sample, out: &mut Model) {
        let residual = sample.target - sample.features.dot(model);
        out.copy_from(&sample.features);
        *out *= -2.0 * residual;
        out.axpy(2.0 * self.ridge, model, 1.0);
    }
}

/// Logistic loss `Q(w; (h, y)) = ln(1 + exp(-y h.w))`, evaluated through
/// softplus/log1p identities so large scores do not overflow.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogisticLoss;

impl LogisticLoss {
    /// Checked analytic gradient: `-y h sigmoid(-y h.w)`.
    pub fn sample_grad(
        &self,
        model: &Model,
        sample: &ClassificationSample,
    ) -> Result<Model, ObjectiveError> {
        check_dims(model, &sample.features)?;
        Ok(self.grad(model, sample))
    }
}

impl Objective for LogisticLoss {
    type Sample = ClassificationSample;

    fn loss(&self, model: &Model, sample: &Self::Sample) -> f64 {
        let margin = sample.label * sample.features.dot(model);
        softplus(-margin)
    }

    fn grad_into(&self, model: &Model, sample: &Self::Sample, out: &mut Model) {
        let margin = sample.label * sample.features.dot(model);
        let slope = -sample.label * sigmoid(-margin);
        out.copy_from(&sample.features);
        *out *= slope;
    }
}

/// `ln(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `1 / (1 + exp(-x))` without overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_dims(model: &Model, features: &DVector<f64>) -> Result<(), ObjectiveError> {
    if model.len() != features.len() {
        return Err(ObjectiveError::DimensionMismatch {
            model: model.len(),
            features: features.len(),
        });
    }
    Ok(())
}

/// Mean loss over a full local dataset.
pub fn local_risk<O: Objective>(
    objective: &O,
    model: &Model,
    dataset: &[O::Sample],
) -> Result<f64, ObjectiveError> {
    if dataset.is_empty() {
        return Err(ObjectiveError::EmptyDataset);
    }
    let sum: f64 = dataset.iter().map(|s| objective.loss(model, s)).sum();
    Ok(sum / dataset.len() as f64)
}

/// Mean gradient over a full local dataset.
pub fn local_risk_grad<O: Objective>(
    objective: &O,
    model: &Model,
    dataset: &[O::Sample],
) -> Result<Model, ObjectiveError> {
    if dataset.is_empty() {
        return Err(ObjectiveError::EmptyDataset);
    }
    let mut acc = Model::zeros(model.len());
    let mut tmp = Model::zeros(model.len());
    for sample in dataset {
        objective.grad_into(model, sample, &mut tmp);
        acc += &tmp;
    }
    acc /= dataset.len() as f64;
    Ok(acc)
}

/// Closed-form minimizer of the global ridge-regression risk.
///
/// With `R = mean_k mean_n u u^T` and `r = mean_k mean_n v u`, the optimum is
/// `(R + ridge I)^{-1} (R w_star + r)`; the recorded noise realizations enter
/// through `r`. Solved by Cholesky with an LU fallback.
pub fn closed_form_wo(
    datasets: &[Vec<RegressionSample>],
    w_star: &Model,
    noises: &[Vec<f64>],
    ridge: f64,
) -> Result<Model, ObjectiveError> {
    if datasets.is_empty() || datasets.iter().any(|d| d.is_empty()) {
        return Err(ObjectiveError::EmptyDataset);
    }
    if datasets.len() != noises.len()
        || datasets.iter().zip(noises).any(|(d, v)| d.len() != v.len())
    {
        return Err(ObjectiveError::MismatchedNoise {
            datasets: datasets.len(),
            noises: noises.len(),
        });
    }
    let dim = w_star.len();
    let agents = datasets.len() as f64;

    let mut feature_moment = DMatrix::<f64>::zeros(dim, dim);
    let mut noise_moment = Model::zeros(dim);
    for (dataset, noise) in datasets.iter().zip(noises) {
        let weight = 1.0 / (agents * dataset.len() as f64);
        for (sample, &v) in dataset.iter().zip(noise) {
            check_dims(w_star, &sample.features)?;
            feature_moment.ger(weight, &sample.features, &sample.features, 1.0);
            noise_moment.axpy(weight * v, &sample.features, 1.0);
        }
    }

    let mut system = feature_moment.clone();
    for j in 0..dim {
        system[(j, j)] += ridge;
    }
    let rhs = &feature_moment * w_star + noise_moment;

    if let Some(chol) = system.clone().cholesky() {
        return Ok(chol.solve(&rhs));
    }
    system
        .lu()
        .solve(&rhs)
        .ok_or(ObjectiveError::SingularSystem)
}
