//! Synthetic data generation for both benchmark problems.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ClassificationScenario, RegressionScenario};
use crate::objectives::{
    local_risk, local_risk_grad, sigmoid, ClassificationSample, LogisticLoss, Model,
    RegressionSample,
};

/// Generated regression problem: per-agent datasets, the generating model,
/// and the recorded noise realizations (the closed-form optimum needs them).
#[derive(Debug, Clone)]
pub struct RegressionInstance {
    pub agents: Vec<Vec<RegressionSample>>,
    pub noises: Vec<Vec<f64>>,
    pub w_star: Model,
}

/// Generated classification problem: per-agent datasets, the shared
/// generating model, the per-agent drifted models, and a held-out test set
/// drawn from the agent mixture. Features are continuous, so the test set is
/// disjoint from the training data almost surely.
#[derive(Debug, Clone)]
pub struct ClassificationInstance {
    pub agents: Vec<Vec<ClassificationSample>>,
    pub agent_models: Vec<Model>,
    pub test_set: Vec<ClassificationSample>,
    pub w_star: Model,
}

fn normal_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| StandardNormal.sample(rng))
}

/// Draws targets `d = u . w_star + v` with per-agent feature means when the
/// scenario is non-IID. Noise realizations are kept alongside the samples.
pub fn gen_regression<R: Rng + ?Sized>(
    scenario: &RegressionScenario,
    rng: &mut R,
) -> RegressionInstance {
    let dim = scenario.dim;
    let noise_std = scenario.noise_var.sqrt();
    let w_star = normal_vector(dim, rng);

    let mut agents = Vec::with_capacity(scenario.agents);
    let mut noises = Vec::with_capacity(scenario.agents);
    for _ in 0..scenario.agents {
        let mean = if scenario.iid_features {
            DVector::zeros(dim)
        } else {
            normal_vector(dim, rng)
        };
        let mut data = Vec::with_capacity(scenario.samples_per_agent);
        let mut noise = Vec::with_capacity(scenario.samples_per_agent);
        for _ in 0..scenario.samples_per_agent {
            let u = &mean + normal_vector(dim, rng);
            let v: f64 = StandardNormal.sample(rng);
            let v = noise_std * v;
            let d = u.dot(&w_star) + v;
            data.push(RegressionSample::new(u, d));
            noise.push(v);
        }
        agents.push(data);
        noises.push(noise);
    }
    RegressionInstance {
        agents,
        noises,
        w_star,
    }
}

/// Training labels are `sign(h . w_star_k)` where each agent's model sits on
/// a sphere of radius `drift * |w_star|` around the shared one; zero scores
/// are redrawn. Test samples pick a uniformly random agent and follow that
/// agent's feature law, but are labeled by the shared model: the test
/// measures how well the consensus direction was recovered, which the
/// drifting local models agree on up to the drift radius.
pub fn gen_classification<R: Rng + ?Sized>(
    scenario: &ClassificationScenario,
    rng: &mut R,
) -> ClassificationInstance {
    let dim = scenario.dim;
    let w_star = normal_vector(dim, rng);
    let radius = scenario.drift * w_star.norm();

    let agent_models: Vec<Model> = (0..scenario.agents)
        .map(|_| {
            if radius == 0.0 {
                w_star.clone()
            } else {
                let direction = normal_vector(dim, rng).normalize();
                &w_star + radius * direction
            }
        })
        .collect();

    let mut feature_means = Vec::with_capacity(scenario.agents);
    let mut feature_sigmas = Vec::with_capacity(scenario.agents);
    let mut agents = Vec::with_capacity(scenario.agents);
    for model in &agent_models {
        let mean = scenario.mean_scale * normal_vector(dim, rng);
        let sigma = rng.random_range(scenario.sigma_range.0..scenario.sigma_range.1);
        let count = rng.random_range(scenario.samples_range.0..=scenario.samples_range.1);
        let data = (0..count)
            .map(|_| labeled_sample(&mean, sigma, model, rng))
            .collect();
        feature_means.push(mean);
        feature_sigmas.push(sigma);
        agents.push(data);
    }

    let test_set = (0..scenario.test_samples)
        .map(|_| {
            let k = rng.random_range(0..scenario.agents);
            labeled_sample(&feature_means[k], feature_sigmas[k], &w_star, rng)
        })
        .collect();

    ClassificationInstance {
        agents,
        agent_models,
        test_set,
        w_star,
    }
}

fn labeled_sample<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    sigma: f64,
    model: &Model,
    rng: &mut R,
) -> ClassificationSample {
    loop {
        let h = mean + sigma * normal_vector(mean.len(), rng);
        let score = h.dot(model);
        if score != 0.0 {
            let label = if score > 0.0 { 1.0 } else { -1.0 };
            return ClassificationSample::new(h, label);
        }
    }
}

/// Numeric global optimum of the mean logistic risk, via damped Newton.
///
/// The logistic problem has no closed form; with drifting per-agent models
/// the pooled data is non-separable and the optimum is finite. A tiny ridge
/// keeps the Hessian invertible when scores saturate. On (near-)separable
/// data the iteration stops at `max_iters` and returns the last iterate.
pub fn logistic_global_optimum(
    agent_data: &[Vec<ClassificationSample>],
    max_iters: usize,
) -> Model {
    const HESSIAN_RIDGE: f64 = 1e-10;
    const GRAD_TOL: f64 = 1e-10;

    let dim = agent_data[0][0].features.len();
    let loss = LogisticLoss;
    let mut w = Model::zeros(dim);

    let global_risk = |w: &Model| -> f64 {
        let mut total = 0.0;
        for data in agent_data {
            total += local_risk(&loss, w, data).expect("datasets are non-empty");
        }
        total / agent_data.len() as f64
    };

    for _ in 0..max_iters {
        let mut grad = Model::zeros(dim);
        let mut hessian = DMatrix::<f64>::zeros(dim, dim);
        for data in agent_data {
            let agent_weight = 1.0 / (agent_data.len() as f64 * data.len() as f64);
            grad.axpy(
                1.0 / agent_data.len() as f64,
                &local_risk_grad(&loss, &w, data).expect("datasets are non-empty"),
                1.0,
            );
            for sample in data {
                let score = sample.features.dot(&w);
                let curvature = sigmoid(score) * sigmoid(-score);
                hessian.ger(
                    agent_weight * curvature,
                    &sample.features,
                    &sample.features,
                    1.0,
                );
            }
        }
        if grad.norm() <= GRAD_TOL {
            break;
        }
        for j in 0..dim {
            hessian[(j, j)] += HESSIAN_RIDGE;
        }
        let direction = match hessian.clone().cholesky() {
            Some(chol) => chol.solve(&grad),
            None => grad.clone(),
        };

        // Backtracking keeps early full Newton steps from overshooting.
        let current = global_risk(&w);
        let slope = grad.dot(&direction);
        let mut step = 1.0;
        let mut candidate = &w - step * &direction;
        while global_risk(&candidate) > current - 1e-4 * step * slope && step > 1e-8 {
            step *= 0.5;
            candidate = &w - step * &direction;
        }
        w = candidate;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::closed_form_wo;
    use crate::seeding;

    fn small_regression() -> RegressionScenario {
        RegressionScenario {
            agents: 4,
            samples_per_agent: 30,
            dim: 5,
            runs: 1,
            iterations: 1,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_regression_recovers_w_star() {
        let scenario = RegressionScenario {
            noise_var: 0.0,
            ..small_regression()
        };
        let mut rng = seeding::stream(61);
        let instance = gen_regression(&scenario, &mut rng);
        for (data, noise) in instance.agents.iter().zip(&instance.noises) {
            for (sample, &v) in data.iter().zip(noise) {
                assert_eq!(v, 0.0);
                assert_eq!(sample.target, sample.features.dot(&instance.w_star));
            }
        }
        let wo = closed_form_wo(&instance.agents, &instance.w_star, &instance.noises, 0.0).unwrap();
        assert!((wo - &instance.w_star).norm() < 1e-10);
    }

    #[test]
    fn regression_generation_is_deterministic() {
        let scenario = small_regression();
        let a = gen_regression(&scenario, &mut seeding::stream(62));
        let b = gen_regression(&scenario, &mut seeding::stream(62));
        assert_eq!(a.w_star, b.w_star);
        for (x, y) in a.agents.iter().flatten().zip(b.agents.iter().flatten()) {
            assert_eq!(x.features, y.features);
            assert_eq!(x.target, y.target);
        }
    }

    #[test]
    fn iid_feature_covariance_matches_identity() {
        // Pooled second moment of IID features over 10^5 rows should match
        // the identity within 2%.
        let scenario = RegressionScenario {
            agents: 1,
            samples_per_agent: 100_000,
            dim: 4,
            iid_features: true,
            noise_var: 0.0,
            batch_range: (1, 10),
            runs: 1,
            iterations: 1,
            ..Default::default()
        };
        let mut rng = seeding::stream(63);
        let instance = gen_regression(&scenario, &mut rng);
        let data = &instance.agents[0];
        let n = data.len() as f64;
        let mut moment = DMatrix::<f64>::zeros(4, 4);
        for sample in data {
            moment.ger(1.0 / n, &sample.features, &sample.features, 1.0);
        }
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (moment[(i, j)] - expected).abs() < 0.02,
                    "moment[{i},{j}] = {}",
                    moment[(i, j)]
                );
            }
        }
    }

    #[test]
    fn zero_drift_classification_is_separable_by_w_star() {
        let scenario = ClassificationScenario {
            agents: 5,
            samples_range: (10, 20),
            test_samples: 50,
            drift: 0.0,
            runs: 1,
            iterations: 1,
            ..Default::default()
        };
        let mut rng = seeding::stream(64);
        let instance = gen_classification(&scenario, &mut rng);
        for sample in instance.agents.iter().flatten().chain(&instance.test_set) {
            let score = sample.features.dot(&instance.w_star);
            assert_eq!(sample.label, if score > 0.0 { 1.0 } else { -1.0 });
        }
    }

    #[test]
    fn centered_features_balance_labels() {
        // With symmetric feature means the label mean vanishes up to Monte
        // Carlo error (3 sigma over ~10^5 draws).
        let scenario = ClassificationScenario {
            agents: 100,
            samples_range: (1000, 1000),
            mean_scale: 0.0,
            test_samples: 10,
            runs: 1,
            iterations: 1,
            ..Default::default()
        };
        let mut rng = seeding::stream(65);
        let instance = gen_classification(&scenario, &mut rng);
        let total: f64 = instance.agents.iter().flatten().map(|s| s.label).sum();
        let count = instance.agents.iter().map(|d| d.len()).sum::<usize>() as f64;
        assert!(
            (total / count).abs() < 3.0 / count.sqrt(),
            "label mean {}",
            total / count
        );
    }

    #[test]
    fn classification_generation_is_deterministic() {
        let scenario = ClassificationScenario {
            agents: 6,
            samples_range: (5, 15),
            test_samples: 20,
            runs: 1,
            iterations: 1,
            ..Default::default()
        };
        let a = gen_classification(&scenario, &mut seeding::stream(66));
        let b = gen_classification(&scenario, &mut seeding::stream(66));
        for (x, y) in a.test_set.iter().zip(&b.test_set) {
            assert_eq!(x.features, y.features);
            assert_eq!(x.label, y.label);
        }
    }

    #[test]
    fn newton_reaches_a_stationary_point() {
        let scenario = ClassificationScenario {
            agents: 10,
            samples_range: (30, 60),
            test_samples: 10,
            drift: 0.2,
            runs: 1,
            iterations: 1,
            ..Default::default()
        };
        let mut rng = seeding::stream(67);
        let instance = gen_classification(&scenario, &mut rng);
        let wo = logistic_global_optimum(&instance.agents, 200);
        let loss = LogisticLoss;
        let mut grad = Model::zeros(scenario.dim);
        for data in &instance.agents {
            grad += local_risk_grad(&loss, &wo, data).unwrap();
        }
        grad /= instance.agents.len() as f64;
        assert!(grad.norm() < 1e-8, "gradient norm {}", grad.norm());
    }
}
