//! Shared fixtures for the benchmarks.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use fedsim_core::federation::AgentSpec;
use fedsim_core::objectives::{Model, RegressionSample};
use fedsim_core::sampling::{cap_and_normalize, ProbabilityVector};
use fedsim_core::seeding;

/// Random feasible probability vector for a draw of `m` out of `n`.
pub fn feasible_probs(n: usize, m: usize, seed: u64) -> ProbabilityVector {
    let mut rng = seeding::stream(seed);
    let weights: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().ln()).collect();
    let raw = ProbabilityVector::normalized(&weights).unwrap();
    cap_and_normalize(&raw, m).unwrap()
}

/// Heterogeneous regression agents for round benchmarks.
pub fn regression_agents(
    agents: usize,
    samples: usize,
    dim: usize,
    seed: u64,
) -> (Vec<AgentSpec<RegressionSample>>, Model) {
    let mut rng = seeding::stream(seed);
    let w_star = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
    let specs = (0..agents)
        .map(|_| {
            let mean: DVector<f64> = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let data: Vec<RegressionSample> = (0..samples)
                .map(|_| {
                    let u = &mean
                        + DVector::from_fn(dim, |_, _| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            z
                        });
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    RegressionSample::new(u.clone(), u.dot(&w_star) + 0.1 * noise)
                })
                .collect();
            let epochs = rng.random_range(1..=5);
            let batch = rng.random_range(1..=10);
            AgentSpec::new(data, epochs, batch).unwrap()
        })
        .collect();
    (specs, w_star)
}
