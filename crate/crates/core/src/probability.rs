//! Optimal inclusion probabilities and their practical round-by-round
//! approximation, for both the agent level and the data level.
//!
//! The optimal schedules are defined at the global optimum: data
//! probabilities proportional to per-sample gradient norms, agent
//! probabilities proportional to `sqrt(sigma_sk^2 + alpha_k |grad P_k|^2)`.
//! The approximate schedule renormalizes only the participants of a round,
//! leaving everyone else's stored probability untouched, so the vector keeps
//! summing to one. Importance weights divide by these probabilities, so every
//! update path floors entries away from zero.

use thiserror::Error;

use crate::sampling::{ProbabilityVector, SampleDraw, SamplingError};

/// Default floor `epsilon` applied after every probability update; entries
/// are kept at or above `epsilon / n`.
pub const DEFAULT_PROB_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ProbabilityError {
    #[error("expected {expected} values, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("input is empty")]
    EmptyInput,
    #[error("probability at index {index} is zero; importance weights divide by it")]
    ZeroProbabilityEntry { index: usize },
    #[error("epochs and batch size must be at least 1 (got epochs = {epochs}, batch = {batch})")]
    InvalidEpochsOrBatch { epochs: usize, batch: usize },
    #[error("participant index {index} is out of bounds for {population} entries")]
    ParticipantOutOfBounds { index: usize, population: usize },
    #[error("participants hold no probability mass (free mass = {free_mass}); cannot renormalize")]
    ParticipantMassExhausted { free_mass: f64 },
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// Server-side probability state over the agents.
#[derive(Debug, Clone)]
pub struct AgentProbabilityState {
    /// Normalized inclusion probabilities over the `K` agents.
    pub probs: ProbabilityVector,
    /// Per-agent variance proxy `sigma_sk^2` (estimated or exact).
    pub sigma_sk: Vec<f64>,
    /// Per-agent `alpha_k = 3 + 6 / (E_k B_k)`, always in (3, 9].
    pub alpha: Vec<f64>,
    /// How many batch reports each `sigma_sk` entry averages over; zero for
    /// agents that never participated (their proxy has not been read yet).
    pub sigma_reports: Vec<u64>,
}

impl AgentProbabilityState {
    /// Uniform initialization: the first round assumes all agents are equal.
    pub fn uniform(epochs: &[usize], batches: &[usize]) -> Result<Self, ProbabilityError> {
        if epochs.is_empty() {
            return Err(ProbabilityError::EmptyInput);
        }
        if epochs.len() != batches.len() {
            return Err(ProbabilityError::LengthMismatch {
                expected: epochs.len(),
                found: batches.len(),
            });
        }
        let alpha = epochs
            .iter()
            .zip(batches)
            .map(|(&e, &b)| alpha_k(e, b))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            probs: ProbabilityVector::uniform(epochs.len())?,
            sigma_sk: vec![0.0; epochs.len()],
            alpha,
            sigma_reports: vec![0; epochs.len()],
        })
    }

    /// Folds a fresh batch estimate into the running mean for one agent.
    ///
    /// The underlying constant is defined at the global optimum, so a single
    /// mini-batch snapshot is a poor stand-in for it: a transiently small
    /// batch can crash the stored value and with it the agent's probability,
    /// which then stays stale until the agent is selected again. Averaging
    /// the reports keeps the proxy stable and still converges to the value
    /// at the optimum as the trajectory settles.
    pub fn absorb_sigma_estimate(&mut self, agent: usize, estimate: f64) {
        let count = self.sigma_reports[agent];
        self.sigma_sk[agent] =
            (self.sigma_sk[agent] * count as f64 + estimate) / (count + 1) as f64;
        self.sigma_reports[agent] = count + 1;
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Per-agent probability vectors over each agent's local samples.
#[derive(Debug, Clone)]
pub struct DataProbabilityState {
    per_agent: Vec<ProbabilityVector>,
}

impl DataProbabilityState {
    pub fn new(per_agent: Vec<ProbabilityVector>) -> Result<Self, ProbabilityError> {
        if per_agent.is_empty() {
            return Err(ProbabilityError::EmptyInput);
        }
        Ok(Self { per_agent })
    }

    /// Uniform vectors over datasets of the given sizes.
    pub fn uniform(dataset_sizes: &[usize]) -> Result<Self, ProbabilityError> {
        if dataset_sizes.is_empty() {
            return Err(ProbabilityError::EmptyInput);
        }
        let per_agent = dataset_sizes
            .iter()
            .map(|&n| ProbabilityVector::uniform(n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { per_agent })
    }

    pub fn agent(&self, agent: usize) -> &ProbabilityVector {
        &self.per_agent[agent]
    }

    pub fn set_agent(&mut self, agent: usize, probs: ProbabilityVector) {
        self.per_agent[agent] = probs;
    }

    pub fn len(&self) -> usize {
        self.per_agent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_agent.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ProbabilityVector> {
        self.per_agent.iter()
    }
}

/// `alpha_k = 3 + 6 / (E_k B_k)`.
pub fn alpha_k(epochs: usize, batch: usize) -> Result<f64, ProbabilityError> {
    if epochs == 0 || batch == 0 {
        return Err(ProbabilityError::InvalidEpochsOrBatch { epochs, batch });
    }
    Ok(3.0 + 6.0 / (epochs as f64 * batch as f64))
}

/// Floors every entry to at least `epsilon / n`, renormalizing the rest.
///
/// Entries already above the floor are scaled down by a common factor, and
/// the pass repeats until no entry sits below the floor, so the result keeps
/// both the floor and the unit sum. Ordering of entries is preserved (ties
/// may be created at the floor). A vector with nothing to floor is returned
/// unchanged.
pub fn floor_probs(probs: &ProbabilityVector, epsilon: f64) -> ProbabilityVector {
    debug_assert!((0.0..1.0).contains(&epsilon));
    let n = probs.len();
    let floor = epsilon / n as f64;
    if probs.iter().all(|p| p >= floor) {
        return probs.clone();
    }

    let mut values: Vec<f64> = probs.as_slice().to_vec();
    let mut at_floor = vec![false; n];
    loop {
        let mut newly_floored = false;
        for j in 0..n {
            if !at_floor[j] && values[j] < floor {
                values[j] = floor;
                at_floor[j] = true;
                newly_floored = true;
            }
        }
        if !newly_floored {
            break;
        }
        let floored_mass = at_floor.iter().filter(|&&f| f).count() as f64 * floor;
        let residual: f64 = (0..n).filter(|&j| !at_floor[j]).map(|j| values[j]).sum();
        if residual > 0.0 {
            let scale = (1.0 - floored_mass) / residual;
            for j in 0..n {
                if !at_floor[j] {
                    values[j] *= scale;
                }
            }
        }
    }
    ProbabilityVector::new(values).expect("flooring preserves a valid probability vector")
}

/// Optimal data probabilities: proportional to per-sample gradient norms at
/// the global optimum, floored so importance weights stay finite.
///
/// Returns the vector and a flag that is true when all norms were zero and
/// the uniform fallback was used.
pub fn optimal_data_probs(
    grad_norms: &[f64],
) -> Result<(ProbabilityVector, bool), ProbabilityError> {
    if grad_norms.is_empty() {
        return Err(ProbabilityError::EmptyInput);
    }
    let total: f64 = grad_norms.iter().sum();
    if total <= 0.0 {
        return Ok((ProbabilityVector::uniform(grad_norms.len())?, true));
    }
    let probs = ProbabilityVector::normalized(grad_norms)?;
    Ok((floor_probs(&probs, DEFAULT_PROB_FLOOR), false))
}

/// Local gradient-noise constant
/// `sigma_sk^2 = 6 / (E B N^2) * sum_n |grad Q(w_o; x_n)|^2 / p_n`.
pub fn sigma_sk(
    data_probs: &ProbabilityVector,
    grad_norms: &[f64],
    epochs: usize,
    batch: usize,
) -> Result<f64, ProbabilityError> {
    if epochs == 0 || batch == 0 {
        return Err(ProbabilityError::InvalidEpochsOrBatch { epochs, batch });
    }
    if data_probs.len() != grad_norms.len() {
        return Err(ProbabilityError::LengthMismatch {
            expected: data_probs.len(),
            found: grad_norms.len(),
        });
    }
    let n = data_probs.len() as f64;
    let mut weighted = 0.0;
    for (index, (p, g)) in data_probs.iter().zip(grad_norms).enumerate() {
        if *g == 0.0 {
            continue;
        }
        if p <= 0.0 {
            return Err(ProbabilityError::ZeroProbabilityEntry { index });
        }
        weighted += g * g / p;
    }
    Ok(6.0 / (epochs as f64 * batch as f64 * n * n) * weighted)
}

/// Batch estimate of `sigma_sk^2` from one mini-batch report.
///
/// Reuses the participant's per-sample gradient norms at the round-start
/// model and its stored data probabilities restricted to the batch, scaling
/// the partial sum by `N / B` to approximate the full-dataset sum. No extra
/// gradient evaluations are needed.
pub fn estimate_sigma_sk(
    batch_probs: &[f64],
    batch_grad_norms: &[f64],
    epochs: usize,
    batch: usize,
    dataset_len: usize,
) -> Result<f64, ProbabilityError> {
    if epochs == 0 || batch == 0 {
        return Err(ProbabilityError::InvalidEpochsOrBatch { epochs, batch });
    }
    if batch_probs.len() != batch_grad_norms.len() {
        return Err(ProbabilityError::LengthMismatch {
            expected: batch_probs.len(),
            found: batch_grad_norms.len(),
        });
    }
    let n = dataset_len as f64;
    let mut weighted = 0.0;
    for (index, (p, g)) in batch_probs.iter().zip(batch_grad_norms).enumerate() {
        if *g == 0.0 {
            continue;
        }
        if *p <= 0.0 {
            return Err(ProbabilityError::ZeroProbabilityEntry { index });
        }
        weighted += g * g / p;
    }
    let scale = n / batch as f64;
    Ok(6.0 / (epochs as f64 * batch as f64 * n * n) * scale * weighted)
}

/// Optimal agent probabilities: proportional to
/// `sqrt(sigma_sk^2 + alpha_k |grad P_k(w_o)|^2)`, floored.
///
/// Returns the vector and a flag that is true when every radicand was zero
/// and the uniform fallback was used.
pub fn optimal_agent_probs(
    sigma_sk: &[f64],
    alpha: &[f64],
    local_grad_norms: &[f64],
) -> Result<(ProbabilityVector, bool), ProbabilityError> {
    if sigma_sk.is_empty() {
        return Err(ProbabilityError::EmptyInput);
    }
    if sigma_sk.len() != alpha.len() {
        return Err(ProbabilityError::LengthMismatch {
            expected: sigma_sk.len(),
            found: alpha.len(),
        });
    }
    if sigma_sk.len() != local_grad_norms.len() {
        return Err(ProbabilityError::LengthMismatch {
            expected: sigma_sk.len(),
            found: local_grad_norms.len(),
        });
    }
    let weights: Vec<f64> = sigma_sk
        .iter()
        .zip(alpha)
        .zip(local_grad_norms)
        .map(|((&s, &a), &g)| (s + a * g * g).sqrt())
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Ok((ProbabilityVector::uniform(sigma_sk.len())?, true));
    }
    let probs = ProbabilityVector::normalized(&weights)?;
    Ok((floor_probs(&probs, DEFAULT_PROB_FLOOR), false))
}

/// Round update of the agent probabilities from the participants' reports.
///
/// Non-participants keep their stored probability; the participants split
/// the remaining mass `1 - sum(complement)` proportionally to
/// `sqrt(sigma_sk^2 + alpha_k |est grad P_k|^2)`, so the whole vector still
/// sums to one. `est_grad_norms[i]` belongs to `participants.indices()[i]`,
/// and the `sigma_sk` stored in `state` is read as-is (refresh the
/// participants' entries before calling).
pub fn approx_update_agent_probs(
    state: &AgentProbabilityState,
    participants: &SampleDraw,
    est_grad_norms: &[f64],
) -> Result<AgentProbabilityState, ProbabilityError> {
    let population = state.len();
    if est_grad_norms.len() != participants.sample_size() {
        return Err(ProbabilityError::LengthMismatch {
            expected: participants.sample_size(),
            found: est_grad_norms.len(),
        });
    }
    if let Some(index) = participants.iter().find(|&k| k >= population) {
        return Err(ProbabilityError::ParticipantOutOfBounds { index, population });
    }

    let participant_mass: f64 = participants.iter().map(|k| state.probs.get(k)).sum();
    let free_mass = 1.0 - (1.0 - participant_mass);
    if free_mass <= 0.0 {
        return Err(ProbabilityError::ParticipantMassExhausted { free_mass });
    }

    let weights: Vec<f64> = participants
        .iter()
        .zip(est_grad_norms)
        .map(|(k, &g)| (state.sigma_sk[k] + state.alpha[k] * g * g).sqrt())
        .collect();
    let total: f64 = weights.iter().sum();

    let mut values: Vec<f64> = state.probs.as_slice().to_vec();
    if total > 0.0 {
        for (k, w) in participants.iter().zip(&weights) {
            values[k] = w / total * free_mass;
        }
    } else {
        // Degenerate report (all radicands zero): split the free mass evenly.
        let share = free_mass / participants.sample_size() as f64;
        for k in participants.iter() {
            values[k] = share;
        }
    }

    Ok(AgentProbabilityState {
        probs: ProbabilityVector::new(values)?,
        sigma_sk: state.sigma_sk.clone(),
        alpha: state.alpha.clone(),
        sigma_reports: state.sigma_reports.clone(),
    })
}

/// Round update of one agent's data probabilities from a mini-batch report.
///
/// Same renormalization scheme as the agent level: in-batch points split the
/// free mass `1 - sum(out-of-batch)` proportionally to their gradient norms
/// at the round-start model; out-of-batch values are unchanged.
pub fn approx_update_data_probs(
    probs: &ProbabilityVector,
    batch: &SampleDraw,
    batch_grad_norms: &[f64],
) -> Result<ProbabilityVector, ProbabilityError> {
    let population = probs.len();
    if batch_grad_norms.len() != batch.sample_size() {
        return Err(ProbabilityError::LengthMismatch {
            expected: batch.sample_size(),
            found: batch_grad_norms.len(),
        });
    }
    if let Some(index) = batch.iter().find(|&b| b >= population) {
        return Err(ProbabilityError::ParticipantOutOfBounds { index, population });
    }

    let batch_mass: f64 = batch.iter().map(|b| probs.get(b)).sum();
    let free_mass = 1.0 - (1.0 - batch_mass);
    if free_mass <= 0.0 {
        return Err(ProbabilityError::ParticipantMassExhausted { free_mass });
    }

    let total: f64 = batch_grad_norms.iter().sum();
    let mut values: Vec<f64> = probs.as_slice().to_vec();
    if total > 0.0 {
        for (b, &g) in batch.iter().zip(batch_grad_norms) {
            values[b] = g / total * free_mass;
        }
    } else {
        let share = free_mass / batch.sample_size() as f64;
        for b in batch.iter() {
            values[b] = share;
        }
    }
    Ok(ProbabilityVector::new(values)?)
}
