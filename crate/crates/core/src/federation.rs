//! The round engine: agent selection, local multi-epoch updates with
//! importance-weighted gradients, server aggregation, and the gradient-noise
//! diagnostic. Implements both the plain averaging baseline and the
//! importance-sampling variant with true or approximate probabilities.
//!
//! Determinism contract: every random stream is derived from
//! `(seed, round, lane)`, where lane 0 is the server and lane `k + 1` belongs
//! to agent `k`. Summation orders are fixed (ascending indices), so a rerun
//! with the same configuration reproduces traces bit for bit, regardless of
//! any parallelism a caller adds around rounds.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objectives::{local_risk_grad, Model, Objective, ObjectiveError};
use crate::probability::{
    approx_update_agent_probs, approx_update_data_probs, estimate_sigma_sk, floor_probs,
    optimal_agent_probs, optimal_data_probs, sigma_sk, AgentProbabilityState, DataProbabilityState,
    ProbabilityError, DEFAULT_PROB_FLOOR,
};
use crate::sampling::{
    cap_and_normalize, systematic_sample, ProbabilityVector, SampleDraw, SamplingError,
};
use crate::seeding;

/// Server lane for stream derivation; agents use `k + 1`.
const SERVER_LANE: u64 = 0;

#[derive(Debug, Error)]
pub enum FederationError {
    #[error(
        "participants per round ({participants}) cannot exceed the number of agents ({agents})"
    )]
    TooManyParticipants { participants: usize, agents: usize },
    #[error("at least one participant per round is required")]
    NoParticipants,
    #[error("step size must be finite and non-negative, got {0}")]
    InvalidStepSize(f64),
    #[error("agent {agent}: batch size {batch} and dataset size {dataset} violate 1 <= B <= N")]
    InvalidBatch {
        agent: usize,
        batch: usize,
        dataset: usize,
    },
    #[error("agent {agent}: at least one epoch is required")]
    InvalidEpochs { agent: usize },
    #[error("configured for {expected} agents but {found} were supplied ({what})")]
    SetupMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(
        "agent {agent}: data probability at index {index} is zero; importance weights divide by it"
    )]
    ZeroDataProbability { agent: usize, index: usize },
    #[error("agent probability for agent {agent} is zero; importance weights divide by it")]
    ZeroAgentProbability { agent: usize },
    #[error("cannot aggregate an empty set of models")]
    EmptyAggregation,
    #[error("model dimensions disagree: {left} vs {right}")]
    ModelDimensionMismatch { left: usize, right: usize },
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Probability(#[from] ProbabilityError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// Algorithm variant run by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Uniform agent selection without replacement, uniform with-replacement
    /// mini-batches, unweighted mean gradients.
    FedAvg,
    /// Importance sampling at both levels with probabilities computed at the
    /// global optimum.
    IsTrue,
    /// Importance sampling with probabilities approximated round by round
    /// from the participants' reports.
    IsApprox,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::FedAvg, Variant::IsTrue, Variant::IsApprox];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::FedAvg => "fedavg",
            Variant::IsTrue => "is-true",
            Variant::IsApprox => "is-approx",
        }
    }

    /// Stable id used for stream derivation.
    pub fn lane(&self) -> u64 {
        match self {
            Variant::FedAvg => 0,
            Variant::IsTrue => 1,
            Variant::IsApprox => 2,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fedavg" => Ok(Variant::FedAvg),
            "is-true" => Ok(Variant::IsTrue),
            "is-approx" => Ok(Variant::IsApprox),
            other => Err(format!(
                "unknown variant '{other}' (expected fedavg, is-true or is-approx)"
            )),
        }
    }
}

/// Global run parameters shared by every round.
#[derive(Debug, Clone)]
pub struct FederationConfig {
    pub agents: usize,
    pub participants: usize,
    pub step_size: f64,
    pub iterations: usize,
    pub variant: Variant,
    pub seed: u64,
}

impl FederationConfig {
    pub fn new(
        agents: usize,
        participants: usize,
        step_size: f64,
        iterations: usize,
        variant: Variant,
        seed: u64,
    ) -> Result<Self, FederationError> {
        if participants == 0 {
            return Err(FederationError::NoParticipants);
        }
        if participants > agents {
            return Err(FederationError::TooManyParticipants {
                participants,
                agents,
            });
        }
        if !step_size.is_finite() || step_size < 0.0 {
            return Err(FederationError::InvalidStepSize(step_size));
        }
        Ok(Self {
            agents,
            participants,
            step_size,
            iterations,
            variant,
            seed,
        })
    }
}

/// One agent's local setup: dataset, epochs per round, batch per step.
#[derive(Debug, Clone)]
pub struct AgentSpec<S> {
    dataset: Vec<S>,
    epochs: usize,
    batch: usize,
}

impl<S> AgentSpec<S> {
    pub fn new(dataset: Vec<S>, epochs: usize, batch: usize) -> Result<Self, FederationError> {
        if epochs == 0 {
            return Err(FederationError::InvalidEpochs { agent: usize::MAX });
        }
        if batch == 0 || batch > dataset.len() {
            return Err(FederationError::InvalidBatch {
                agent: usize::MAX,
                batch,
                dataset: dataset.len(),
            });
        }
        Ok(Self {
            dataset,
            epochs,
            batch,
        })
    }

    pub fn dataset(&self) -> &[S] {
        &self.dataset
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Smoothed per-sample gradient norms an agent has observed.
///
/// The optimal data probabilities are proportional to gradient norms at the
/// global optimum; a single snapshot at the current model is a noisy stand-in
/// for them. A sample whose residual happens to cross zero mid-trajectory
/// would crash its stored probability and, drawn with probability
/// proportional to it, almost never recover; conversely, norms observed far
/// from the optimum rank samples by the wrong signal. Each sample therefore
/// reports an exponential moving average of its observed norms, seeded at
/// the agent-wide mean norm: one dip moves the estimate at most half way,
/// and stale transient values decay geometrically with every revisit.
#[derive(Debug, Clone)]
pub struct NormMemory {
    ema: Vec<f64>,
    seen: Vec<bool>,
    total_sum: f64,
    total_count: u64,
}

impl NormMemory {
    /// Weight of a fresh observation in the moving average.
    const BLEND: f64 = 0.7;

    pub fn new(len: usize) -> Self {
        Self {
            ema: vec![0.0; len],
            seen: vec![false; len],
            total_sum: 0.0,
            total_count: 0,
        }
    }

    /// Folds one observation in and returns the sample's smoothed norm.
    pub fn absorb(&mut self, index: usize, value: f64) -> f64 {
        self.total_sum += value;
        self.total_count += 1;
        let base = if self.seen[index] {
            self.ema[index]
        } else {
            self.total_sum / self.total_count as f64
        };
        let updated = (1.0 - Self::BLEND) * base + Self::BLEND * value;
        self.ema[index] = updated;
        self.seen[index] = true;
        updated
    }

    /// Smoothed norm for a sample, falling back to the agent-wide mean for
    /// samples that were never observed. Zero before any observation at all.
    pub fn estimate(&self, index: usize) -> f64 {
        if self.seen[index] {
            self.ema[index]
        } else if self.total_count > 0 {
            self.total_sum / self.total_count as f64
        } else {
            0.0
        }
    }
}

/// Both levels of probability state, owned by the server between rounds.
#[derive(Debug, Clone)]
pub struct ProbabilityStates {
    pub agents: AgentProbabilityState,
    pub data: DataProbabilityState,
    /// Per-agent gradient-norm memory driving the approximate data schedule.
    pub norm_memory: Vec<NormMemory>,
    /// Smoothed norms of the agents' reported local-gradient estimates,
    /// feeding the approximate agent schedule.
    pub report_norms: NormMemory,
}

impl ProbabilityStates {
    /// Uniform initialization at both levels.
    pub fn uniform<S>(specs: &[AgentSpec<S>]) -> Result<Self, FederationError> {
        let epochs: Vec<usize> = specs.iter().map(|a| a.epochs()).collect();
        let batches: Vec<usize> = specs.iter().map(|a| a.batch()).collect();
        let sizes: Vec<usize> = specs.iter().map(|a| a.len()).collect();
        Ok(Self {
            agents: AgentProbabilityState::uniform(&epochs, &batches)?,
            data: DataProbabilityState::uniform(&sizes)?,
            norm_memory: sizes.iter().map(|&n| NormMemory::new(n)).collect(),
            report_norms: NormMemory::new(specs.len()),
        })
    }
}

/// What a round records beyond the new global model.
#[derive(Debug, Clone)]
pub struct RoundTrace {
    pub iteration: usize,
    pub selected: Vec<usize>,
    pub model: Model,
    /// Snapshot of the agent probabilities after the round's updates.
    pub agent_probs: Option<Vec<f64>>,
}

/// Optional per-round recording knobs.
#[derive(Debug, Clone, Copy, Default)]
pub struct RoundOptions {
    pub record_agent_probs: bool,
}

/// Result of one importance-weighted local update, including the first-epoch
/// report the approximate probability schedule feeds on.
#[derive(Debug, Clone)]
pub struct IsLocalUpdate {
    pub model: Model,
    pub first_batch: SampleDraw,
    /// Per-sample gradient norms at the round-start model, aligned with
    /// `first_batch.indices()`.
    pub first_batch_grad_norms: Vec<f64>,
    /// Importance-weighted one-epoch estimate of the local risk gradient at
    /// the round-start model.
    pub local_grad_estimate: Model,
    /// Final data probabilities when the update ran with `adapt_data_probs`;
    /// `None` for static schedules.
    pub updated_data_probs: Option<ProbabilityVector>,
}

/// Runs `E` local epochs of the importance-weighted update.
///
/// Each step draws a batch of size `B` by systematic sampling over the
/// agent's data probabilities and applies
/// `w -= mu / (K p_k E B) * sum_b grad Q(w; x_b) / (N p_b)`.
/// The per-sample weights divide by the same probabilities that produced the
/// draw, which is what makes the round estimator unbiased.
///
/// With `adapt` the agent re-estimates its data probabilities after every
/// epoch from that epoch's batch (the approximate schedule), redistributing
/// the batch's mass proportionally to the running-mean gradient norms held in
/// the supplied [`NormMemory`]; each batch is drawn from, and weighted by,
/// the probabilities in force at the start of its epoch. The first-epoch
/// report always reflects the incoming probabilities and the raw norms at
/// the round-start model.
#[allow(clippy::too_many_arguments)]
pub fn local_update_is<O, R>(
    objective: &O,
    w_start: &Model,
    agent: &AgentSpec<O::Sample>,
    data_probs: &ProbabilityVector,
    agent_prob: f64,
    total_agents: usize,
    step_size: f64,
    mut adapt: Option<&mut NormMemory>,
    rng: &mut R,
) -> Result<IsLocalUpdate, FederationError>
where
    O: Objective,
    R: Rng + ?Sized,
{
    if data_probs.len() != agent.len() {
        return Err(FederationError::SetupMismatch {
            what: "data probabilities vs dataset",
            expected: agent.len(),
            found: data_probs.len(),
        });
    }
    if agent_prob <= 0.0 {
        return Err(FederationError::ZeroAgentProbability { agent: usize::MAX });
    }
    if let Some(index) = data_probs.iter().position(|p| p <= 0.0) {
        return Err(FederationError::ZeroDataProbability {
            agent: usize::MAX,
            index,
        });
    }

    let n = agent.len() as f64;
    let epochs = agent.epochs();
    let batch_size = agent.batch();
    let step_scale = 1.0 / (total_agents as f64 * agent_prob * epochs as f64 * batch_size as f64);

    let mut model = w_start.clone();
    let mut weighted_sum = Model::zeros(model.len());
    let mut grad = Model::zeros(model.len());
    let mut epoch_norms = Vec::with_capacity(batch_size);
    let mut first_batch = None;
    let mut first_norms = Vec::new();
    let mut local_grad_estimate = Model::zeros(model.len());
    let mut current_probs: Option<ProbabilityVector> = None;

    for epoch in 0..epochs {
        let probs = current_probs.as_ref().unwrap_or(data_probs);
        let batch = systematic_sample(probs, batch_size, rng)?;
        weighted_sum.fill(0.0);
        epoch_norms.clear();
        for b in batch.iter() {
            objective.grad_into(&model, &agent.dataset()[b], &mut grad);
            let weight = 1.0 / (n * probs.get(b));
            weighted_sum.axpy(weight, &grad, 1.0);
            epoch_norms.push(grad.norm());
        }
        if epoch == 0 {
            // One-epoch unbiased estimate of grad P_k at the round-start
            // model: the same weighted sum scaled by 1/B.
            local_grad_estimate.copy_from(&weighted_sum);
            local_grad_estimate /= batch_size as f64;
            first_batch = Some(batch.clone());
            first_norms = epoch_norms.clone();
        }
        if let Some(memory) = adapt.as_deref_mut() {
            for (b, &raw) in batch.iter().zip(&epoch_norms) {
                memory.absorb(b, raw);
            }
            // The agent owns all of its data, so the renormalization runs
            // over the whole dataset (the batch argument degenerates to the
            // full index set and the free mass to 1), using the smoothed
            // norm estimates; unseen samples sit at the agent-wide mean.
            let everything =
                SampleDraw::new((0..agent.len()).collect()).expect("datasets are non-empty");
            let estimates: Vec<f64> = (0..agent.len()).map(|i| memory.estimate(i)).collect();
            let updated = approx_update_data_probs(probs, &everything, &estimates)?;
            let updated = floor_probs(&updated, DEFAULT_PROB_FLOOR);
            current_probs = Some(cap_and_normalize(&updated, batch_size)?);
        }
        model.axpy(-step_size * step_scale, &weighted_sum, 1.0);
    }

    Ok(IsLocalUpdate {
        model,
        first_batch: first_batch.expect("at least one epoch runs"),
        first_batch_grad_norms: first_norms,
        local_grad_estimate,
        updated_data_probs: current_probs,
    })
}

/// Runs `E` local epochs of the plain baseline update.
///
/// Batches are drawn uniformly with replacement and the step is the
/// unweighted mean gradient `w -= mu / B * sum_b grad Q(w; x_b)`; no
/// `1 / (K p_k E)` correction is applied, exactly as in the original
/// averaging scheme.
pub fn local_update_fedavg<O, R>(
    objective: &O,
    w_start: &Model,
    agent: &AgentSpec<O::Sample>,
    step_size: f64,
    rng: &mut R,
) -> Result<Model, FederationError>
where
    O: Objective,
    R: Rng + ?Sized,
{
    let n = agent.len();
    let batch_size = agent.batch();
    let mut model = w_start.clone();
    let mut sum = Model::zeros(model.len());
    let mut grad = Model::zeros(model.len());
    let mut batch = vec![0usize; batch_size];

    for _ in 0..agent.epochs() {
        for slot in batch.iter_mut() {
            *slot = rng.random_range(0..n);
        }
        batch.sort_unstable();
        sum.fill(0.0);
        for &b in &batch {
            objective.grad_into(&model, &agent.dataset()[b], &mut grad);
            sum += &grad;
        }
        model.axpy(-step_size / batch_size as f64, &sum, 1.0);
    }
    Ok(model)
}

/// Arithmetic mean of the returned local models, summed in slice order.
pub fn aggregate(models: &[Model]) -> Result<Model, FederationError> {
    let first = models.first().ok_or(FederationError::EmptyAggregation)?;
    let mut mean = Model::zeros(first.len());
    for model in models {
        if model.len() != first.len() {
            return Err(FederationError::ModelDimensionMismatch {
                left: first.len(),
                right: model.len(),
            });
        }
        mean += model;
    }
    mean /= models.len() as f64;
    Ok(mean)
}

fn validate_setup<S>(
    config: &FederationConfig,
    agents: &[AgentSpec<S>],
    states: &ProbabilityStates,
) -> Result<(), FederationError> {
    if agents.len() != config.agents {
        return Err(FederationError::SetupMismatch {
            what: "agent specs",
            expected: config.agents,
            found: agents.len(),
        });
    }
    if states.agents.len() != config.agents {
        return Err(FederationError::SetupMismatch {
            what: "agent probability state",
            expected: config.agents,
            found: states.agents.len(),
        });
    }
    if states.data.len() != config.agents {
        return Err(FederationError::SetupMismatch {
            what: "data probability state",
            expected: config.agents,
            found: states.data.len(),
        });
    }
    Ok(())
}

fn agent_stream(seed: u64, round: usize, agent: usize) -> rand_chacha::ChaCha12Rng {
    seeding::stream(seeding::derive(
        seeding::derive(seed, round as u64),
        agent as u64 + 1,
    ))
}

fn server_stream(seed: u64, round: usize) -> rand_chacha::ChaCha12Rng {
    seeding::stream(seeding::derive(
        seeding::derive(seed, round as u64),
        SERVER_LANE,
    ))
}

/// Executes one federation round from `w_prev` and returns the aggregated
/// model together with the round trace.
///
/// Selection is uniform without replacement for the baseline and systematic
/// over the agent probabilities for the importance-sampling variants. Every
/// selected agent starts from the same `w_prev`. For the approximate variant
/// the probability states are refreshed afterwards from the participants'
/// first-epoch reports, then floored and re-capped for the next draw.
pub fn run_round<O>(
    round: usize,
    w_prev: &Model,
    config: &FederationConfig,
    agents: &[AgentSpec<O::Sample>],
    objective: &O,
    states: &mut ProbabilityStates,
    options: &RoundOptions,
) -> Result<(Model, RoundTrace), FederationError>
where
    O: Objective,
{
    validate_setup(config, agents, states)?;
    let mut server_rng = server_stream(config.seed, round);

    let selection: SampleDraw = match config.variant {
        Variant::FedAvg => {
            let picked = index::sample(&mut server_rng, config.agents, config.participants);
            SampleDraw::new(picked.into_vec())?
        }
        Variant::IsTrue | Variant::IsApprox => {
            systematic_sample(&states.agents.probs, config.participants, &mut server_rng)?
        }
    };

    let mut local_models = Vec::with_capacity(config.participants);
    let mut reports: Vec<(usize, IsLocalUpdate)> = Vec::new();

    for k in selection.iter() {
        let mut rng = agent_stream(config.seed, round, k);
        match config.variant {
            Variant::FedAvg => {
                let model =
                    local_update_fedavg(objective, w_prev, &agents[k], config.step_size, &mut rng)?;
                local_models.push(model);
            }
            Variant::IsTrue | Variant::IsApprox => {
                let adapt = config.variant == Variant::IsApprox;
                let agent_prob = states.agents.probs.get(k);
                let data_probs = states.data.agent(k);
                let memory = adapt.then(|| &mut states.norm_memory[k]);
                let update = local_update_is(
                    objective,
                    w_prev,
                    &agents[k],
                    data_probs,
                    agent_prob,
                    config.agents,
                    config.step_size,
                    memory,
                    &mut rng,
                )
                .map_err(|e| tag_agent(e, k))?;
                if adapt {
                    let mut parts = update;
                    local_models.push(std::mem::replace(&mut parts.model, Model::zeros(0)));
                    reports.push((k, parts));
                } else {
                    local_models.push(update.model);
                }
            }
        }
    }

    let aggregated = aggregate(&local_models)?;

    if config.variant == Variant::IsApprox {
        let mut est_norms = vec![0.0; selection.sample_size()];
        for (slot, (k, report)) in reports.iter().enumerate() {
            let agent = &agents[*k];
            // The first-epoch batch was drawn under the stored (pre-round)
            // data probabilities; the variance estimate reads those same
            // values.
            let pre_probs = states.data.agent(*k);
            let batch_probs: Vec<f64> = report
                .first_batch
                .iter()
                .map(|b| pre_probs.get(b))
                .collect();
            let sigma_estimate = estimate_sigma_sk(
                &batch_probs,
                &report.first_batch_grad_norms,
                agent.epochs(),
                agent.batch(),
                agent.len(),
            )?;
            states.agents.absorb_sigma_estimate(*k, sigma_estimate);
            if let Some(probs) = &report.updated_data_probs {
                states.data.set_agent(*k, probs.clone());
            }
            est_norms[slot] = states
                .report_norms
                .absorb(*k, report.local_grad_estimate.norm());
        }

        let refreshed = approx_update_agent_probs(&states.agents, &selection, &est_norms)?;
        let floored = floor_probs(&refreshed.probs, DEFAULT_PROB_FLOOR);
        let capped = cap_and_normalize(&floored, config.participants)?;
        states.agents = AgentProbabilityState {
            probs: capped,
            sigma_sk: refreshed.sigma_sk,
            alpha: refreshed.alpha,
            sigma_reports: refreshed.sigma_reports,
        };
    }

    let trace = RoundTrace {
        iteration: round,
        selected: selection.indices().to_vec(),
        model: aggregated.clone(),
        agent_probs: options
            .record_agent_probs
            .then(|| states.agents.probs.as_slice().to_vec()),
    };
    Ok((aggregated, trace))
}

fn tag_agent(error: FederationError, agent: usize) -> FederationError {
    match error {
        FederationError::ZeroDataProbability { index, .. } => {
            FederationError::ZeroDataProbability { agent, index }
        }
        FederationError::ZeroAgentProbability { .. } => {
            FederationError::ZeroAgentProbability { agent }
        }
        other => other,
    }
}

/// Probability states evaluated at the global optimum: optimal data
/// probabilities, the exact per-agent `sigma_sk^2`, and optimal agent
/// probabilities, each floored and capped for its draw size.
pub fn optimal_probability_states<O>(
    agents: &[AgentSpec<O::Sample>],
    objective: &O,
    optimum: &Model,
    participants: usize,
) -> Result<ProbabilityStates, FederationError>
where
    O: Objective,
{
    if agents.is_empty() {
        return Err(FederationError::NoParticipants);
    }
    let mut data_vectors = Vec::with_capacity(agents.len());
    let mut sigma = Vec::with_capacity(agents.len());
    let mut alpha = Vec::with_capacity(agents.len());
    let mut local_norms = Vec::with_capacity(agents.len());
    let mut grad = Model::zeros(optimum.len());

    for agent in agents {
        let mut norms = Vec::with_capacity(agent.len());
        let mut mean_grad = Model::zeros(optimum.len());
        for sample in agent.dataset() {
            objective.grad_into(optimum, sample, &mut grad);
            norms.push(grad.norm());
            mean_grad += &grad;
        }
        mean_grad /= agent.len() as f64;

        let (probs, _) = optimal_data_probs(&norms)?;
        let probs = cap_and_normalize(&probs, agent.batch())?;
        sigma.push(sigma_sk(&probs, &norms, agent.epochs(), agent.batch())?);
        alpha.push(crate::probability::alpha_k(agent.epochs(), agent.batch())?);
        local_norms.push(mean_grad.norm());
        data_vectors.push(probs);
    }

    let (agent_probs, _) = optimal_agent_probs(&sigma, &alpha, &local_norms)?;
    let agent_probs = cap_and_normalize(&agent_probs, participants)?;

    let reports = vec![1; agents.len()];
    let norm_memory = agents.iter().map(|a| NormMemory::new(a.len())).collect();
    Ok(ProbabilityStates {
        agents: AgentProbabilityState {
            probs: agent_probs,
            sigma_sk: sigma,
            alpha,
            sigma_reports: reports,
        },
        data: DataProbabilityState::new(data_vectors)?,
        norm_memory,
        report_norms: NormMemory::new(agents.len()),
    })
}

/// Draws the gradient-noise vector
/// `s = 1/L sum_{k in L} grad_est P_k(w) / (K p_k) - 1/K sum_k grad P_k(w)`
/// at a fixed model. Precomputes the true global gradient once so tests can
/// draw many samples cheaply.
pub struct GradientNoiseProbe<'a, O: Objective> {
    objective: &'a O,
    agents: &'a [AgentSpec<O::Sample>],
    agent_probs: ProbabilityVector,
    data_probs: &'a DataProbabilityState,
    participants: usize,
    model: Model,
    true_grad: Model,
}

impl<'a, O: Objective> GradientNoiseProbe<'a, O> {
    pub fn new(
        model: &Model,
        config: &FederationConfig,
        agents: &'a [AgentSpec<O::Sample>],
        objective: &'a O,
        states: &'a ProbabilityStates,
    ) -> Result<Self, FederationError> {
        validate_setup(config, agents, states)?;
        let mut true_grad = Model::zeros(model.len());
        for agent in agents {
            true_grad += local_risk_grad(objective, model, agent.dataset())?;
        }
        true_grad /= agents.len() as f64;
        Ok(Self {
            objective,
            agents,
            agent_probs: states.agents.probs.clone(),
            data_probs: &states.data,
            participants: config.participants,
            model: model.clone(),
            true_grad,
        })
    }

    /// One draw of the noise vector; the estimator uses fresh agent and
    /// batch selections but evaluates every gradient at the fixed model.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Model, FederationError> {
        let total = self.agents.len() as f64;
        let draw = systematic_sample(&self.agent_probs, self.participants, rng)?;
        let mut acc = Model::zeros(self.model.len());
        let mut est = Model::zeros(self.model.len());
        let mut grad = Model::zeros(self.model.len());

        for k in draw.iter() {
            let agent = &self.agents[k];
            let probs = self.data_probs.agent(k);
            if let Some(index) = probs.iter().position(|p| p <= 0.0) {
                return Err(FederationError::ZeroDataProbability { agent: k, index });
            }
            let n = agent.len() as f64;
            est.fill(0.0);
            for _ in 0..agent.epochs() {
                let batch = systematic_sample(probs, agent.batch(), rng)?;
                for b in batch.iter() {
                    self.objective
                        .grad_into(&self.model, &agent.dataset()[b], &mut grad);
                    est.axpy(1.0 / (n * probs.get(b)), &grad, 1.0);
                }
            }
            est /= (agent.epochs() * agent.batch()) as f64;
            let p_k = self.agent_probs.get(k);
            if p_k <= 0.0 {
                return Err(FederationError::ZeroAgentProbability { agent: k });
            }
            acc.axpy(1.0 / (total * p_k), &est, 1.0);
        }
        acc /= self.participants as f64;
        acc -= &self.true_grad;
        Ok(acc)
    }
}

/// Convenience wrapper drawing a single gradient-noise sample.
pub fn gradient_noise_sample<O, R>(
    model: &Model,
    config: &FederationConfig,
    agents: &[AgentSpec<O::Sample>],
    objective: &O,
    states: &ProbabilityStates,
    rng: &mut R,
) -> Result<Model, FederationError>
where
    O: Objective,
    R: Rng + ?Sized,
{
    GradientNoiseProbe::new(model, config, agents, objective, states)?.sample(rng)
}
