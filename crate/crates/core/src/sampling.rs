//! Weighted sampling without replacement with controlled inclusion
//! probabilities.
//!
//! The central type is [`ProbabilityVector`]: normalized inclusion
//! probabilities `p` summing to one, under which a draw of `m` items should
//! include item `j` with probability exactly `m * p[j]`. [`systematic_sample`]
//! realizes such draws with a progressive-totals scan over randomly relabeled
//! indices, [`cap_and_normalize`] restores the feasibility precondition
//! `m * p[j] <= 1`, and [`sequential_wor_inclusion`] is an exact
//! small-instance oracle mapping per-trial sampling probabilities to the
//! inclusion probabilities produced by drawing sequentially without
//! replacement.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

/// Tolerance on the total mass of a probability vector.
pub const PROB_SUM_TOLERANCE: f64 = 1e-12;

/// Slack accepted when checking the feasibility bound `m * p[j] <= 1`.
const FEASIBILITY_SLACK: f64 = 1e-9;

/// Largest population [`sequential_wor_inclusion`] will enumerate.
pub const MAX_ENUMERATION_POPULATION: usize = 12;

/// Largest draw size [`sequential_wor_inclusion`] will enumerate.
pub const MAX_ENUMERATION_DRAW: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("probability at index {index} is {value}; entries must be finite and non-negative")]
    InvalidEntry { index: usize, value: f64 },
    #[error("probabilities sum to {sum}; expected 1 within {PROB_SUM_TOLERANCE:e}")]
    NotNormalized { sum: f64 },
    #[error("weights sum to {sum}; cannot normalize")]
    NonPositiveMass { sum: f64 },
    #[error("population is empty")]
    EmptyPopulation,
    #[error("sample size must be at least 1")]
    ZeroSampleSize,
    #[error("cannot draw {requested} distinct items from a population of {population}")]
    SampleTooLarge { requested: usize, population: usize },
    #[error("inclusion target {target} exceeds 1 at index {index}; run cap_and_normalize first")]
    Infeasible { index: usize, target: f64 },
    #[error("only {positive} entries are positive; cannot draw {requested} without replacement")]
    InsufficientSupport { positive: usize, requested: usize },
    #[error(
        "exact enumeration supports n <= {MAX_ENUMERATION_POPULATION}, m <= {MAX_ENUMERATION_DRAW}; got n = {n}, m = {m}"
    )]
    EnumerationTooLarge { n: usize, m: usize },
    #[error("at least one trial is required")]
    ZeroTrials,
    #[error("sample indices must be distinct; index {index} repeats")]
    DuplicateIndex { index: usize },
}

/// Normalized inclusion probabilities over a finite population.
///
/// Entries are finite, non-negative, and sum to 1 within
/// [`PROB_SUM_TOLERANCE`]. The same type serves both levels of the
/// federation: probabilities over agents and probabilities over one agent's
/// samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    probs: Vec<f64>,
}

impl ProbabilityVector {
    /// Wraps a vector that already sums to one.
    pub fn new(probs: Vec<f64>) -> Result<Self, SamplingError> {
        if probs.is_empty() {
            return Err(SamplingError::EmptyPopulation);
        }
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(SamplingError::InvalidEntry { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(SamplingError::NotNormalized { sum });
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights into a probability vector.
    pub fn normalized(weights: &[f64]) -> Result<Self, SamplingError> {
        if weights.is_empty() {
            return Err(SamplingError::EmptyPopulation);
        }
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(SamplingError::InvalidEntry { index, value });
            }
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(SamplingError::NonPositiveMass { sum });
        }
        Ok(Self {
            probs: weights.iter().map(|w| w / sum).collect(),
        })
    }

    /// Uniform probabilities over `n` items.
    pub fn uniform(n: usize) -> Result<Self, SamplingError> {
        if n == 0 {
            return Err(SamplingError::EmptyPopulation);
        }
        Ok(Self {
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.probs[index]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.probs.iter().copied()
    }

    /// True when `m * p[j] <= 1` holds for every entry (within slack).
    pub fn is_feasible_for(&self, sample_size: usize) -> bool {
        self.probs
            .iter()
            .all(|&p| sample_size as f64 * p <= 1.0 + FEASIBILITY_SLACK)
    }
}

/// A without-replacement draw: distinct indices, stored in ascending order.
///
/// Holds the selected agent set at the server level and the mini-batch at the
/// data level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleDraw {
    indices: Vec<usize>,
}

impl SampleDraw {
    /// Builds a draw from arbitrary distinct indices.
    pub fn new(mut indices: Vec<usize>) -> Result<Self, SamplingError> {
        if indices.is_empty() {
            return Err(SamplingError::ZeroSampleSize);
        }
        indices.sort_unstable();
        for pair in indices.windows(2) {
            if pair[0] == pair[1] {
                return Err(SamplingError::DuplicateIndex { index: pair[0] });
            }
        }
        Ok(Self { indices })
    }

    fn from_sorted(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self { indices }
    }

    /// Selected indices in ascending order.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn sample_size(&self) -> usize {
        self.indices.len()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }
}

/// Restores feasibility for a draw of `m` items by iterative capping.
///
/// Entries with `m * p[j] > 1` are pinned at `1/m` and the remaining mass is
/// redistributed proportionally over the free entries, repeating until no
/// entry exceeds the cap. The relative ordering of entries is preserved. If
/// the free entries are all zero while free mass remains (possible when
/// `m = n` with zero-probability entries), the free mass is spread evenly so
/// the result stays a valid draw distribution.
pub fn cap_and_normalize(
    probs: &ProbabilityVector,
    sample_size: usize,
) -> Result<ProbabilityVector, SamplingError> {
    let n = probs.len();
    if sample_size == 0 {
        return Err(SamplingError::ZeroSampleSize);
    }
    if sample_size > n {
        return Err(SamplingError::SampleTooLarge {
            requested: sample_size,
            population: n,
        });
    }

    let cap = 1.0 / sample_size as f64;
    let mut values = probs.as_slice().to_vec();
    let mut pinned = vec![false; n];

    loop {
        let mut newly_pinned = false;
        for j in 0..n {
            if !pinned[j] && values[j] > cap {
                values[j] = cap;
                pinned[j] = true;
                newly_pinned = true;
            }
        }
        if !newly_pinned {
            break;
        }

        let pinned_count = pinned.iter().filter(|&&p| p).count();
        // Fewer than m entries can ever pin: m pins would need total mass > 1.
        let free_mass = 1.0 - pinned_count as f64 * cap;
        let residual: f64 = (0..n).filter(|&j| !pinned[j]).map(|j| values[j]).sum();
        if residual > 0.0 {
            let scale = free_mass / residual;
            for j in 0..n {
                if !pinned[j] {
                    values[j] *= scale;
                }
            }
        } else if free_mass > 0.0 {
            let free_count = n - pinned_count;
            for j in 0..n {
                if !pinned[j] {
                    values[j] = free_mass / free_count as f64;
                }
            }
        }
    }

    ProbabilityVector::new(values)
}

/// Progressive-totals scan: selects every position whose cumulative interval
/// contains one of the grid points `offset, offset + 1, ..., offset + m - 1`.
///
/// The final cumulative total is forced to exactly `m` so that float drift in
/// the partial sums can never lose the last grid point; this guarantees the
/// scan returns exactly `m` positions for any offset in `[0, 1)`.
fn progressive_totals_scan(probs: &[f64], sample_size: usize, offset: f64) -> Vec<usize> {
    let n = probs.len();
    let m = sample_size as f64;
    let mut selected = Vec::with_capacity(sample_size);
    let mut point = offset;
    let mut cum = 0.0;
    for (pos, &p) in probs.iter().enumerate() {
        cum = if pos + 1 == n { m } else { cum + m * p };
        if selected.len() < sample_size && point < cum {
            selected.push(pos);
            point += 1.0;
        }
    }
    debug_assert_eq!(selected.len(), sample_size);
    selected
}

/// Draws `m` distinct indices so that index `j` is included with marginal
/// probability `m * p[j]`.
///
/// A fresh uniform relabeling of the indices is applied before forming the
/// progressive totals on every draw, then mapped back; this decorrelates the
/// joint inclusion of adjacent indices across draws without changing the
/// marginals. One uniform offset `d` in `[0, 1)` is drawn per call and the
/// integer shifts are implicit in a single O(n) interval scan.
pub fn systematic_sample<R: Rng + ?Sized>(
    probs: &ProbabilityVector,
    sample_size: usize,
    rng: &mut R,
) -> Result<SampleDraw, SamplingError> {
    let n = probs.len();
    if sample_size == 0 {
        return Err(SamplingError::ZeroSampleSize);
    }
    if sample_size > n {
        return Err(SamplingError::SampleTooLarge {
            requested: sample_size,
            population: n,
        });
    }
    for (index, &p) in probs.as_slice().iter().enumerate() {
        let target = sample_size as f64 * p;
        if target > 1.0 + FEASIBILITY_SLACK {
            return Err(SamplingError::Infeasible { index, target });
        }
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let offset: f64 = rng.random();

    let permuted: Vec<f64> = perm.iter().map(|&j| probs.get(j)).collect();
    let positions = progressive_totals_scan(&permuted, sample_size, offset);

    let mut indices: Vec<usize> = positions.into_iter().map(|pos| perm[pos]).collect();
    indices.sort_unstable();
    Ok(SampleDraw::from_sorted(indices))
}

/// Exact normalized inclusion probabilities of sequential draw-without-
/// replacement under per-trial sampling probabilities `sampling_probs`.
///
/// Enumerates every ordered outcome sequence of length `m`, weighting each
/// trial by the remaining (renormalized) mass, and returns
/// `P(j in draw) / m`. Guarded to small instances; this is a verification
/// oracle, not a production sampler.
pub fn sequential_wor_inclusion(
    sampling_probs: &ProbabilityVector,
    sample_size: usize,
) -> Result<ProbabilityVector, SamplingError> {
    let n = sampling_probs.len();
    if sample_size == 0 {
        return Err(SamplingError::ZeroSampleSize);
    }
    if sample_size > n {
        return Err(SamplingError::SampleTooLarge {
            requested: sample_size,
            population: n,
        });
    }
    if n > MAX_ENUMERATION_POPULATION || sample_size > MAX_ENUMERATION_DRAW {
        return Err(SamplingError::EnumerationTooLarge { n, m: sample_size });
    }
    let positive = sampling_probs.iter().filter(|&p| p > 0.0).count();
    if positive < sample_size {
        return Err(SamplingError::InsufficientSupport {
            positive,
            requested: sample_size,
        });
    }

    fn descend(
        probs: &[f64],
        used: &mut [bool],
        chosen: &mut Vec<usize>,
        remaining: usize,
        branch_prob: f64,
        residual: f64,
        inclusion: &mut [f64],
    ) {
        if remaining == 0 {
            for &j in chosen.iter() {
                inclusion[j] += branch_prob;
            }
            return;
        }
        for j in 0..probs.len() {
            if used[j] || probs[j] <= 0.0 || residual <= 0.0 {
                continue;
            }
            let next_prob = branch_prob * probs[j] / residual;
            used[j] = true;
            chosen.push(j);
            descend(
                probs,
                used,
                chosen,
                remaining - 1,
                next_prob,
                residual - probs[j],
                inclusion,
            );
            chosen.pop();
            used[j] = false;
        }
    }

    let mut inclusion = vec![0.0; n];
    let mut used = vec![false; n];
    let mut chosen = Vec::with_capacity(sample_size);
    descend(
        sampling_probs.as_slice(),
        &mut used,
        &mut chosen,
        sample_size,
        1.0,
        1.0,
        &mut inclusion,
    );

    for value in inclusion.iter_mut() {
        *value /= sample_size as f64;
    }
    ProbabilityVector::new(inclusion)
}

/// Per-index selection frequency of `sampler` over independent draws.
pub fn empirical_inclusion<R, F>(
    mut sampler: F,
    probs: &ProbabilityVector,
    sample_size: usize,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<f64>, SamplingError>
where
    R: Rng + ?Sized,
    F: FnMut(&ProbabilityVector, usize, &mut R) -> Result<SampleDraw, SamplingError>,
{
    if trials == 0 {
        return Err(SamplingError::ZeroTrials);
    }
    let mut counts = vec![0u64; probs.len()];
    for _ in 0..trials {
        let draw = sampler(probs, sample_size, rng)?;
        for index in draw.iter() {
            counts[index] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / trials as f64)
        .collect())
}
