//! Multi-run experiment driver and result persistence.
//!
//! Runs are independent and execute in parallel; each owns a seed derived
//! from the master seed and its run index, so the assembled tables do not
//! depend on scheduling. Within one run every variant consumes the same
//! datasets, optimum, and per-agent epoch/batch assignments (paired
//! comparison); across runs everything is regenerated.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::data::{gen_classification, gen_regression, logistic_global_optimum};
use super::{msd, test_error, ClassificationScenario, ExperimentError, RegressionScenario};
use crate::federation::{
    optimal_probability_states, run_round, AgentSpec, FederationConfig, ProbabilityStates,
    RoundOptions, Variant,
};
use crate::objectives::{closed_form_wo, LogisticLoss, Model, RidgeRegressionLoss};
use crate::seeding;

// Stream namespaces under a run's seed.
const NS_RUN: u64 = 0x52554e;
const NS_DATA: u64 = 0x44415441;
const NS_VARIANT: u64 = 0x564152;

/// Per-variant result: for every iteration the metric of each run and the
/// mean across runs. `per_run[r][i]` is run `r` at iteration `i`; row 0 is
/// the initial model, row `T` the final one.
#[derive(Debug, Clone)]
pub struct MetricTable {
    pub variant: Variant,
    pub mean: Vec<f64>,
    pub per_run: Vec<Vec<f64>>,
}

impl MetricTable {
    fn from_runs(variant: Variant, per_run: Vec<Vec<f64>>) -> Self {
        let rows = per_run[0].len();
        let runs = per_run.len() as f64;
        let mean = (0..rows)
            .map(|i| per_run.iter().map(|run| run[i]).sum::<f64>() / runs)
            .collect();
        Self {
            variant,
            mean,
            per_run,
        }
    }

    pub fn iterations(&self) -> usize {
        self.mean.len()
    }

    pub fn runs(&self) -> usize {
        self.per_run.len()
    }

    /// Final-iteration metric averaged over runs.
    pub fn final_mean(&self) -> f64 {
        *self.mean.last().expect("tables have at least one row")
    }

    /// Per-run mean of the last `window` iterations (steady-state summary).
    pub fn steady_state_per_run(&self, window: usize) -> Vec<f64> {
        self.per_run
            .iter()
            .map(|run| {
                let tail = &run[run.len().saturating_sub(window)..];
                tail.iter().sum::<f64>() / tail.len() as f64
            })
            .collect()
    }
}

fn run_seed(master: u64, run: usize) -> u64 {
    seeding::derive(seeding::derive(master, NS_RUN), run as u64)
}

fn variant_seed(run_seed: u64, variant: Variant) -> u64 {
    seeding::derive(run_seed, NS_VARIANT + variant.lane())
}

/// Runs the regression benchmark for every requested variant.
pub fn run_regression_experiment(
    scenario: &RegressionScenario,
    variants: &[Variant],
) -> Result<Vec<MetricTable>, ExperimentError> {
    scenario.validate()?;
    let per_run: Vec<Vec<Vec<f64>>> = (0..scenario.runs)
        .into_par_iter()
        .map(|run| regression_run(scenario, run, variants))
        .collect::<Result<_, _>>()?;
    Ok(assemble_tables(variants, per_run))
}

fn regression_run(
    scenario: &RegressionScenario,
    run: usize,
    variants: &[Variant],
) -> Result<Vec<Vec<f64>>, ExperimentError> {
    let seed = run_seed(scenario.seed, run);
    let mut setup_rng = seeding::stream(seeding::derive(seed, NS_DATA));

    let instance = gen_regression(scenario, &mut setup_rng);
    let optimum = closed_form_wo(
        &instance.agents,
        &instance.w_star,
        &instance.noises,
        scenario.ridge,
    )?;

    use rand::Rng;
    let agents: Vec<AgentSpec<_>> = instance
        .agents
        .into_iter()
        .map(|data| {
            let epochs = setup_rng.random_range(scenario.epochs_range.0..=scenario.epochs_range.1);
            let batch = setup_rng.random_range(scenario.batch_range.0..=scenario.batch_range.1);
            AgentSpec::new(data, epochs, batch)
        })
        .collect::<Result<_, _>>()?;

    let objective = RidgeRegressionLoss::new(scenario.ridge);
    let mut traces = Vec::with_capacity(variants.len());
    for &variant in variants {
        let config = FederationConfig::new(
            scenario.agents,
            scenario.participants,
            scenario.step_size,
            scenario.iterations,
            variant,
            variant_seed(seed, variant),
        )?;
        let states = match variant {
            Variant::IsTrue => {
                optimal_probability_states(&agents, &objective, &optimum, scenario.participants)?
            }
            Variant::FedAvg | Variant::IsApprox => ProbabilityStates::uniform(&agents)?,
        };
        let mut model = Model::zeros(scenario.dim);
        let mut trace = Vec::with_capacity(scenario.iterations + 1);
        trace.push(msd(&model, &optimum)?);
        let options = RoundOptions::default();
        let mut states = states;
        for round in 0..scenario.iterations {
            let (next, _) = run_round(
                round,
                &model,
                &config,
                &agents,
                &objective,
                &mut states,
                &options,
            )?;
            model = next;
            trace.push(msd(&model, &optimum)?);
        }
        traces.push(trace);
    }
    Ok(traces)
}

/// Runs the classification benchmark for every requested variant.
pub fn run_classification_experiment(
    scenario: &ClassificationScenario,
    variants: &[Variant],
) -> Result<Vec<MetricTable>, ExperimentError> {
    scenario.validate()?;
    let per_run: Vec<Vec<Vec<f64>>> = (0..scenario.runs)
        .into_par_iter()
        .map(|run| classification_run(scenario, run, variants))
        .collect::<Result<_, _>>()?;
    Ok(assemble_tables(variants, per_run))
}

fn classification_run(
    scenario: &ClassificationScenario,
    run: usize,
    variants: &[Variant],
) -> Result<Vec<Vec<f64>>, ExperimentError> {
    let seed = run_seed(scenario.seed, run);
    let mut setup_rng = seeding::stream(seeding::derive(seed, NS_DATA));

    let instance = gen_classification(scenario, &mut setup_rng);
    let test_set = instance.test_set;

    use rand::Rng;
    let agents: Vec<AgentSpec<_>> = instance
        .agents
        .into_iter()
        .map(|data| {
            let epochs = setup_rng.random_range(scenario.epochs_range.0..=scenario.epochs_range.1);
            let batch_hi = scenario.batch_range.1.min(data.len());
            let batch = setup_rng.random_range(scenario.batch_range.0..=batch_hi);
            AgentSpec::new(data, epochs, batch)
        })
        .collect::<Result<_, _>>()?;

    let objective = LogisticLoss;
    // The logistic problem has no closed-form optimum; the true-probability
    // variant computes one numerically.
    let optimum = if variants.contains(&Variant::IsTrue) {
        Some(logistic_global_optimum(
            &agents
                .iter()
                .map(|a| a.dataset().to_vec())
                .collect::<Vec<_>>(),
            200,
        ))
    } else {
        None
    };

    let mut traces = Vec::with_capacity(variants.len());
    for &variant in variants {
        let config = FederationConfig::new(
            scenario.agents,
            scenario.participants,
            scenario.step_size,
            scenario.iterations,
            variant,
            variant_seed(seed, variant),
        )?;
        let states = match variant {
            Variant::IsTrue => optimal_probability_states(
                &agents,
                &objective,
                optimum.as_ref().expect("computed when is-true runs"),
                scenario.participants,
            )?,
            Variant::FedAvg | Variant::IsApprox => ProbabilityStates::uniform(&agents)?,
        };
        let mut model = Model::zeros(scenario.dim);
        let mut trace = Vec::with_capacity(scenario.iterations + 1);
        trace.push(test_error(&model, &test_set)?);
        let options = RoundOptions::default();
        let mut states = states;
        for round in 0..scenario.iterations {
            let (next, _) = run_round(
                round,
                &model,
                &config,
                &agents,
                &objective,
                &mut states,
                &options,
            )?;
            model = next;
            trace.push(test_error(&model, &test_set)?);
        }
        traces.push(trace);
    }
    Ok(traces)
}

fn assemble_tables(variants: &[Variant], per_run: Vec<Vec<Vec<f64>>>) -> Vec<MetricTable> {
    variants
        .iter()
        .enumerate()
        .map(|(v, &variant)| {
            let runs: Vec<Vec<f64>> = per_run.iter().map(|run| run[v].clone()).collect();
            MetricTable::from_runs(variant, runs)
        })
        .collect()
}

/// Canonical file name for a variant's results.
pub fn csv_file_name(variant: Variant) -> String {
    format!("{variant}.csv")
}

/// Writes `iteration,mean_metric,run_0,...,run_{R-1}` rows.
///
/// Floats are printed with the shortest representation that parses back to
/// the same value, so the file round-trips exactly and reruns with the same
/// seed are byte-identical.
pub fn write_metric_csv(path: &Path, table: &MetricTable) -> Result<(), ExperimentError> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "iteration,mean_metric")?;
    for r in 0..table.runs() {
        write!(out, ",run_{r}")?;
    }
    writeln!(out)?;
    for i in 0..table.iterations() {
        write!(out, "{i},{}", table.mean[i])?;
        for run in &table.per_run {
            write!(out, ",{}", run[i])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a file produced by [`write_metric_csv`] back into a table.
pub fn read_metric_csv(path: &Path, variant: Variant) -> Result<MetricTable, ExperimentError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| ExperimentError::MalformedCsv("missing header".into()))??;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 3 || columns[0] != "iteration" || columns[1] != "mean_metric" {
        return Err(ExperimentError::MalformedCsv(format!(
            "unexpected header '{header}'"
        )));
    }
    let runs = columns.len() - 2;

    let mut mean = Vec::new();
    let mut per_run: Vec<Vec<f64>> = vec![Vec::new(); runs];
    for (row, line) in lines.enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(ExperimentError::MalformedCsv(format!(
                "row {row} has {} fields, expected {}",
                fields.len(),
                columns.len()
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| ExperimentError::MalformedCsv(format!("row {row}: {e}")))
        };
        mean.push(parse(fields[1])?);
        for (r, field) in fields[2..].iter().enumerate() {
            per_run[r].push(parse(field)?);
        }
    }
    Ok(MetricTable {
        variant,
        mean,
        per_run,
    })
}

/// Writes the resolved configuration (plus anything else the caller wants to
/// pin, such as provenance) as pretty TOML.
pub fn write_metadata<M: Serialize>(path: &Path, metadata: &M) -> Result<(), ExperimentError> {
    let rendered = toml::to_string_pretty(metadata)
        .map_err(|e| ExperimentError::MalformedCsv(format!("metadata serialization: {e}")))?;
    std::fs::write(path, rendered)?;
    Ok(())
}
