//! `fedsim`: run the federated importance-sampling benchmarks and the
//! statistical self-checks from the command line.

mod config;

use std::fmt;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use fedsim_core::experiments::{
    csv_file_name, gen_regression, run_classification_experiment, run_regression_experiment,
    write_metadata, write_metric_csv, MetricTable, RegressionScenario,
};
use fedsim_core::federation::{
    optimal_probability_states, AgentSpec, FederationConfig, GradientNoiseProbe, ProbabilityStates,
    Variant,
};
use fedsim_core::objectives::{closed_form_wo, Model, RidgeRegressionLoss};
use fedsim_core::sampling::{
    cap_and_normalize, empirical_inclusion, systematic_sample, ProbabilityVector,
};
use fedsim_core::{seeding, ExperimentError};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime error: {msg}"),
            CliError::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(error: ExperimentError) -> Self {
        match error {
            ExperimentError::InvalidScenario(msg) => CliError::Config(msg),
            ExperimentError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Federated averaging with two-level importance sampling: synthetic benchmarks and statistical self-checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ridge-regression benchmark: squared deviation from the closed-form optimum
    Regression(config::RegressionArgs),
    /// Logistic-classification benchmark: percent error on a held-out test set
    Classification(config::ClassificationArgs),
    /// Statistical self-checks of the sampler and the gradient estimator
    Verify(VerifyArgs),
}

#[derive(Args)]
struct VerifyArgs {
    /// Draws per sampler-inclusion instance
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    /// Draws for the gradient-noise zero-mean check
    #[arg(long, default_value_t = 10_000)]
    noise_draws: usize,
    /// Seed for both checks
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Regression(args) => run_regression(&args),
        Command::Classification(args) => run_classification(&args),
        Command::Verify(args) => run_verify(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(error.exit_code())
        }
    }
}

fn run_regression(args: &config::RegressionArgs) -> Result<(), CliError> {
    let resolved = config::resolve_regression(args)?;
    resolved.scenario.validate().map_err(CliError::from)?;
    let tables = run_regression_experiment(&resolved.scenario, &resolved.variants)?;
    emit(
        "regression",
        &resolved.scenario,
        &resolved,
        &tables,
        "steady-state MSD (mean of last 50 iterations)",
        |table| {
            let steady = table.steady_state_per_run(50);
            steady.iter().sum::<f64>() / steady.len() as f64
        },
    )
}

fn run_classification(args: &config::ClassificationArgs) -> Result<(), CliError> {
    let resolved = config::resolve_classification(args)?;
    resolved.scenario.validate().map_err(CliError::from)?;
    let tables = run_classification_experiment(&resolved.scenario, &resolved.variants)?;
    emit(
        "classification",
        &resolved.scenario,
        &resolved,
        &tables,
        "final mean test error (%)",
        |table| table.final_mean(),
    )
}

fn emit<S: serde::Serialize, M: Fn(&MetricTable) -> f64>(
    command: &str,
    scenario: &S,
    resolved: &config::Resolved<S>,
    tables: &[MetricTable],
    summary_label: &str,
    summary: M,
) -> Result<(), CliError> {
    std::fs::create_dir_all(&resolved.out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", resolved.out_dir.display())))?;
    for table in tables {
        let path = resolved.out_dir.join(csv_file_name(table.variant));
        write_metric_csv(&path, table)?;
        println!(
            "{:10} {summary_label}: {:.6e}  -> {}",
            table.variant.to_string(),
            summary(table),
            path.display()
        );
    }
    let metadata = config::Metadata {
        command,
        variants: tables.iter().map(|t| t.variant.to_string()).collect(),
        scenario,
        provenance: &resolved.provenance,
    };
    let meta_path = resolved.out_dir.join("metadata.toml");
    write_metadata(&meta_path, &metadata)?;
    println!("metadata -> {}", meta_path.display());
    Ok(())
}

/// Inclusion-probability check: on seeded random feasible instances, the
/// systematic sampler's empirical frequencies must match `m * p` within 0.01.
fn verify_inclusion(trials: usize, seed: u64) -> Result<bool, CliError> {
    let mut rng = seeding::stream(seeding::derive(seed, 0x5601));
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(5..=50);
        let m = rng.random_range(1..=n);
        let weights: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().ln()).collect();
        let raw = ProbabilityVector::normalized(&weights)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let probs = cap_and_normalize(&raw, m).map_err(|e| CliError::Runtime(e.to_string()))?;
        let freq = empirical_inclusion(systematic_sample, &probs, m, trials, &mut rng)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        for (j, f) in freq.iter().enumerate() {
            worst = worst.max((f - m as f64 * probs.get(j)).abs());
        }
    }
    let pass = worst <= 0.01;
    println!(
        "sampler inclusion: max |freq - m*p| = {worst:.5} over 20 instances x {trials} draws (tolerance 0.01) ... {}",
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(pass)
}

/// Gradient-noise check: the round estimator's noise is zero-mean under
/// uniform and under optimal probabilities (3 standard errors).
fn verify_noise(draws: usize, seed: u64) -> Result<bool, CliError> {
    let scenario = RegressionScenario {
        agents: 20,
        samples_per_agent: 50,
        dim: 10,
        participants: 5,
        noise_var: 1.0,
        runs: 1,
        iterations: 1,
        seed,
        ..Default::default()
    };
    let mut rng = seeding::stream(seeding::derive(seed, 0x5602));
    let instance = gen_regression(&scenario, &mut rng);
    let optimum = closed_form_wo(
        &instance.agents,
        &instance.w_star,
        &instance.noises,
        scenario.ridge,
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    let agents: Vec<AgentSpec<_>> = instance
        .agents
        .into_iter()
        .map(|data| {
            let epochs = rng.random_range(1..=5);
            let batch = rng.random_range(1..=10);
            AgentSpec::new(data, epochs, batch)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let loss = RidgeRegressionLoss::new(scenario.ridge);
    let federation = FederationConfig::new(20, 5, 0.01, 1, Variant::IsTrue, seed)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let uniform =
        ProbabilityStates::uniform(&agents).map_err(|e| CliError::Runtime(e.to_string()))?;
    let optimal = optimal_probability_states(&agents, &loss, &optimum, 5)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let model = &optimum + Model::from_element(scenario.dim, 0.2);
    let mut all_pass = true;
    for (name, states) in [("uniform", &uniform), ("optimal", &optimal)] {
        let probe = GradientNoiseProbe::new(&model, &federation, &agents, &loss, states)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let mut sum = Model::zeros(scenario.dim);
        let mut samples = Vec::with_capacity(draws);
        for _ in 0..draws {
            let s = probe
                .sample(&mut rng)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            sum += &s;
            samples.push(s);
        }
        let mean = sum / draws as f64;
        let variance = samples
            .iter()
            .map(|s| (s - &mean).norm_squared())
            .sum::<f64>()
            / draws as f64;
        let bound = 3.0 * variance.sqrt() / (draws as f64).sqrt();
        let pass = mean.norm() <= bound;
        all_pass &= pass;
        println!(
            "gradient noise ({name}): |mean| = {:.4e} over {draws} draws (3-sigma bound {:.4e}) ... {}",
            mean.norm(),
            bound,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(all_pass)
}

fn run_verify(args: &VerifyArgs) -> Result<(), CliError> {
    if args.trials == 0 || args.noise_draws == 0 {
        return Err(CliError::Config(
            "trials and noise-draws must be at least 1".into(),
        ));
    }
    let inclusion = verify_inclusion(args.trials, args.seed)?;
    let noise = verify_noise(args.noise_draws, args.seed)?;
    if inclusion && noise {
        println!("verify: PASS");
        Ok(())
    } else {
        println!("verify: FAIL");
        Err(CliError::Runtime("verification checks failed".into()))
    }
}
