//! Flag and config-file handling with per-field provenance.
//!
//! Precedence is total and simple: flag > file > default. Every resolved
//! field records which layer supplied it, and the record lands in the
//! run's metadata file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use fedsim_core::{ClassificationScenario, RegressionScenario, Variant};

use crate::CliError;

/// Variant selector exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantChoice {
    Fedavg,
    IsTrue,
    IsApprox,
    All,
}

impl VariantChoice {
    pub fn variants(self) -> Vec<Variant> {
        match self {
            VariantChoice::Fedavg => vec![Variant::FedAvg],
            VariantChoice::IsTrue => vec![Variant::IsTrue],
            VariantChoice::IsApprox => vec![Variant::IsApprox],
            VariantChoice::All => Variant::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
pub struct RegressionArgs {
    /// TOML config file; flags override file values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of agents K
    #[arg(long)]
    pub agents: Option<usize>,
    /// Samples per agent N_k
    #[arg(long)]
    pub samples_per_agent: Option<usize>,
    /// Feature dimension M
    #[arg(long)]
    pub dim: Option<usize>,
    /// Observation noise variance
    #[arg(long)]
    pub noise_var: Option<f64>,
    /// Ridge coefficient folded into every per-sample loss
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Agents selected per round L
    #[arg(long)]
    pub participants: Option<usize>,
    /// Smallest per-agent epoch count
    #[arg(long)]
    pub epochs_min: Option<usize>,
    /// Largest per-agent epoch count
    #[arg(long)]
    pub epochs_max: Option<usize>,
    /// Smallest per-agent batch size
    #[arg(long)]
    pub batch_min: Option<usize>,
    /// Largest per-agent batch size
    #[arg(long)]
    pub batch_max: Option<usize>,
    /// Step size mu
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Independent runs to average
    #[arg(long)]
    pub runs: Option<usize>,
    /// Rounds per run T
    #[arg(long)]
    pub iters: Option<usize>,
    /// Master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Draw all features from one shared distribution (IID ablation)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub iid_features: Option<bool>,
    /// Algorithm variant to run
    #[arg(long, value_enum)]
    pub variant: Option<VariantChoice>,
    /// Output directory for CSV results and metadata
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassificationArgs {
    /// TOML config file; flags override file values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of agents K
    #[arg(long)]
    pub agents: Option<usize>,
    /// Smallest per-agent dataset size
    #[arg(long)]
    pub samples_min: Option<usize>,
    /// Largest per-agent dataset size
    #[arg(long)]
    pub samples_max: Option<usize>,
    /// Feature dimension M
    #[arg(long)]
    pub dim: Option<usize>,
    /// Scale of the per-agent feature means
    #[arg(long)]
    pub mean_scale: Option<f64>,
    /// Smallest per-agent feature standard deviation
    #[arg(long)]
    pub sigma_min: Option<f64>,
    /// Largest per-agent feature standard deviation
    #[arg(long)]
    pub sigma_max: Option<f64>,
    /// Per-agent generating-model drift radius, relative to |w*|
    #[arg(long)]
    pub drift: Option<f64>,
    /// Held-out test samples
    #[arg(long)]
    pub test_samples: Option<usize>,
    /// Agents selected per round L
    #[arg(long)]
    pub participants: Option<usize>,
    /// Smallest per-agent epoch count
    #[arg(long)]
    pub epochs_min: Option<usize>,
    /// Largest per-agent epoch count
    #[arg(long)]
    pub epochs_max: Option<usize>,
    /// Smallest per-agent batch size
    #[arg(long)]
    pub batch_min: Option<usize>,
    /// Largest per-agent batch size
    #[arg(long)]
    pub batch_max: Option<usize>,
    /// Step size mu
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Independent runs to average
    #[arg(long)]
    pub runs: Option<usize>,
    /// Rounds per run T
    #[arg(long)]
    pub iters: Option<usize>,
    /// Master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Algorithm variant to run
    #[arg(long, value_enum)]
    pub variant: Option<VariantChoice>,
    /// Output directory for CSV results and metadata
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `[regression]` table of a config file; every field optional, kebab-cased
/// to mirror the flags.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RegressionFile {
    pub agents: Option<usize>,
    pub samples_per_agent: Option<usize>,
    pub dim: Option<usize>,
    pub noise_var: Option<f64>,
    pub ridge: Option<f64>,
    pub participants: Option<usize>,
    pub epochs_min: Option<usize>,
    pub epochs_max: Option<usize>,
    pub batch_min: Option<usize>,
    pub batch_max: Option<usize>,
    pub step_size: Option<f64>,
    pub runs: Option<usize>,
    pub iters: Option<usize>,
    pub seed: Option<u64>,
    pub iid_features: Option<bool>,
    pub variant: Option<VariantChoice>,
    pub out: Option<PathBuf>,
}

/// `[classification]` table of a config file.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ClassificationFile {
    pub agents: Option<usize>,
    pub samples_min: Option<usize>,
    pub samples_max: Option<usize>,
    pub dim: Option<usize>,
    pub mean_scale: Option<f64>,
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    pub drift: Option<f64>,
    pub test_samples: Option<usize>,
    pub participants: Option<usize>,
    pub epochs_min: Option<usize>,
    pub epochs_max: Option<usize>,
    pub batch_min: Option<usize>,
    pub batch_max: Option<usize>,
    pub step_size: Option<f64>,
    pub runs: Option<usize>,
    pub iters: Option<usize>,
    pub seed: Option<u64>,
    pub variant: Option<VariantChoice>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub regression: Option<RegressionFile>,
    pub classification: Option<ClassificationFile>,
}

pub fn load_config_file(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
}

/// Fully merged settings for one subcommand invocation.
#[derive(Debug)]
pub struct Resolved<S> {
    pub scenario: S,
    pub variants: Vec<Variant>,
    pub out_dir: PathBuf,
    pub provenance: BTreeMap<String, String>,
}

/// Everything the metadata file pins about a finished invocation.
#[derive(Debug, Serialize)]
pub struct Metadata<'a, S: Serialize> {
    pub command: &'a str,
    pub variants: Vec<String>,
    pub scenario: &'a S,
    pub provenance: &'a BTreeMap<String, String>,
}

struct Merger {
    provenance: BTreeMap<String, String>,
}

impl Merger {
    fn new() -> Self {
        Self {
            provenance: BTreeMap::new(),
        }
    }

    fn pick<T>(&mut self, name: &str, flag: Option<T>, file: Option<T>, default: T) -> T {
        let (value, source) = match (flag, file) {
            (Some(v), _) => (v, "flag"),
            (None, Some(v)) => (v, "file"),
            (None, None) => (default, "default"),
        };
        self.provenance.insert(name.to_string(), source.to_string());
        value
    }
}

pub fn resolve_regression(args: &RegressionArgs) -> Result<Resolved<RegressionScenario>, CliError> {
    let file = match &args.config {
        Some(path) => load_config_file(path)?.regression.unwrap_or_default(),
        None => RegressionFile::default(),
    };
    let defaults = RegressionScenario::default();
    let mut m = Merger::new();

    let scenario = RegressionScenario {
        agents: m.pick("agents", args.agents, file.agents, defaults.agents),
        samples_per_agent: m.pick(
            "samples-per-agent",
            args.samples_per_agent,
            file.samples_per_agent,
            defaults.samples_per_agent,
        ),
        dim: m.pick("dim", args.dim, file.dim, defaults.dim),
        noise_var: m.pick(
            "noise-var",
            args.noise_var,
            file.noise_var,
            defaults.noise_var,
        ),
        ridge: m.pick("ridge", args.ridge, file.ridge, defaults.ridge),
        participants: m.pick(
            "participants",
            args.participants,
            file.participants,
            defaults.participants,
        ),
        epochs_range: (
            m.pick(
                "epochs-min",
                args.epochs_min,
                file.epochs_min,
                defaults.epochs_range.0,
            ),
            m.pick(
                "epochs-max",
                args.epochs_max,
                file.epochs_max,
                defaults.epochs_range.1,
            ),
        ),
        batch_range: (
            m.pick(
                "batch-min",
                args.batch_min,
                file.batch_min,
                defaults.batch_range.0,
            ),
            m.pick(
                "batch-max",
                args.batch_max,
                file.batch_max,
                defaults.batch_range.1,
            ),
        ),
        step_size: m.pick(
            "step-size",
            args.step_size,
            file.step_size,
            defaults.step_size,
        ),
        runs: m.pick("runs", args.runs, file.runs, defaults.runs),
        iterations: m.pick("iters", args.iters, file.iters, defaults.iterations),
        iid_features: m.pick(
            "iid-features",
            args.iid_features,
            file.iid_features,
            defaults.iid_features,
        ),
        seed: m.pick("seed", args.seed, file.seed, defaults.seed),
    };
    let variants = m
        .pick("variant", args.variant, file.variant, VariantChoice::All)
        .variants();
    let out_dir = m.pick(
        "out",
        args.out.clone(),
        file.out,
        PathBuf::from("results/regression"),
    );
    Ok(Resolved {
        scenario,
        variants,
        out_dir,
        provenance: m.provenance,
    })
}

pub fn resolve_classification(
    args: &ClassificationArgs,
) -> Result<Resolved<ClassificationScenario>, CliError> {
    let file = match &args.config {
        Some(path) => load_config_file(path)?.classification.unwrap_or_default(),
        None => ClassificationFile::default(),
    };
    let defaults = ClassificationScenario::default();
    let mut m = Merger::new();

    let scenario = ClassificationScenario {
        agents: m.pick("agents", args.agents, file.agents, defaults.agents),
        samples_range: (
            m.pick(
                "samples-min",
                args.samples_min,
                file.samples_min,
                defaults.samples_range.0,
            ),
            m.pick(
                "samples-max",
                args.samples_max,
                file.samples_max,
                defaults.samples_range.1,
            ),
        ),
        dim: m.pick("dim", args.dim, file.dim, defaults.dim),
        mean_scale: m.pick(
            "mean-scale",
            args.mean_scale,
            file.mean_scale,
            defaults.mean_scale,
        ),
        sigma_range: (
            m.pick(
                "sigma-min",
                args.sigma_min,
                file.sigma_min,
                defaults.sigma_range.0,
            ),
            m.pick(
                "sigma-max",
                args.sigma_max,
                file.sigma_max,
                defaults.sigma_range.1,
            ),
        ),
        drift: m.pick("drift", args.drift, file.drift, defaults.drift),
        test_samples: m.pick(
            "test-samples",
            args.test_samples,
            file.test_samples,
            defaults.test_samples,
        ),
        participants: m.pick(
            "participants",
            args.participants,
            file.participants,
            defaults.participants,
        ),
        epochs_range: (
            m.pick(
                "epochs-min",
                args.epochs_min,
                file.epochs_min,
                defaults.epochs_range.0,
            ),
            m.pick(
                "epochs-max",
                args.epochs_max,
                file.epochs_max,
                defaults.epochs_range.1,
            ),
        ),
        batch_range: (
            m.pick(
                "batch-min",
                args.batch_min,
                file.batch_min,
                defaults.batch_range.0,
            ),
            m.pick(
                "batch-max",
                args.batch_max,
                file.batch_max,
                defaults.batch_range.1,
            ),
        ),
        step_size: m.pick(
            "step-size",
            args.step_size,
            file.step_size,
            defaults.step_size,
        ),
        runs: m.pick("runs", args.runs, file.runs, defaults.runs),
        iterations: m.pick("iters", args.iters, file.iters, defaults.iterations),
        seed: m.pick("seed", args.seed, file.seed, defaults.seed),
    };
    let variants = m
        .pick("variant", args.variant, file.variant, VariantChoice::All)
        .variants();
    let out_dir = m.pick(
        "out",
        args.out.clone(),
        file.out,
        PathBuf::from("results/classification"),
    );
    Ok(Resolved {
        scenario,
        variants,
        out_dir,
        provenance: m.provenance,
    })
}
