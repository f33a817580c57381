//! Command-line and config-file parsing.
//!
//! A config file is a flat JSON object whose keys mirror the long flags
//! (`n`, `gamma`, `gamma_rule`, `l`, `trials`, `seed`, `output`, `format`,
//! `plot`). Flags given on the command line win over the file.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

pub const DEFAULT_TRIALS: u64 = 100_000;
pub const DEFAULT_SEED: u64 = 42;
pub const THREADS_ENV: &str = "STABILITY_LAB_THREADS";

#[derive(Debug, Error)]
pub enum ConfigError {
    /// Help or version output; not an error for the exit code.
    #[error("{0}")]
    Display(String),
    #[error("{0}")]
    Usage(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("missing required field `{0}`")]
    Missing(&'static str),
    #[error("config file {path}: {reason}")]
    File { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    VerifyLemmas,
    Certify,
    Trial,
    Estimate,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::VerifyLemmas => "verify-lemmas",
            Command::Certify => "certify",
            Command::Trial => "trial",
            Command::Estimate => "estimate",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// How γ is chosen for each sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaSpec {
    Fixed(f64),
    /// `γ = L/√n`.
    LOverSqrtN,
}

impl GammaSpec {
    pub fn parse_rule(rule: &str) -> Result<Self, ConfigError> {
        let compact: String = rule.chars().filter(|c| !c.is_whitespace()).collect();
        match compact.to_ascii_lowercase().as_str() {
            "l/sqrt(n)" => Ok(GammaSpec::LOverSqrtN),
            _ => Err(ConfigError::Invalid {
                field: "gamma-rule",
                reason: format!("unknown rule {rule:?}; supported: L/sqrt(n)"),
            }),
        }
    }

    pub fn resolve(&self, n: usize, l: f64) -> f64 {
        match *self {
            GammaSpec::Fixed(g) => g,
            GammaSpec::LOverSqrtN => l / (n as f64).sqrt(),
        }
    }
}

impl fmt::Display for GammaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaSpec::Fixed(g) => write!(f, "--gamma {g}"),
            GammaSpec::LOverSqrtN => write!(f, "--gamma-rule L/sqrt(n)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub n_values: Vec<usize>,
    pub gamma: Option<GammaSpec>,
    pub l: Option<f64>,
    pub trials: u64,
    pub master_seed: u64,
    pub output_path: Option<PathBuf>,
    pub output_format: OutputFormat,
    pub plot: Option<PathBuf>,
    /// Worker cap; `None` uses the machine's parallelism.
    pub threads: Option<usize>,
}

impl RunConfig {
    /// `(n, γ, L)` for every requested sample size.
    pub fn resolved(&self) -> Result<Vec<(usize, f64, f64)>, ConfigError> {
        let gamma = self.gamma.ok_or(ConfigError::Missing("gamma"))?;
        let l = self.l.ok_or(ConfigError::Missing("l"))?;
        if self.n_values.is_empty() {
            return Err(ConfigError::Missing("n"));
        }
        Ok(self.n_values.iter().map(|&n| (n, gamma.resolve(n, l), l)).collect())
    }

    /// A command line reproducing this run.
    pub fn reproduction(&self) -> String {
        let mut parts = vec!["stability-lab".to_string(), self.command.name().to_string()];
        if !self.n_values.is_empty() {
            let ns: Vec<String> = self.n_values.iter().map(|n| n.to_string()).collect();
            parts.push(format!("--n {}", ns.join(",")));
        }
        if let Some(g) = self.gamma {
            parts.push(g.to_string());
        }
        if let Some(l) = self.l {
            parts.push(format!("--l {l}"));
        }
        parts.push(format!("--trials {}", self.trials));
        parts.push(format!("--seed {}", self.master_seed));
        parts.join(" ")
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "stability-lab",
    version,
    about = "Hard-case simulations for generalization of uniformly stable algorithms"
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Debug, Subcommand)]
enum CliCommand {
    /// Check the anti-concentration inequalities exactly and by simulation
    VerifyLemmas(Flags),
    /// Certify the stability coefficient and the loss bound
    Certify(Flags),
    /// Run and print a single trial
    Trial(Flags),
    /// Estimate event probabilities for one sample size
    Estimate(Flags),
    /// Estimate event probabilities over several sample sizes
    Sweep(Flags),
}

#[derive(Debug, Default, clap::Args)]
struct Flags {
    /// JSON file with default values for the flags below
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sample size(s), comma separated
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Target stability γ
    #[arg(long)]
    gamma: Option<f64>,
    /// Rule for γ as a function of n and L; only `L/sqrt(n)`
    #[arg(long = "gamma-rule")]
    gamma_rule: Option<String>,
    /// Target loss bound L
    #[arg(long)]
    l: Option<f64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when absent
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// SVG plot path (sweep only)
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default, deserialize_with = "de_n_values")]
    n: Option<Vec<usize>>,
    gamma: Option<f64>,
    gamma_rule: Option<String>,
    l: Option<f64>,
    trials: Option<u64>,
    seed: Option<u64>,
    output: Option<PathBuf>,
    format: Option<OutputFormat>,
    plot: Option<PathBuf>,
}

fn de_n_values<'de, D: Deserializer<'de>>(de: D) -> Result<Option<Vec<usize>>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        One(usize),
        Many(Vec<usize>),
        Text(String),
    }
    let raw = Option::<Raw>::deserialize(de)?;
    Ok(match raw {
        None => None,
        Some(Raw::One(n)) => Some(vec![n]),
        Some(Raw::Many(v)) => Some(v),
        Some(Raw::Text(s)) => Some(
            s.split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(serde::de::Error::custom)?,
        ),
    })
}

fn load_file(path: &PathBuf) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| ConfigError::File {
        path: path.clone(),
        reason: e.to_string(),
    })
}

fn threads_from_env(value: Option<String>) -> Result<Option<usize>, ConfigError> {
    match value {
        None => Ok(None),
        Some(v) if v.trim().is_empty() => Ok(None),
        Some(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(ConfigError::Invalid {
                field: THREADS_ENV,
                reason: format!("expected a positive integer, got {v:?}"),
            }),
        },
    }
}

/// Parses `argv` (program name first) plus the thread cap from the
/// environment.
pub fn parse_config<I, T>(args: I) -> Result<RunConfig, ConfigError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    parse_config_with_env(args, std::env::var(THREADS_ENV).ok())
}

pub fn parse_config_with_env<I, T>(args: I, threads_env: Option<String>) -> Result<RunConfig, ConfigError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        use clap::error::ErrorKind;
        match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ConfigError::Display(e.to_string()),
            ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => ConfigError::Usage(e.to_string()),
            _ => ConfigError::Usage(e.to_string()),
        }
    })?;
    let (command, flags) = match cli.command {
        CliCommand::VerifyLemmas(f) => (Command::VerifyLemmas, f),
        CliCommand::Certify(f) => (Command::Certify, f),
        CliCommand::Trial(f) => (Command::Trial, f),
        CliCommand::Estimate(f) => (Command::Estimate, f),
        CliCommand::Sweep(f) => (Command::Sweep, f),
    };
    let file = match &flags.config {
        Some(path) => load_file(path)?,
        None => FileConfig::default(),
    };

    let gamma = match (flags.gamma, flags.gamma_rule.as_deref()) {
        (Some(_), Some(_)) => {
            return Err(ConfigError::Usage(
                "--gamma and --gamma-rule are mutually exclusive".into(),
            ))
        }
        (Some(g), None) => Some(GammaSpec::Fixed(g)),
        (None, Some(rule)) => Some(GammaSpec::parse_rule(rule)?),
        (None, None) => match (file.gamma, file.gamma_rule.as_deref()) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid {
                    field: "gamma",
                    reason: "config sets both gamma and gamma_rule".into(),
                })
            }
            (Some(g), None) => Some(GammaSpec::Fixed(g)),
            (None, Some(rule)) => Some(GammaSpec::parse_rule(rule)?),
            (None, None) => None,
        },
    };

    let config = RunConfig {
        command,
        n_values: flags.n.or(file.n).unwrap_or_default(),
        gamma,
        l: flags.l.or(file.l),
        trials: flags.trials.or(file.trials).unwrap_or(DEFAULT_TRIALS),
        master_seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        output_path: flags.output.or(file.output),
        output_format: flags.format.or(file.format).unwrap_or_default(),
        plot: flags.plot.or(file.plot),
        threads: threads_from_env(threads_env)?,
    };
    validate(&config)?;
    Ok(config)
}

fn validate(config: &RunConfig) -> Result<(), ConfigError> {
    if config.n_values.contains(&0) {
        return Err(ConfigError::Invalid {
            field: "n",
            reason: "sample sizes must be positive".into(),
        });
    }
    if config.trials == 0 {
        return Err(ConfigError::Invalid {
            field: "trials",
            reason: "must be positive".into(),
        });
    }
    if config.plot.is_some() && config.command != Command::Sweep {
        return Err(ConfigError::Invalid {
            field: "plot",
            reason: "only the sweep command draws plots".into(),
        });
    }
    if config.command == Command::VerifyLemmas {
        return Ok(());
    }

    let l = config.l.ok_or(ConfigError::Missing("l"))?;
    if !(l.is_finite() && l > 0.0) {
        return Err(ConfigError::Invalid {
            field: "l",
            reason: format!("must be positive, got {l}"),
        });
    }
    if config.gamma.is_none() {
        return Err(ConfigError::Missing("gamma"));
    }
    if config.n_values.is_empty() {
        return Err(ConfigError::Missing("n"));
    }
    if matches!(config.command, Command::Estimate | Command::Trial) && config.n_values.len() != 1 {
        return Err(ConfigError::Invalid {
            field: "n",
            reason: format!("{} takes exactly one sample size; use sweep", config.command.name()),
        });
    }
    if matches!(config.command, Command::Estimate | Command::Sweep) && config.trials < 1_000 {
        return Err(ConfigError::Invalid {
            field: "trials",
            reason: format!("need at least 1000 trials, got {}", config.trials),
        });
    }
    for (n, gamma, l) in config.resolved()? {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(ConfigError::Invalid {
                field: "gamma",
                reason: format!("must be positive, got {gamma}"),
            });
        }
        if gamma > l {
            return Err(ConfigError::Invalid {
                field: "gamma",
                reason: format!("the construction requires 0 < gamma <= L; got gamma={gamma} > L={l} at n={n}"),
            });
        }
    }
    Ok(())
}
