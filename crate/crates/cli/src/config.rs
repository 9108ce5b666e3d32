//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sensecourt::auction::PaymentRule;
use sensecourt::engine::PolicySpec;
use sensecourt::policy_dual::StepSchedule;
use sensecourt::scenarios::{InstanceShape, ScenarioConfig};
use sensecourt::solver::SolveMode;

use crate::CliError;

/// A scalar or a list of scalars.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// One policy entry; parameter lists expand into one variant per value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum PolicyEntry {
    Dual {
        #[serde(default)]
        step: StepSchedule,
    },
    Lyapunov {
        phi: OneOrMany,
    },
    Auction {
        phi: OneOrMany,
    },
    RadpVpc {
        alpha: OneOrMany,
    },
    Greedy,
    Random,
}

impl PolicyEntry {
    pub fn expand(&self) -> Vec<PolicySpec> {
        match self {
            PolicyEntry::Dual { step } => vec![PolicySpec::Dual { step: *step }],
            PolicyEntry::Lyapunov { phi } => phi
                .values()
                .into_iter()
                .map(|phi| PolicySpec::Lyapunov { phi })
                .collect(),
            PolicyEntry::Auction { phi } => phi
                .values()
                .into_iter()
                .map(|phi| PolicySpec::Auction { phi })
                .collect(),
            PolicyEntry::RadpVpc { alpha } => alpha
                .values()
                .into_iter()
                .map(|alpha| PolicySpec::RadpVpc { alpha })
                .collect(),
            PolicyEntry::Greedy => vec![PolicySpec::Greedy],
            PolicyEntry::Random => vec![PolicySpec::Random],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSection {
    pub t_slots: usize,
    pub dual_iterations: usize,
    /// Also solve the complete-information problem by joint enumeration.
    pub brute_force: bool,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection {
            t_slots: 200,
            dual_iterations: 400,
            brute_force: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthcheckSection {
    pub instances: usize,
    pub grid_points: usize,
    /// Bids span `[0, max_bid_factor × true cost]`.
    pub max_bid_factor: f64,
    pub payment_rule: PaymentRule,
    pub phi: f64,
    /// Regulation factors are drawn from `Uniform(0, max_factor)`.
    pub max_factor: f64,
    pub shape: InstanceShape,
}

impl Default for TruthcheckSection {
    fn default() -> Self {
        TruthcheckSection {
            instances: 500,
            grid_points: 201,
            max_bid_factor: 3.0,
            payment_rule: PaymentRule::RegulatedVcg,
            phi: 10.0,
            max_factor: 1.0,
            shape: InstanceShape::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyEntry>,
    #[serde(default = "default_t_slots")]
    pub t_slots: usize,
    #[serde(default = "default_warmup")]
    pub warmup_slots: usize,
    #[serde(default = "default_thresholds")]
    pub thresholds: OneOrMany,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub solver: SolveMode,
    #[serde(default = "default_true")]
    pub dropping: bool,
    #[serde(default)]
    pub benchmark: BenchmarkSection,
    #[serde(default)]
    pub truthcheck: TruthcheckSection,
}

fn default_policies() -> Vec<PolicyEntry> {
    vec![PolicyEntry::Lyapunov {
        phi: OneOrMany::One(1.0),
    }]
}

fn default_t_slots() -> usize {
    2000
}

fn default_warmup() -> usize {
    40
}

fn default_thresholds() -> OneOrMany {
    OneOrMany::One(0.5)
}

fn default_replications() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// Reads, parses and validates a JSON config.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::ConfigNotFound(path.to_path_buf()),
            _ => CliError::Io(path.to_path_buf(), e),
        })?;
        let cfg = Self::parse(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.into_inner()))
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scenario
            .validate()
            .map_err(|e| CliError::Config(format!("scenario: {e}")))?;
        if self.policies.is_empty() {
            return Err(CliError::Config(
                "`policies` must list at least one policy".into(),
            ));
        }
        if self.replications == 0 {
            return Err(CliError::Config("`replications` must be at least 1".into()));
        }
        if self.t_slots < self.warmup_slots {
            return Err(CliError::Config(format!(
                "`t_slots` ({}) must be at least `warmup_slots` ({})",
                self.t_slots, self.warmup_slots
            )));
        }
        let thresholds = self.thresholds.values();
        if let OneOrMany::Many(v) = &self.thresholds {
            if v.len() != self.scenario.n_users {
                return Err(CliError::Config(format!(
                    "`thresholds` lists {} values for {} users",
                    v.len(),
                    self.scenario.n_users
                )));
            }
        }
        if thresholds.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(CliError::Config("`thresholds` must lie in [0, 1]".into()));
        }
        if self.policies.iter().any(|p| p.expand().is_empty()) {
            return Err(CliError::Config(
                "a policy entry has an empty parameter list".into(),
            ));
        }
        Ok(())
    }

    pub fn thresholds_vec(&self) -> Vec<f64> {
        match &self.thresholds {
            OneOrMany::One(d) => vec![*d; self.scenario.n_users],
            OneOrMany::Many(v) => v.clone(),
        }
    }

    pub fn variants(&self) -> Vec<PolicySpec> {
        self.policies.iter().flat_map(PolicyEntry::expand).collect()
    }
}
