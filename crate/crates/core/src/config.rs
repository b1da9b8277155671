use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Taudis,
    TaudisImg,
    Random,
    AvgCm,
    Wce,
    Wse,
    Coreset,
    RoundRobin,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Taudis,
        Strategy::TaudisImg,
        Strategy::Random,
        Strategy::AvgCm,
        Strategy::Wce,
        Strategy::Wse,
        Strategy::Coreset,
        Strategy::RoundRobin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Taudis => "taudis",
            Strategy::TaudisImg => "taudis_img",
            Strategy::Random => "random",
            Strategy::AvgCm => "avg_cm",
            Strategy::Wce => "wce",
            Strategy::Wse => "wse",
            Strategy::Coreset => "coreset",
            Strategy::RoundRobin => "round_robin",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| ConfigError::UnknownStrategy(s.to_owned()))
    }
}

/// Instance-level uncertainty used to rank candidates in the first step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceMetric {
    Cm,
    Ce,
    #[default]
    Se,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverAlgorithm {
    Greedy,
    #[default]
    Lazy,
    Partitioned,
    Brute,
}

impl FromStr for CoverAlgorithm {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(CoverAlgorithm::Greedy),
            "lazy" => Ok(CoverAlgorithm::Lazy),
            "partitioned" => Ok(CoverAlgorithm::Partitioned),
            "brute" => Ok(CoverAlgorithm::Brute),
            other => Err(ConfigError::UnknownCoverAlgorithm(other.to_owned())),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("budget must be a positive integer")]
    ZeroBudget,
    #[error("rounds must be a positive integer")]
    ZeroRounds,
    #[error("hyperparameters must satisfy alpha > beta > 1 (got alpha = {alpha}, beta = {beta})")]
    AlphaBeta { alpha: f64, beta: f64 },
    #[error("sigma must lie strictly between 0 and 1 (got {0})")]
    Sigma(f64),
    #[error("partitions must be at least 2 (got {0})")]
    Partitions(usize),
    #[error("unknown strategy '{0}'")]
    UnknownStrategy(String),
    #[error("unknown cover algorithm '{0}'")]
    UnknownCoverAlgorithm(String),
    #[error("mean instance count must be positive and large enough to give beta > 1 (got {0})")]
    SeedStatistic(f64),
}

fn default_rounds() -> usize {
    1
}
fn default_alpha() -> f64 {
    150.0
}
fn default_beta() -> f64 {
    40.0
}
fn default_sigma() -> f64 {
    0.8
}
fn default_partitions() -> usize {
    4
}

/// Hyperparameters for one selection strategy.
///
/// `alpha * budget` instances are kept as uncertain candidates and
/// `beta * budget` of them survive the diversity step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub budget: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub strategy: Strategy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub metric: InstanceMetric,
    #[serde(default)]
    pub cover_algorithm: CoverAlgorithm,
    #[serde(default = "default_partitions")]
    pub partitions: usize,
}

impl SelectionConfig {
    pub fn new(strategy: Strategy, budget: usize) -> Self {
        SelectionConfig {
            budget,
            rounds: default_rounds(),
            alpha: default_alpha(),
            beta: default_beta(),
            sigma: default_sigma(),
            strategy,
            seed: 0,
            metric: InstanceMetric::default(),
            cover_algorithm: CoverAlgorithm::default(),
            partitions: default_partitions(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.budget == 0 {
            return Err(ConfigError::ZeroBudget);
        }
        if self.rounds == 0 {
            return Err(ConfigError::ZeroRounds);
        }
        if !(self.alpha > self.beta && self.beta > 1.0) {
            return Err(ConfigError::AlphaBeta {
                alpha: self.alpha,
                beta: self.beta,
            });
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(ConfigError::Sigma(self.sigma));
        }
        if self.cover_algorithm == CoverAlgorithm::Partitioned && self.partitions < 2 {
            return Err(ConfigError::Partitions(self.partitions));
        }
        Ok(())
    }

    /// Number of uncertain candidate instances, `floor(alpha * B)`.
    pub fn candidate_count(&self) -> usize {
        (self.alpha * self.budget as f64).floor() as usize
    }

    /// Number of representatives kept by the cover step, `floor(beta * B)`.
    pub fn representative_count(&self) -> usize {
        (self.beta * self.budget as f64).floor() as usize
    }

    /// SHA-256 over the canonical JSON encoding of the config.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Derives `(alpha, beta)` from the mean number of instances per image in
/// the seed set: alpha at 2.5x the mean and beta at 1.5x.
pub fn alpha_beta_from_seed_mean(mean_instances_per_image: f64) -> Result<(f64, f64), ConfigError> {
    let alpha = 2.5 * mean_instances_per_image;
    let beta = 1.5 * mean_instances_per_image;
    if !(beta > 1.0) || !alpha.is_finite() {
        return Err(ConfigError::SeedStatistic(mean_instances_per_image));
    }
    Ok((alpha, beta))
}
