//! Experiment configuration: a flat `key = value` file (TOML syntax) merged
//! over the reference hyperparameters.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::EnvConfig;
use crate::numcore::{Activation, OptimizerKind};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Independent policies trained on extrinsic plus learned intrinsic reward.
    Proposed,
    /// Independent policies, extrinsic reward only.
    ExtrinsicNps,
    /// One policy shared by every agent, extrinsic reward only.
    ExtrinsicPs,
    /// Uniformly random actions, no learning.
    RandomUniform,
}

impl RunMode {
    pub const ALL: [RunMode; 4] = [
        RunMode::Proposed,
        RunMode::ExtrinsicNps,
        RunMode::ExtrinsicPs,
        RunMode::RandomUniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RunMode::Proposed => "proposed",
            RunMode::ExtrinsicNps => "extrinsic-nps",
            RunMode::ExtrinsicPs => "extrinsic-ps",
            RunMode::RandomUniform => "random-uniform",
        }
    }

    pub fn learns(self) -> bool {
        self != RunMode::RandomUniform
    }

    pub fn uses_intrinsic(self) -> bool {
        self == RunMode::Proposed
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RunMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

/// How much of the lifetime the intrinsic-reward gradient is propagated over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BpttWindow {
    /// Truncate at episode boundaries (state still flows forward).
    #[default]
    Episode,
    /// One backward pass over the whole lifetime.
    Lifetime,
}

/// Return attached to each score term of the policy gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Credit {
    /// Whole-episode return times the summed score.
    #[default]
    Episode,
    /// Discounted reward-to-go per step.
    ToGo,
}

/// Fully resolved configuration of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: RunMode,
    pub n_agents: usize,
    pub buffer_size: usize,
    pub memory: usize,
    pub episode_len: usize,
    pub episodes_per_lifetime: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub policy_hidden: usize,
    pub intrinsic_hidden: usize,
    pub seeds: Vec<u64>,
    pub max_lifetimes: usize,
    pub convergence_window: usize,
    /// Relative improvement of the moving-average lifetime return below
    /// which training stops. Zero or negative disables the test.
    pub convergence_threshold: f64,
    pub reward_duplicates: bool,
    pub strict_obs_indexing: bool,
    pub optimizer: OptimizerKind,
    /// Global-norm gradient clip of the policy update; zero or negative
    /// disables clipping.
    pub clip_norm: f64,
    /// Same for the intrinsic-reward update.
    pub intrinsic_clip_norm: f64,
    pub bptt_window: BpttWindow,
    pub credit: Credit,
    pub intrinsic_sees_rext: bool,
    pub intrinsic_head_activation: Activation,
    pub forget_bias: f64,
    pub smoothing_window: usize,
    pub selection_window: usize,
    pub eval_episodes: usize,
}

/// Same keys as [`ExperimentConfig`], every one optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub mode: Option<RunMode>,
    pub n_agents: Option<usize>,
    pub buffer_size: Option<usize>,
    pub memory: Option<usize>,
    pub episode_len: Option<usize>,
    pub episodes_per_lifetime: Option<usize>,
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub policy_hidden: Option<usize>,
    pub intrinsic_hidden: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub max_lifetimes: Option<usize>,
    pub convergence_window: Option<usize>,
    pub convergence_threshold: Option<f64>,
    pub reward_duplicates: Option<bool>,
    pub strict_obs_indexing: Option<bool>,
    pub optimizer: Option<OptimizerKind>,
    pub clip_norm: Option<f64>,
    pub intrinsic_clip_norm: Option<f64>,
    pub bptt_window: Option<BpttWindow>,
    pub credit: Option<Credit>,
    pub intrinsic_sees_rext: Option<bool>,
    pub intrinsic_head_activation: Option<Activation>,
    pub forget_bias: Option<f64>,
    pub smoothing_window: Option<usize>,
    pub selection_window: Option<usize>,
    pub eval_episodes: Option<usize>,
}

impl PartialConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Fills unspecified keys from the reference hyperparameters and checks
    /// every constraint. `buffer_size` has no default.
    pub fn resolve(self) -> Result<ExperimentConfig> {
        let buffer_size = self.buffer_size.ok_or_else(|| {
            Error::Config("buffer_size (P, PDUs per UE) must be given explicitly".into())
        })?;
        let cfg = ExperimentConfig {
            mode: self.mode.unwrap_or(RunMode::Proposed),
            n_agents: self.n_agents.unwrap_or(2),
            buffer_size,
            memory: self.memory.unwrap_or(3),
            episode_len: self.episode_len.unwrap_or(32),
            episodes_per_lifetime: self.episodes_per_lifetime.unwrap_or(250),
            gamma: self.gamma.unwrap_or(0.99),
            lambda: self.lambda.unwrap_or(1.0),
            alpha: self.alpha.unwrap_or(3e-4),
            beta: self.beta.unwrap_or(7e-4),
            policy_hidden: self.policy_hidden.unwrap_or(64),
            intrinsic_hidden: self.intrinsic_hidden.unwrap_or(128),
            seeds: self.seeds.unwrap_or_else(|| (0..10).collect()),
            max_lifetimes: self.max_lifetimes.unwrap_or(400),
            convergence_window: self.convergence_window.unwrap_or(3),
            convergence_threshold: self.convergence_threshold.unwrap_or(0.01),
            reward_duplicates: self.reward_duplicates.unwrap_or(false),
            strict_obs_indexing: self.strict_obs_indexing.unwrap_or(false),
            optimizer: self.optimizer.unwrap_or_default(),
            clip_norm: self.clip_norm.unwrap_or(5.0),
            intrinsic_clip_norm: self.intrinsic_clip_norm.unwrap_or(5.0),
            bptt_window: self.bptt_window.unwrap_or_default(),
            credit: self.credit.unwrap_or_default(),
            intrinsic_sees_rext: self.intrinsic_sees_rext.unwrap_or(false),
            intrinsic_head_activation: self
                .intrinsic_head_activation
                .unwrap_or(Activation::Identity),
            forget_bias: self.forget_bias.unwrap_or(1.0),
            smoothing_window: self.smoothing_window.unwrap_or(100),
            selection_window: self.selection_window.unwrap_or(50),
            eval_episodes: self.eval_episodes.unwrap_or(1000),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    /// Reference hyperparameters for the given buffer size.
    pub fn reference(buffer_size: usize) -> Self {
        PartialConfig {
            buffer_size: Some(buffer_size),
            ..Default::default()
        }
        .resolve()
        .expect("reference configuration is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("n_agents", self.n_agents),
            ("buffer_size", self.buffer_size),
            ("memory", self.memory),
            ("episode_len", self.episode_len),
            ("episodes_per_lifetime", self.episodes_per_lifetime),
            ("policy_hidden", self.policy_hidden),
            ("intrinsic_hidden", self.intrinsic_hidden),
            ("max_lifetimes", self.max_lifetimes),
            ("convergence_window", self.convergence_window),
            ("smoothing_window", self.smoothing_window),
            ("selection_window", self.selection_window),
            ("eval_episodes", self.eval_episodes),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!(
                    "{name} must be a finite non-negative rate, got {v}"
                ));
            }
        }
        for (name, v) in [
            ("clip_norm", self.clip_norm),
            ("intrinsic_clip_norm", self.intrinsic_clip_norm),
            ("forget_bias", self.forget_bias),
            ("convergence_threshold", self.convergence_threshold),
        ] {
            if !v.is_finite() {
                return fail(format!("{name} must be finite"));
            }
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return fail("seeds must be distinct".into());
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            n_agents: self.n_agents,
            buffer_size: self.buffer_size,
            memory: self.memory,
            episode_len: self.episode_len,
            reward_duplicates: self.reward_duplicates,
            strict_obs_indexing: self.strict_obs_indexing,
        }
    }

    pub fn clip(&self) -> Option<f64> {
        (self.clip_norm > 0.0).then_some(self.clip_norm)
    }

    pub fn intrinsic_clip(&self) -> Option<f64> {
        (self.intrinsic_clip_norm > 0.0).then_some(self.intrinsic_clip_norm)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// First 16 hex digits of the SHA-256 of the serialized configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Reads a configuration file and resolves it against the defaults.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    PartialConfig::from_file(path)?.resolve()
}
