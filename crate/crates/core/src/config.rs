//! Experiment configuration (TOML).
//!
//! ```toml
//! [env]
//! kind = "string_pa"        # bag | string_pa | string_ar
//! alphabet_size = 2
//! seq_len = 4               # strings; bags use `capacity`
//!
//! [reward]
//! kind = "string_motif"     # bag_builtin | string_motif | table
//! base = 0.1
//! motifs = [{ pattern = "ab", bonus = 1.0 }]
//!
//! [train]
//! objective = "tb"          # tb | maxent | gtb_sub
//! parametrization = "sa"    # sa | ssr
//! rounds = 2000
//!
//! [output]
//! directory = "runs/demo"
//! ```
//!
//! Every key outside the schema is rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::HeadKind;
use crate::mdp::{Env, EnvKind, DEFAULT_BUDGET};
use crate::objectives::Objective;
use crate::reward::{load_reward_table, BagReward, Motif, MotifReward, RewardFn};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub reward: RewardConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub alphabet_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    BagBuiltin,
    StringMotif,
    Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub kind: RewardKind,
    #[serde(default = "one")]
    pub exponent: f64,
    /// Table rewards: the largest transformed reward.
    #[serde(default = "ten")]
    pub max_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_path: Option<PathBuf>,
    /// Motif rewards: constant term; bag rewards: reward without the substructure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<f64>,
    /// Motif rewards: multiplier applied after the exponent.
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub motifs: Vec<Motif>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_low: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parametrization {
    Sa,
    Ssr,
}

impl Parametrization {
    pub fn head_kind(self) -> HeadKind {
        match self {
            Parametrization::Sa => HeadKind::Sa,
            Parametrization::Ssr => HeadKind::Ssr,
        }
    }
}

/// Where guided objectives get their training trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuideSource {
    /// The trajectories sampled by the training policy.
    Policy,
    /// Keep the policy's terminals, resample each trajectory from the guide.
    Guide,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub objective: Objective,
    pub parametrization: Parametrization,
    pub prt: bool,
    pub alpha: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub log_z_learning_rate: f64,
    pub hidden: Vec<usize>,
    pub rounds: u64,
    pub batch_size: usize,
    pub monitor_every: u64,
    pub monitor_samples: usize,
    pub eval_window_rounds: u64,
    pub seed: u64,
    pub guide_source: GuideSource,
    pub guide_smoothing: f64,
    pub prt_batch_fraction: f64,
    pub prt_top_fraction: f64,
    pub enumeration_budget: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Tb,
            parametrization: Parametrization::Sa,
            prt: false,
            alpha: 1.0,
            epsilon: 0.01,
            learning_rate: 1e-3,
            log_z_learning_rate: 0.1,
            hidden: vec![128, 128],
            rounds: 1000,
            batch_size: 16,
            monitor_every: 10,
            monitor_samples: 128,
            eval_window_rounds: 500,
            seed: 0,
            guide_source: GuideSource::Policy,
            guide_smoothing: 0.01,
            prt_batch_fraction: 0.5,
            prt_top_fraction: 0.1,
            enumeration_budget: DEFAULT_BUDGET as u64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("runs/default"),
        }
    }
}

fn one() -> f64 {
    1.0
}

fn ten() -> f64 {
    10.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("train.batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("train.epsilon {} outside [0, 1]", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("train.alpha {} outside [0, 1]", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.guide_smoothing) {
            return bad(format!("train.guide_smoothing {} outside [0, 1]", self.guide_smoothing));
        }
        if !(self.prt_batch_fraction > 0.0 && self.prt_batch_fraction <= 1.0) {
            return bad("train.prt_batch_fraction must be in (0, 1]".into());
        }
        if !(self.prt_top_fraction > 0.0 && self.prt_top_fraction < 1.0) {
            return bad("train.prt_top_fraction must be in (0, 1)".into());
        }
        if !(self.learning_rate > 0.0) || !(self.log_z_learning_rate > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.monitor_every == 0 || self.monitor_samples == 0 {
            return bad("train.monitor_every and train.monitor_samples must be at least 1".into());
        }
        if self.eval_window_rounds == 0 || self.eval_window_rounds % self.monitor_every != 0 {
            return bad(format!(
                "train.eval_window_rounds {} must be a positive multiple of monitor_every {}",
                self.eval_window_rounds, self.monitor_every
            ));
        }
        if self.hidden.contains(&0) {
            return bad("train.hidden layer sizes must be positive".into());
        }
        Ok(())
    }
}

impl EnvConfig {
    pub fn build(&self) -> Result<Env> {
        let size = match self.kind {
            EnvKind::Bag => {
                if self.seq_len.is_some() {
                    return Err(Error::Config("env.seq_len applies to strings; bags use env.capacity".into()));
                }
                self.capacity.ok_or_else(|| Error::Config("bag environments need env.capacity".into()))?
            }
            _ => {
                if self.capacity.is_some() {
                    return Err(Error::Config("env.capacity applies to bags; strings use env.seq_len".into()));
                }
                self.seq_len.ok_or_else(|| Error::Config("string environments need env.seq_len".into()))?
            }
        };
        Env::new(self.kind, self.alphabet_size, size).map_err(|e| Error::Config(e.to_string()))
    }
}

impl RewardConfig {
    pub fn build(&self, env: &Env) -> Result<RewardFn> {
        if !(self.exponent > 0.0) {
            return Err(Error::Config("reward.exponent must be positive".into()));
        }
        match self.kind {
            RewardKind::BagBuiltin => {
                if env.kind() != EnvKind::Bag {
                    return Err(Error::Config("bag_builtin reward needs a bag environment".into()));
                }
                let mut b = BagReward::standard(self.seed.unwrap_or(0));
                if let Some(v) = self.base {
                    b.base = v;
                }
                if let Some(v) = self.threshold {
                    b.threshold = v;
                }
                if let Some(v) = self.low {
                    b.low = v;
                }
                if let Some(v) = self.high {
                    b.high = v;
                }
                if let Some(v) = self.p_low {
                    b.p_low = v;
                }
                if !(b.base > 0.0 && b.low > 0.0 && b.high > 0.0) || !(0.0..=1.0).contains(&b.p_low) {
                    return Err(Error::Config("bag rewards must be positive and p_low in [0, 1]".into()));
                }
                Ok(RewardFn::Bag(b))
            }
            RewardKind::StringMotif => Ok(RewardFn::Motif(MotifReward::new(
                env,
                self.base.unwrap_or(0.1),
                &self.motifs,
                self.exponent,
                self.scale,
            )?)),
            RewardKind::Table => {
                let path = self
                    .table_path
                    .as_ref()
                    .ok_or_else(|| Error::Config("table reward needs reward.table_path".into()))?;
                if !(self.max_scale > 0.0) {
                    return Err(Error::Config("reward.max_scale must be positive".into()));
                }
                load_reward_table(path, env, self.exponent, self.max_scale)
            }
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates; relative table paths stay as written.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.env.build()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. A relative `reward.table_path` is resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(p) = &cfg.reward.table_path {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.reward.table_path = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn budget(&self) -> u128 {
        u128::from(self.train.enumeration_budget)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEMO: &str = r#"
[env]
kind = "string_pa"
alphabet_size = 2
seq_len = 4

[reward]
kind = "string_motif"
base = 0.1
motifs = [{ pattern = "ab", bonus = 1.0 }, { pattern = "bb", bonus = 0.5 }]

[train]
objective = "gtb_sub"
parametrization = "ssr"
prt = true
rounds = 20

[output]
directory = "runs/demo"
"#;

    #[test]
    fn parse_and_round_trip() {
        let cfg = ExperimentConfig::from_toml_str(DEMO).unwrap();
        assert_eq!(cfg.train.objective, Objective::GtbSub);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.train.hidden, vec![128, 128]);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        let env = cfg.env.build().unwrap();
        let r = cfg.reward.build(&env).unwrap();
        assert!((r.reward(&env, &env.parse_label("babb").unwrap()).unwrap() - 1.6).abs() < 1e-12);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let typo = DEMO.replace("rounds = 20", "roundz = 20");
        assert!(matches!(ExperimentConfig::from_toml_str(&typo), Err(Error::Config(_))));
        let eps = DEMO.replace("rounds = 20", "epsilon = 1.5");
        assert!(ExperimentConfig::from_toml_str(&eps).is_err());
        let window = DEMO.replace("rounds = 20", "eval_window_rounds = 25");
        assert!(ExperimentConfig::from_toml_str(&window).is_err());
        let cap = DEMO.replace("seq_len = 4", "capacity = 4");
        assert!(ExperimentConfig::from_toml_str(&cap).is_err());
    }

    #[test]
    fn missing_table_names_the_path() {
        let text = r#"
[env]
kind = "string_ar"
alphabet_size = 4
seq_len = 8
[reward]
kind = "table"
table_path = "does/not/exist.csv"
"#;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, text).unwrap();
        let cfg = ExperimentConfig::load(&p).unwrap();
        let env = cfg.env.build().unwrap();
        let err = cfg.reward.build(&env).unwrap_err();
        assert_eq!(err.kind(), "io");
        assert!(err.to_string().contains("exist.csv"));
    }
}
