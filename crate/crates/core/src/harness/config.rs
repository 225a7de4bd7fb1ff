//! Flat `dotted.key = value` config files. `#` starts a comment; blank lines
//! are ignored; unknown keys are rejected.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{AgentConfig, AgentKind};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::training::TrainHyper;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    Baseline,
    SizeSweep,
    MapSweep,
    ReflexFlight,
    ReflexFreeze,
    Custom,
}

impl Recipe {
    pub fn as_str(self) -> &'static str {
        match self {
            Recipe::Baseline => "baseline",
            Recipe::SizeSweep => "size_sweep",
            Recipe::MapSweep => "map_sweep",
            Recipe::ReflexFlight => "reflex_flight",
            Recipe::ReflexFreeze => "reflex_freeze",
            Recipe::Custom => "custom",
        }
    }
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "baseline" => Recipe::Baseline,
            "size_sweep" => Recipe::SizeSweep,
            "map_sweep" => Recipe::MapSweep,
            "reflex_flight" => Recipe::ReflexFlight,
            "reflex_freeze" => Recipe::ReflexFreeze,
            "custom" => Recipe::Custom,
            other => return Err(Error::Config(format!("unknown experiment.recipe {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub train: TrainHyper,
    pub total_steps: usize,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    pub recipe: Recipe,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            train: TrainHyper::default(),
            total_steps: 150_000,
            seeds: vec![1, 2, 3, 4, 5],
            eval_episodes: 500,
            recipe: Recipe::Baseline,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        self.agent.reflex.validate(self.env.catch_radius)?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment.seeds must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("experiment.seeds must be distinct".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let inner = value.trim().trim_start_matches('[').trim_end_matches(']');
    inner
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn parse_enum<T: FromStr<Err = Error>>(value: &str) -> Result<T> {
    value.parse()
}

impl ExperimentConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "env.map_size" => self.env.map_size = parse_num(key, v)?,
            "env.max_steps" => self.env.max_steps = parse_num(key, v)?,
            "env.agent_speed" => self.env.agent_speed = parse_num(key, v)?,
            "env.predator_speed" => self.env.predator_speed = parse_num(key, v)?,
            "env.goal_radius" => self.env.goal_radius = parse_num(key, v)?,
            "env.catch_radius" => self.env.catch_radius = parse_num(key, v)?,
            "env.predator_noise_std" => self.env.predator_noise_std = parse_num(key, v)?,
            "env.min_spawn_separation" => self.env.min_spawn_separation = parse_num(key, v)?,
            "env.reward_success" => self.env.reward_success = parse_num(key, v)?,
            "env.reward_death" => self.env.reward_death = parse_num(key, v)?,
            "env.reward_step" => self.env.reward_step = parse_num(key, v)?,

            "reflex.kind" => self.agent.reflex.kind = parse_enum(v)?,
            "reflex.trigger_distance" => self.agent.reflex.trigger_distance = parse_num(key, v)?,

            "agent.kind" => self.agent.kind = parse_enum::<AgentKind>(v)?,
            "agent.hidden_policy" => self.agent.hidden_policy = parse_list(key, v)?,
            "agent.hidden_distilled" => self.agent.hidden_distilled = parse_list(key, v)?,
            "agent.plan_probability" => self.agent.plan_probability = parse_num(key, v)?,

            "world_model.hidden" => self.agent.hidden_world_model = parse_list(key, v)?,
            "world_model.lr" | "train.lr_wm" => self.train.lr_wm = parse_num(key, v)?,

            "plan.n_root_candidates" => self.agent.plan.n_root_candidates = parse_num(key, v)?,
            "plan.max_depth" => self.agent.plan.max_depth = parse_num(key, v)?,
            "plan.gamma" => self.agent.plan.gamma = parse_num(key, v)?,
            "plan.lambda" => self.agent.plan.lambda = parse_num(key, v)?,

            "train.total_steps" => self.total_steps = parse_num(key, v)?,
            "train.rollout_interval" => self.train.rollout_interval = parse_num(key, v)?,
            "train.ppo_epochs" => self.train.ppo_epochs = parse_num(key, v)?,
            "train.minibatch" => self.train.minibatch_size = parse_num(key, v)?,
            "train.gamma" => self.train.gamma = parse_num(key, v)?,
            "train.lambda" => self.train.lambda = parse_num(key, v)?,
            "train.clip_epsilon" => self.train.clip_epsilon = parse_num(key, v)?,
            "train.entropy_coef" => self.train.entropy_coef = parse_num(key, v)?,
            "train.value_coef" => self.train.value_coef = parse_num(key, v)?,
            "train.kd_temperature" => self.train.kd_temperature = parse_num(key, v)?,
            "train.kd_weight" => self.train.kd_weight = parse_num(key, v)?,
            "train.distill_capacity" => self.train.distill_capacity = parse_num(key, v)?,
            "train.distill_epochs" => self.train.distill_epochs = parse_num(key, v)?,
            "train.wm_epochs" => self.train.wm_epochs = parse_num(key, v)?,
            "train.lr_policy" => self.train.lr_policy = parse_num(key, v)?,
            "train.lr_distill" => self.train.lr_distill = parse_num(key, v)?,

            "experiment.seeds" => self.seeds = parse_list(key, v)?,
            "experiment.eval_episodes" => self.eval_episodes = parse_num(key, v)?,
            "experiment.recipe" => self.recipe = v.parse()?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }
}

/// Parse config text on top of the defaults. When `env.map_size` is set and
/// `env.max_steps` is not, the step limit follows the map size.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut max_steps_set = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected `key = value`, got {line:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key == "env.max_steps" {
            max_steps_set = true;
        }
        cfg.set(key, value).map_err(|e| match e {
            Error::Config(msg) => Error::Parse { line: i + 1, msg },
            other => other,
        })?;
    }
    if !max_steps_set {
        cfg.env.max_steps = EnvConfig::with_map_size(cfg.env.map_size).max_steps;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}
