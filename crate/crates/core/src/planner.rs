//! Sparse tree search through the world model.
//!
//! A handful of root candidates come from the self-model's action
//! distribution (the first one is its mean). Each candidate is expanded
//! exactly once: after the root action, the self-model's mean action is
//! taken at every simulated observation up to `max_depth` steps. Each
//! trajectory is scored by its GAE advantage at the root and the best root
//! action wins, lowest index on ties.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Observation};
use crate::error::{Error, Result};
use crate::nn::gaussian_sample;
use crate::world_model::{Dynamics, ObsHistory};

/// A simulated step is terminal when the predicted reward magnitude exceeds
/// this, i.e. half of the success/death reward magnitude.
pub const TERMINAL_REWARD_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub n_root_candidates: usize,
    pub max_depth: usize,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            n_root_candidates: 4,
            max_depth: 4,
            gamma: 0.99,
            lambda: 0.95,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_root_candidates < 1 || self.max_depth < 1 {
            return Err(Error::Config("plan.n_root_candidates and plan.max_depth must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("plan.gamma and plan.lambda must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// What the planner learns from asking the self-model about an observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelfModelOutput {
    pub mean: Action,
    pub log_std: [f64; 2],
    pub value: f64,
}

/// The agent's model of its own behavior, `g(o) → (a, v)`.
pub trait SelfModel {
    fn query(&self, obs: &Observation) -> SelfModelOutput;
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimTrajectory {
    pub root_action: Action,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// Self-model values of every visited observation, start included.
    pub values: Vec<f64>,
    /// The last simulated step was predicted terminal (at any depth).
    pub terminal: bool,
    /// Terminal before reaching `max_depth`.
    pub terminated_early: bool,
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub chosen_action: Action,
    /// `None` when every trajectory was invalid and the mean action was used.
    pub chosen_index: Option<usize>,
    pub candidates: Vec<Action>,
    pub scores: Vec<f64>,
    pub trajectories: Vec<SimTrajectory>,
    pub fallback: bool,
}

pub fn sample_root_candidates<S, R>(
    self_model: &S,
    obs: &Observation,
    config: &PlanConfig,
    rng: &mut R,
) -> Vec<Action>
where
    S: SelfModel + ?Sized,
    R: Rng + ?Sized,
{
    let out = self_model.query(obs);
    let mut candidates = Vec::with_capacity(config.n_root_candidates);
    candidates.push(out.mean);
    for _ in 1..config.n_root_candidates {
        let a = gaussian_sample(out.mean.as_slice(), &out.log_std, rng);
        candidates.push(Action::from_slice(&a));
    }
    candidates
}

pub fn rollout_trajectory<W, S>(
    world_model: &W,
    self_model: &S,
    history: &ObsHistory,
    root_action: Action,
    config: &PlanConfig,
) -> SimTrajectory
where
    W: Dynamics + ?Sized,
    S: SelfModel + ?Sized,
{
    let mut traj = SimTrajectory {
        root_action,
        actions: Vec::with_capacity(config.max_depth),
        rewards: Vec::with_capacity(config.max_depth),
        values: Vec::with_capacity(config.max_depth + 1),
        terminal: false,
        terminated_early: false,
        valid: true,
    };
    let mut h = *history;
    let mut query = self_model.query(&h.curr);
    traj.values.push(query.value);
    let mut action = root_action;
    for depth in 0..config.max_depth {
        let (next, reward) = match world_model.predict(&h.prev, &h.curr, action) {
            Ok(step) => step,
            Err(_) => {
                traj.valid = false;
                return traj;
            }
        };
        traj.actions.push(action);
        traj.rewards.push(reward);
        h.push(next);
        query = self_model.query(&h.curr);
        traj.values.push(query.value);
        if reward.abs() > TERMINAL_REWARD_THRESHOLD {
            traj.terminal = true;
            traj.terminated_early = depth + 1 < config.max_depth;
            break;
        }
        action = query.mean;
    }
    traj
}

/// GAE advantage at the root of a simulated trajectory.
pub fn score_trajectory(traj: &SimTrajectory, config: &PlanConfig) -> f64 {
    if !traj.valid {
        return f64::NEG_INFINITY;
    }
    debug_assert_eq!(traj.values.len(), traj.rewards.len() + 1);
    let n = traj.rewards.len();
    let terminal_last = traj.terminal;
    let mut adv = 0.0;
    for l in (0..n).rev() {
        let mask = if l + 1 == n && terminal_last { 0.0 } else { 1.0 };
        let delta = traj.rewards[l] + config.gamma * traj.values[l + 1] * mask - traj.values[l];
        adv = delta + config.gamma * config.lambda * adv;
    }
    adv
}

pub fn plan<W, S, R>(
    world_model: &W,
    self_model: &S,
    history: &ObsHistory,
    config: &PlanConfig,
    rng: &mut R,
) -> PlanResult
where
    W: Dynamics + ?Sized,
    S: SelfModel + ?Sized,
    R: Rng + ?Sized,
{
    let candidates = sample_root_candidates(self_model, &history.curr, config, rng);
    let trajectories: Vec<SimTrajectory> = candidates
        .iter()
        .map(|&a| rollout_trajectory(world_model, self_model, history, a, config))
        .collect();
    let scores: Vec<f64> = trajectories.iter().map(|t| score_trajectory(t, config)).collect();

    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s == f64::NEG_INFINITY || s.is_nan() {
            continue;
        }
        if best.map_or(true, |b| s > scores[b]) {
            best = Some(i);
        }
    }
    let (chosen_action, fallback) = match best {
        Some(i) => (candidates[i], false),
        None => (candidates[0], true),
    };
    PlanResult {
        chosen_action,
        chosen_index: best,
        candidates,
        scores,
        trajectories,
        fallback,
    }
}
