//! Bounded-box survival task: reach the goal before the predator catches you.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2-d point or displacement in world units.
pub type Vec2 = [f64; 2];

pub(crate) fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Continuous movement command. Norms above 1 are clipped when executed.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Action(pub Vec2);

impl Action {
    pub const ZERO: Action = Action([0.0, 0.0]);

    pub fn norm(&self) -> f64 {
        (self.0[0].powi(2) + self.0[1].powi(2)).sqrt()
    }

    /// The displacement direction actually executed: norm clamped to ≤ 1.
    pub fn clipped(&self) -> Action {
        let n = self.norm();
        if n > 1.0 {
            Action([self.0[0] / n, self.0[1] / n])
        } else {
            *self
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_slice(v: &[f64]) -> Action {
        Action([v[0], v[1]])
    }
}

/// Agent, goal and predator coordinates, each mapped to [−1, 1].
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation(pub [f64; 6]);

impl Observation {
    pub fn agent(&self) -> Vec2 {
        [self.0[0], self.0[1]]
    }

    pub fn goal(&self) -> Vec2 {
        [self.0[2], self.0[3]]
    }

    pub fn predator(&self) -> Vec2 {
        [self.0[4], self.0[5]]
    }

    /// `(agent–goal, agent–predator, goal–predator)` distances divided by the
    /// diagonal of the normalized box, so they agree with [`entity_distances`].
    pub fn distances(&self) -> [f64; 3] {
        let diag = 2.0 * std::f64::consts::SQRT_2;
        [
            dist(self.agent(), self.goal()) / diag,
            dist(self.agent(), self.predator()) / diag,
            dist(self.goal(), self.predator()) / diag,
        ]
    }

    pub fn clamped(mut self) -> Observation {
        self.0.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        self
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub map_size: f64,
    pub max_steps: usize,
    pub agent_speed: f64,
    pub predator_speed: f64,
    pub goal_radius: f64,
    pub catch_radius: f64,
    pub predator_noise_std: f64,
    pub min_spawn_separation: f64,
    pub reward_success: f64,
    pub reward_death: f64,
    pub reward_step: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::with_map_size(10.0)
    }
}

impl EnvConfig {
    /// Defaults with `max_steps = 20 × map_size`; speeds and radii do not scale.
    pub fn with_map_size(map_size: f64) -> Self {
        Self {
            map_size,
            max_steps: (20.0 * map_size).round() as usize,
            agent_speed: 0.5,
            predator_speed: 0.35,
            goal_radius: 0.5,
            catch_radius: 0.5,
            predator_noise_std: 0.05,
            min_spawn_separation: 3.0,
            reward_success: 1.0,
            reward_death: -1.0,
            reward_step: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.map_size > 0.0) {
            return bad("env.map_size must be positive");
        }
        if !(self.predator_speed > 0.0 && self.predator_speed < self.agent_speed) {
            return bad("env requires 0 < predator_speed < agent_speed");
        }
        for (name, r) in [("goal_radius", self.goal_radius), ("catch_radius", self.catch_radius)] {
            if !(r > 0.0 && r < self.map_size / 2.0) {
                return Err(Error::Config(format!("env.{name} must lie in (0, map_size/2)")));
            }
        }
        if self.max_steps < 1 {
            return bad("env.max_steps must be at least 1");
        }
        if self.predator_noise_std < 0.0 || self.min_spawn_separation < 0.0 {
            return bad("env noise and spawn separation must be non-negative");
        }
        Ok(())
    }

    pub fn half_size(&self) -> f64 {
        self.map_size / 2.0
    }

    pub fn diagonal(&self) -> f64 {
        self.map_size * std::f64::consts::SQRT_2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Death,
    Timeout,
    Ongoing,
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        self != Outcome::Ongoing
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Death => "death",
            Outcome::Timeout => "timeout",
            Outcome::Ongoing => "ongoing",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub agent: Vec2,
    pub goal: Vec2,
    pub predator: Vec2,
    pub step_index: usize,
    pub outcome: Outcome,
}

impl EnvState {
    pub fn observe(&self, config: &EnvConfig) -> Observation {
        let h = config.half_size();
        let n = |v: f64| (v / h - 1.0).clamp(-1.0, 1.0);
        Observation([
            n(self.agent[0]),
            n(self.agent[1]),
            n(self.goal[0]),
            n(self.goal[1]),
            n(self.predator[0]),
            n(self.predator[1]),
        ])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub state: EnvState,
    pub observation: Observation,
    pub reward: f64,
    pub outcome: Outcome,
}

const SPAWN_ATTEMPTS: usize = 1000;

pub fn reset<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> Result<(EnvState, Observation)> {
    config.validate()?;
    let sep = config.min_spawn_separation;
    let point = |rng: &mut R| [rng.gen::<f64>() * config.map_size, rng.gen::<f64>() * config.map_size];
    for _ in 0..SPAWN_ATTEMPTS {
        let agent = point(rng);
        let goal = point(rng);
        let predator = point(rng);
        if dist(agent, goal) >= sep && dist(agent, predator) >= sep && dist(goal, predator) >= sep {
            let state = EnvState {
                agent,
                goal,
                predator,
                step_index: 0,
                outcome: Outcome::Ongoing,
            };
            let obs = state.observe(config);
            return Ok((state, obs));
        }
    }
    Err(Error::Config(format!(
        "could not place entities {sep} apart in a {} box after {SPAWN_ATTEMPTS} attempts",
        config.map_size
    )))
}

/// Pursuit step: unit vector toward the agent scaled by `predator_speed`,
/// plus isotropic Gaussian noise.
pub fn predator_policy<R: Rng + ?Sized>(state: &EnvState, config: &EnvConfig, rng: &mut R) -> Vec2 {
    let d = dist(state.agent, state.predator);
    let mut v = if d > 0.0 {
        [
            (state.agent[0] - state.predator[0]) / d * config.predator_speed,
            (state.agent[1] - state.predator[1]) / d * config.predator_speed,
        ]
    } else {
        return [0.0, 0.0];
    };
    if config.predator_noise_std > 0.0 {
        let noise = Normal::new(0.0, config.predator_noise_std).expect("validated std");
        v[0] += noise.sample(rng);
        v[1] += noise.sample(rng);
    }
    v
}

pub fn step<R: Rng + ?Sized>(
    state: &EnvState,
    action: Action,
    config: &EnvConfig,
    rng: &mut R,
) -> Result<StepResult> {
    if state.outcome.is_terminal() {
        return Err(Error::Usage("step called on a terminal state".into()));
    }
    let clamp = |v: f64| v.clamp(0.0, config.map_size);
    let a = action.clipped();
    let mut next = state.clone();
    next.agent = [
        clamp(state.agent[0] + a.0[0] * config.agent_speed),
        clamp(state.agent[1] + a.0[1] * config.agent_speed),
    ];
    let chase = predator_policy(&next, config, rng);
    next.predator = [clamp(next.predator[0] + chase[0]), clamp(next.predator[1] + chase[1])];
    next.step_index += 1;

    let (outcome, reward) = if dist(next.agent, next.predator) <= config.catch_radius {
        (Outcome::Death, config.reward_death)
    } else if dist(next.agent, next.goal) <= config.goal_radius {
        (Outcome::Success, config.reward_success)
    } else if next.step_index >= config.max_steps {
        (Outcome::Timeout, config.reward_step)
    } else {
        (Outcome::Ongoing, config.reward_step)
    };
    next.outcome = outcome;
    let observation = next.observe(config);
    Ok(StepResult {
        state: next,
        observation,
        reward,
        outcome,
    })
}

/// Pairwise distances divided by the map diagonal:
/// `(agent–goal, agent–predator, goal–predator)`.
pub fn entity_distances(state: &EnvState, config: &EnvConfig) -> [f64; 3] {
    let d = config.diagonal();
    [
        dist(state.agent, state.goal) / d,
        dist(state.agent, state.predator) / d,
        dist(state.goal, state.predator) / d,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn state(agent: Vec2, goal: Vec2, predator: Vec2) -> EnvState {
        EnvState {
            agent,
            goal,
            predator,
            step_index: 0,
            outcome: Outcome::Ongoing,
        }
    }

    fn quiet() -> EnvConfig {
        EnvConfig {
            predator_noise_std: 0.0,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn defaults_are_valid() {
        let c = EnvConfig::default();
        c.validate().unwrap();
        assert_eq!(c.max_steps, 200);
        assert_eq!(EnvConfig::with_map_size(30.0).max_steps, 600);
    }

    #[test]
    fn validation_catches_unwinnable() {
        let c = EnvConfig {
            predator_speed: 0.6,
            ..EnvConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn reset_without_separation_stays_in_box() {
        let c = EnvConfig {
            min_spawn_separation: 0.0,
            ..EnvConfig::default()
        };
        let mut r = rng::stream(1, "env");
        for _ in 0..100 {
            let (s, o) = reset(&c, &mut r).unwrap();
            for p in [s.agent, s.goal, s.predator] {
                assert!(p.iter().all(|v| (0.0..=10.0).contains(v)));
            }
            assert!(o.0.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert_eq!(s.step_index, 0);
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let c = EnvConfig::default();
        let a = reset(&c, &mut rng::stream(4, "env")).unwrap();
        let b = reset(&c, &mut rng::stream(4, "env")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reset_respects_separation() {
        let c = EnvConfig::default();
        let mut r = rng::stream(2, "env");
        for _ in 0..10_000 {
            let (s, _) = reset(&c, &mut r).unwrap();
            assert!(dist(s.agent, s.goal) >= 3.0);
            assert!(dist(s.agent, s.predator) >= 3.0);
            assert!(dist(s.goal, s.predator) >= 3.0);
        }
    }

    #[test]
    fn reset_fails_when_box_too_small() {
        let c = EnvConfig {
            map_size: 2.0,
            goal_radius: 0.5,
            catch_radius: 0.5,
            min_spawn_separation: 5.0,
            ..EnvConfig::default()
        };
        assert!(matches!(reset(&c, &mut rng::stream(0, "env")), Err(Error::Config(_))));
    }

    #[test]
    fn reaching_goal_is_success() {
        let c = quiet();
        let s = state([5.0, 5.0], [5.3, 5.0], [0.5, 0.5]);
        let r = step(&s, Action::ZERO, &c, &mut rng::stream(0, "env")).unwrap();
        assert_eq!(r.outcome, Outcome::Success);
        assert_eq!(r.reward, 1.0);
    }

    #[test]
    fn death_takes_precedence_over_success() {
        let c = quiet();
        let s = state([5.0, 5.0], [5.3, 5.0], [5.0, 5.2]);
        let r = step(&s, Action::ZERO, &c, &mut rng::stream(0, "env")).unwrap();
        assert_eq!(r.outcome, Outcome::Death);
        assert_eq!(r.reward, -1.0);
    }

    #[test]
    fn pure_pursuit_closes_by_predator_speed() {
        let c = quiet();
        let s = state([5.0, 5.0], [9.0, 9.0], [2.0, 1.0]);
        let d = dist(s.agent, s.predator);
        let r = step(&s, Action::ZERO, &c, &mut rng::stream(0, "env")).unwrap();
        let d2 = dist(r.state.agent, r.state.predator);
        assert!((d2 - (d - 0.35)).abs() < 1e-12);
    }

    #[test]
    fn step_on_terminal_is_usage_error() {
        let mut s = state([1.0, 1.0], [9.0, 9.0], [5.0, 5.0]);
        s.outcome = Outcome::Death;
        assert!(matches!(
            step(&s, Action::ZERO, &quiet(), &mut rng::stream(0, "env")),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn predator_policy_geometry() {
        let c = EnvConfig {
            predator_speed: 1.0,
            agent_speed: 2.0,
            predator_noise_std: 0.0,
            ..EnvConfig::default()
        };
        let s = state([3.0, 4.0], [9.0, 9.0], [0.0, 0.0]);
        let v = predator_policy(&s, &c, &mut rng::stream(0, "p"));
        assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
        let same = state([2.0, 2.0], [9.0, 9.0], [2.0, 2.0]);
        assert_eq!(predator_policy(&same, &c, &mut rng::stream(0, "p")), [0.0, 0.0]);
    }

    #[test]
    fn noisy_pursuit_is_unbiased() {
        let c = EnvConfig {
            predator_noise_std: 0.1,
            ..EnvConfig::default()
        };
        let s = state([3.0, 4.0], [9.0, 9.0], [0.0, 0.0]);
        let mut r = rng::stream(6, "p");
        let n = 10_000;
        let mut m = [0.0; 2];
        for _ in 0..n {
            let v = predator_policy(&s, &c, &mut r);
            m[0] += v[0] / n as f64;
            m[1] += v[1] / n as f64;
        }
        assert!((m[0] - 0.6 * 0.35).abs() < 0.01 && (m[1] - 0.8 * 0.35).abs() < 0.01);
    }

    #[test]
    fn distances_geometry() {
        let c = EnvConfig::default();
        let s = state([1.0, 1.0], [1.0, 1.0], [1.0, 1.0]);
        assert_eq!(entity_distances(&s, &c), [0.0, 0.0, 0.0]);
        let s = state([0.0, 0.0], [3.0, 4.0], [0.0, 0.0]);
        let d = c.diagonal();
        let got = entity_distances(&s, &c);
        assert!((got[0] - 5.0 / d).abs() < 1e-15 && got[1] == 0.0 && (got[2] - 5.0 / d).abs() < 1e-15);
    }

    #[test]
    fn observation_distances_agree_with_world_distances() {
        let c = EnvConfig::default();
        let mut r = rng::stream(9, "env");
        for _ in 0..100 {
            let (s, o) = reset(&c, &mut r).unwrap();
            let a = entity_distances(&s, &c);
            let b = o.distances();
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
            let swapped = state(s.goal, s.agent, s.predator);
            let sw = entity_distances(&swapped, &c);
            assert!((sw[0] - a[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn episodes_always_terminate() {
        let c = EnvConfig::default();
        let mut r = rng::stream(11, "env");
        for _ in 0..50 {
            let (mut s, _) = reset(&c, &mut r).unwrap();
            let mut steps = 0;
            loop {
                let a = Action([r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]);
                let out = step(&s, a, &c, &mut r).unwrap();
                steps += 1;
                assert!(out.observation.0.iter().all(|v| (-1.0..=1.0).contains(v)));
                s = out.state;
                if out.outcome.is_terminal() {
                    break;
                }
            }
            assert!(steps <= c.max_steps);
        }
    }

    #[test]
    fn fleeing_agent_survives_in_open_field() {
        // A large map so the interior spawn never reaches a wall within the
        // horizon; flee straight away from the predator.
        let c = EnvConfig {
            map_size: 200.0,
            max_steps: 100,
            ..EnvConfig::default()
        };
        let mut r = rng::stream(12, "env");
        for _ in 0..100 {
            let mut s = state(
                [100.0 + r.gen_range(-5.0..5.0), 100.0 + r.gen_range(-5.0..5.0)],
                [0.0, 200.0],
                [0.0; 2],
            );
            let ang: f64 = r.gen_range(0.0..std::f64::consts::TAU);
            s.predator = [s.agent[0] + 3.0 * ang.cos(), s.agent[1] + 3.0 * ang.sin()];
            loop {
                let d = dist(s.agent, s.predator);
                let a = Action([(s.agent[0] - s.predator[0]) / d, (s.agent[1] - s.predator[1]) / d]);
                let out = step(&s, a, &c, &mut r).unwrap();
                assert_ne!(out.outcome, Outcome::Death);
                s = out.state;
                if out.outcome.is_terminal() {
                    break;
                }
            }
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let c = EnvConfig::default();
        let run = |seed| {
            let mut r = rng::stream(seed, "env");
            let (mut s, _) = reset(&c, &mut r).unwrap();
            let mut trace = vec![];
            for _ in 0..30 {
                let out = step(&s, Action([0.3, -0.4]), &c, &mut r).unwrap();
                trace.push(out.observation);
                s = out.state;
                if out.outcome.is_terminal() {
                    break;
                }
            }
            trace
        };
        assert_eq!(run(5), run(5));
    }
}
