//! The three agent assemblies and per-step action orchestration.
//!
//! | agent  | model-free policy | world model | distilled policy |
//! |--------|-------------------|-------------|------------------|
//! | simple | yes               | no          | no               |
//! | shared | yes               | yes         | no               |
//! | dual   | yes               | yes         | yes              |
//!
//! Each step checks the reflex first, then draws the action mode, then
//! either acts model-free or plans with the agent's self-model.

use std::cell::Cell;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvState, Observation};
use crate::error::{Error, Result};
use crate::nn::{gaussian_logprob, gaussian_sample, DenseNet, HeadLayout, NetSpec, ACTION_DIM, OBS_DIM};
use crate::planner::{plan, PlanConfig, PlanResult, SelfModel, SelfModelOutput};
use crate::reflex::{reflex_override, ReflexConfig};
use crate::rng::{self, StreamRng};
use crate::world_model::{ObsHistory, WorldModelNet};

const HIDDEN_GAIN: f64 = std::f64::consts::SQRT_2;
const ACTION_GAIN: f64 = 0.01;
const VALUE_GAIN: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentKind {
    Simple,
    SharedPolicy,
    DualPolicy,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::Simple, AgentKind::SharedPolicy, AgentKind::DualPolicy];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Simple => "simple",
            AgentKind::SharedPolicy => "shared",
            AgentKind::DualPolicy => "dual",
        }
    }

    pub fn has_world_model(self) -> bool {
        self != AgentKind::Simple
    }

    pub fn has_distilled(self) -> bool {
        self == AgentKind::DualPolicy
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(AgentKind::Simple),
            "shared" => Ok(AgentKind::SharedPolicy),
            "dual" => Ok(AgentKind::DualPolicy),
            other => Err(Error::Config(format!("unknown agent.kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionMode {
    ModelFree,
    Planned,
    Reflex,
}

/// Actor and critic are separate networks sharing one state-independent log-std.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFreePolicy {
    pub actor: DenseNet,
    pub critic: DenseNet,
    pub log_std: [f64; ACTION_DIM],
}

impl ModelFreePolicy {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> Result<Self> {
        let actor_spec = NetSpec::new(OBS_DIM, hidden.to_vec(), ACTION_DIM)?;
        let critic_spec = NetSpec::new(OBS_DIM, hidden.to_vec(), 1)?;
        Ok(Self {
            actor: DenseNet::orthogonal(actor_spec, HIDDEN_GAIN, &[ACTION_GAIN; ACTION_DIM], rng),
            critic: DenseNet::orthogonal(critic_spec, HIDDEN_GAIN, &[VALUE_GAIN], rng),
            log_std: [0.0; ACTION_DIM],
        })
    }

    pub fn action_mean(&self, obs: &Observation) -> Action {
        Action::from_slice(&self.actor.forward(obs.as_slice()).expect("observation has 6 entries"))
    }

    pub fn value(&self, obs: &Observation) -> f64 {
        self.critic.forward(obs.as_slice()).expect("observation has 6 entries")[0]
    }

    pub fn num_params(&self) -> usize {
        self.actor.num_params() + self.critic.num_params() + ACTION_DIM
    }

    pub fn layout() -> HeadLayout {
        HeadLayout::ActorCriticSeparate
    }
}

/// One trunk predicting two action means and a value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistilledPolicy {
    pub trunk: DenseNet,
    pub log_std: [f64; ACTION_DIM],
}

impl DistilledPolicy {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> Result<Self> {
        let spec = NetSpec::new(OBS_DIM, hidden.to_vec(), ACTION_DIM + 1)?;
        Ok(Self {
            trunk: DenseNet::orthogonal(spec, HIDDEN_GAIN, &[ACTION_GAIN, ACTION_GAIN, VALUE_GAIN], rng),
            log_std: [0.0; ACTION_DIM],
        })
    }

    /// `(action mean, value)` from a single trunk pass.
    pub fn predict(&self, obs: &Observation) -> (Action, f64) {
        let out = self.trunk.forward(obs.as_slice()).expect("observation has 6 entries");
        (Action([out[0], out[1]]), out[2])
    }

    pub fn num_params(&self) -> usize {
        self.trunk.num_params() + ACTION_DIM
    }

    pub fn layout() -> HeadLayout {
        HeadLayout::CombinedDistilled
    }
}

/// Self-model of the shared agent: the model-free actor and critic.
pub struct SharedSelfModel<'a>(pub &'a ModelFreePolicy);

impl SelfModel for SharedSelfModel<'_> {
    fn query(&self, obs: &Observation) -> SelfModelOutput {
        SelfModelOutput {
            mean: self.0.action_mean(obs),
            log_std: self.0.log_std,
            value: self.0.value(obs),
        }
    }
}

/// Self-model of the dual agent: the distilled trunk.
pub struct DistilledSelfModel<'a>(pub &'a DistilledPolicy);

impl SelfModel for DistilledSelfModel<'_> {
    fn query(&self, obs: &Observation) -> SelfModelOutput {
        let (mean, value) = self.0.predict(obs);
        SelfModelOutput {
            mean,
            log_std: self.0.log_std,
            value,
        }
    }
}

pub fn self_model_query(view: &dyn SelfModel, obs: &Observation) -> SelfModelOutput {
    view.query(obs)
}

/// Raw action from the model-free policy with its log-probability under the
/// current parameters. Deterministic mode returns the actor mean.
pub fn act_model_free<R: Rng + ?Sized>(
    policy: &ModelFreePolicy,
    obs: &Observation,
    rng: &mut R,
    deterministic: bool,
) -> (Action, f64) {
    let mean = policy.action_mean(obs);
    let action = if deterministic {
        mean
    } else {
        Action::from_slice(&gaussian_sample(mean.as_slice(), &policy.log_std, rng))
    };
    let lp = gaussian_logprob(mean.as_slice(), &policy.log_std, action.as_slice()).expect("2-d action");
    (action, lp)
}

/// Bernoulli mode draw. Simple agents never plan and draw nothing.
pub fn select_mode<R: Rng + ?Sized>(rng: &mut R, plan_probability: f64, kind: AgentKind) -> ActionMode {
    if !kind.has_world_model() {
        return ActionMode::ModelFree;
    }
    if rng.gen_bool(plan_probability.clamp(0.0, 1.0)) {
        ActionMode::Planned
    } else {
        ActionMode::ModelFree
    }
}

/// One executed step, as seen by every learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub observation: Observation,
    /// The executed action, clipped to unit norm as the environment applies it.
    pub action: Action,
    pub mode: ActionMode,
    pub reward: f64,
    /// Model-free critic value of `observation` at collection time.
    pub value_estimate: f64,
    pub done: bool,
    /// Unclipped model-free sample and its behavior log-probability; present
    /// exactly on model-free records.
    pub sampled: Option<(Action, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub hidden_policy: Vec<usize>,
    pub hidden_distilled: Vec<usize>,
    pub hidden_world_model: Vec<usize>,
    pub plan_probability: f64,
    pub plan: PlanConfig,
    pub reflex: ReflexConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            kind: AgentKind::DualPolicy,
            hidden_policy: vec![64, 64],
            hidden_distilled: vec![64, 64],
            hidden_world_model: vec![64, 64],
            plan_probability: 0.5,
            plan: PlanConfig::default(),
            reflex: ReflexConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.plan_probability) {
            return Err(Error::Config("agent.plan_probability must lie in [0, 1]".into()));
        }
        self.plan.validate()
    }
}

/// Instrumentation: how often each action source was consulted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ActCounters {
    pub policy_calls: usize,
    pub plan_calls: usize,
    pub reflex_fires: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Agent {
    pub config: AgentConfig,
    pub policy: ModelFreePolicy,
    pub world_model: Option<WorldModelNet>,
    pub distilled: Option<DistilledPolicy>,
    #[serde(skip)]
    counters: Cell<ActCounters>,
}

/// RNG streams consumed while acting.
pub struct AgentRngs {
    pub agent: StreamRng,
    pub planner: StreamRng,
}

impl AgentRngs {
    pub fn training(seed: u64) -> Self {
        Self {
            agent: rng::stream(seed, rng::labels::AGENT),
            planner: rng::stream(seed, rng::labels::PLANNER),
        }
    }

    pub fn evaluation(seed: u64) -> Self {
        Self {
            agent: rng::stream(seed, rng::labels::EVAL_AGENT),
            planner: rng::stream(seed, rng::labels::EVAL_PLANNER),
        }
    }
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let policy = ModelFreePolicy::new(&config.hidden_policy, rng)?;
        let world_model = if config.kind.has_world_model() {
            Some(WorldModelNet::new(&config.hidden_world_model, rng)?)
        } else {
            None
        };
        let distilled = if config.kind.has_distilled() {
            Some(DistilledPolicy::new(&config.hidden_distilled, rng)?)
        } else {
            None
        };
        Ok(Self {
            config,
            policy,
            world_model,
            distilled,
            counters: Cell::new(ActCounters::default()),
        })
    }

    pub fn kind(&self) -> AgentKind {
        self.config.kind
    }

    pub fn counters(&self) -> ActCounters {
        self.counters.get()
    }

    fn bump(&self, f: impl FnOnce(&mut ActCounters)) {
        let mut c = self.counters.get();
        f(&mut c);
        self.counters.set(c);
    }

    /// The view the planner consults; `None` for agents that cannot plan.
    pub fn self_model(&self) -> Option<Box<dyn SelfModel + '_>> {
        match self.config.kind {
            AgentKind::Simple => None,
            AgentKind::SharedPolicy => Some(Box::new(SharedSelfModel(&self.policy))),
            AgentKind::DualPolicy => self
                .distilled
                .as_ref()
                .map(|d| Box::new(DistilledSelfModel(d)) as Box<dyn SelfModel>),
        }
    }

    pub fn plan(&self, history: &ObsHistory, rng: &mut StreamRng) -> Result<PlanResult> {
        let wm = self
            .world_model
            .as_ref()
            .ok_or_else(|| Error::Internal("planned mode on an agent without a world model".into()))?;
        let sm = self
            .self_model()
            .ok_or_else(|| Error::Internal("planned mode on an agent without a self-model".into()))?;
        self.bump(|c| c.plan_calls += 1);
        Ok(plan(wm, sm.as_ref(), history, &self.config.plan, rng))
    }

    /// Choose the executed action for the current step. The returned record
    /// has `reward` and `done` unset; the caller fills them after stepping.
    pub fn act(
        &self,
        history: &ObsHistory,
        state: &EnvState,
        rngs: &mut AgentRngs,
        deterministic: bool,
    ) -> Result<ActionRecord> {
        let obs = history.curr;
        let value_estimate = self.policy.value(&obs);
        let mut record = ActionRecord {
            observation: obs,
            action: Action::ZERO,
            mode: ActionMode::Reflex,
            reward: 0.0,
            value_estimate,
            done: false,
            sampled: None,
        };
        if let Some(a) = reflex_override(state, &self.config.reflex) {
            self.bump(|c| c.reflex_fires += 1);
            record.action = a.clipped();
            return Ok(record);
        }
        match select_mode(&mut rngs.agent, self.config.plan_probability, self.config.kind) {
            ActionMode::Planned => {
                let result = self.plan(history, &mut rngs.planner)?;
                record.mode = ActionMode::Planned;
                record.action = result.chosen_action.clipped();
            }
            _ => {
                self.bump(|c| c.policy_calls += 1);
                let (a, lp) = act_model_free(&self.policy, &obs, &mut rngs.agent, deterministic);
                record.mode = ActionMode::ModelFree;
                record.action = a.clipped();
                record.sampled = Some((a, lp));
            }
        }
        Ok(record)
    }
}
