//! Learning procedures and the collect/update schedule.
//!
//! * PPO (clipped surrogate) trains the model-free actor, critic and log-std,
//!   using only steps where the model-free policy actually produced the action.
//! * The world model regresses `[obs_{t+1}, r_{t+1}]` on every transition.
//! * The distilled policy maximizes the likelihood of every executed action
//!   (model-free, planned and reflex alike) and regresses the critic's value.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::agents::{ActionMode, ActionRecord, Agent, AgentRngs, DistilledPolicy, ModelFreePolicy};
use crate::env::{self, Action, EnvConfig, Observation, Outcome};
use crate::error::{check_len, Error, Result};
use crate::nn::{gaussian_entropy, gaussian_logprob, gaussian_logprob_grad, Adam, ACTION_DIM};
use crate::rng::{self, StreamRng};
use crate::world_model::{wm_features, ObsHistory, WorldModelNet, WM_OUTPUT_DIM};

/// Log-std entries are kept inside this range after every update.
pub const LOG_STD_BOUNDS: (f64, f64) = (-5.0, 2.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_epsilon: f64,
    pub ppo_epochs: usize,
    pub minibatch_size: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub kd_temperature: f64,
    pub kd_weight: f64,
    pub lr_policy: f64,
    pub lr_wm: f64,
    pub lr_distill: f64,
    pub rollout_interval: usize,
    pub distill_capacity: usize,
    pub distill_epochs: usize,
    pub wm_epochs: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip_epsilon: 0.2,
            ppo_epochs: 10,
            minibatch_size: 64,
            value_coef: 0.5,
            entropy_coef: 0.0,
            kd_temperature: 1.0,
            kd_weight: 0.5,
            lr_policy: 3e-4,
            lr_wm: 3e-4,
            lr_distill: 3e-4,
            rollout_interval: 2048,
            distill_capacity: 10_000,
            distill_epochs: 4,
            wm_epochs: 4,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0) || !(self.kd_temperature > 0.0) {
            return Err(Error::Config("train.clip_epsilon and train.kd_temperature must be positive".into()));
        }
        if self.rollout_interval == 0 || self.minibatch_size == 0 || self.distill_capacity == 0 {
            return Err(Error::Config(
                "train.rollout_interval, train.minibatch and train.distill_capacity must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// GAE advantages and returns. `values` carries one bootstrap entry past the
/// last reward; `dones[t]` cuts both the bootstrap and the recursion at `t`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("values", rewards.len() + 1, values.len())?;
    check_len("dones", rewards.len(), dones.len())?;
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * cont - values[t];
        running = delta + gamma * lambda * cont * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// One collected step plus the neighbouring observations the learners need.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub prev_observation: Observation,
    pub record: ActionRecord,
    pub next_observation: Observation,
}

#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    /// Critic value of the observation following the last transition
    /// (ignored when that transition ended an episode).
    pub bootstrap_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpoSample {
    pub observation: Observation,
    pub action: Action,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WmSample {
    pub input: [f64; 20],
    pub target: [f64; WM_OUTPUT_DIM],
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        self.transitions.push(t);
    }

    pub fn clear(&mut self) {
        self.transitions.clear();
        self.bootstrap_value = 0.0;
    }

    /// Advantages over the full mixed-mode sequence, then only the
    /// model-free records are kept for the surrogate.
    pub fn ppo_samples(&self, gamma: f64, lambda: f64) -> Result<Vec<PpoSample>> {
        let rewards: Vec<f64> = self.transitions.iter().map(|t| t.record.reward).collect();
        let dones: Vec<bool> = self.transitions.iter().map(|t| t.record.done).collect();
        let mut values: Vec<f64> = self.transitions.iter().map(|t| t.record.value_estimate).collect();
        values.push(self.bootstrap_value);
        let (adv, ret) = compute_gae(&rewards, &values, &dones, gamma, lambda)?;
        Ok(self
            .transitions
            .iter()
            .zip(adv.into_iter().zip(ret))
            .filter_map(|(t, (advantage, ret))| match (t.record.mode, t.record.sampled) {
                (ActionMode::ModelFree, Some((action, old_log_prob))) => Some(PpoSample {
                    observation: t.record.observation,
                    action,
                    old_log_prob,
                    advantage,
                    ret,
                }),
                _ => None,
            })
            .collect())
    }

    pub fn wm_samples(&self) -> Vec<WmSample> {
        self.transitions
            .iter()
            .map(|t| {
                let x = wm_features(&t.prev_observation, &t.record.observation, t.record.action);
                let mut target = [0.0; WM_OUTPUT_DIM];
                target[..6].copy_from_slice(&t.next_observation.0);
                target[6] = t.record.reward;
                WmSample { input: x.0, target }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillSample {
    pub observation: Observation,
    pub action: Action,
    pub mode: ActionMode,
    pub critic_value: f64,
}

/// Bounded FIFO of every executed action.
#[derive(Clone, Debug)]
pub struct DistillBuffer {
    capacity: usize,
    samples: VecDeque<DistillSample>,
}

impl DistillBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            samples: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, s: DistillSample) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(s);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &DistillSample> {
        self.samples.iter()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyGrads {
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
    pub log_std: [f64; ACTION_DIM],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoLoss {
    pub total: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Clipped PPO objective on a minibatch whose advantages are already
/// normalized. `total = −surrogate + value_coef·value_loss − entropy_coef·entropy`.
pub fn ppo_loss(policy: &ModelFreePolicy, batch: &[PpoSample], hyper: &TrainHyper) -> (PpoLoss, PolicyGrads) {
    let mut grads = PolicyGrads {
        actor: vec![0.0; policy.actor.num_params()],
        critic: vec![0.0; policy.critic.num_params()],
        log_std: [0.0; ACTION_DIM],
    };
    let mut loss = PpoLoss::default();
    if batch.is_empty() {
        return (loss, grads);
    }
    let n = batch.len() as f64;
    let eps = hyper.clip_epsilon;
    let mut clipped = 0usize;
    for s in batch {
        let x = s.observation.as_slice();
        let actor_cache = policy.actor.forward_cached(x).expect("6-d observation");
        let mean = actor_cache.output();
        let lp = gaussian_logprob(mean, &policy.log_std, s.action.as_slice()).expect("2-d action");
        let ratio = (lp - s.old_log_prob).exp();
        let unclipped = ratio * s.advantage;
        let clipped_term = ratio.clamp(1.0 - eps, 1.0 + eps) * s.advantage;
        loss.surrogate += unclipped.min(clipped_term) / n;
        let inactive = (s.advantage > 0.0 && ratio > 1.0 + eps) || (s.advantage < 0.0 && ratio < 1.0 - eps);
        if inactive {
            clipped += 1;
        } else {
            let (d_mean, d_log_std) = gaussian_logprob_grad(mean, &policy.log_std, s.action.as_slice());
            let scale = -unclipped / n;
            let out_grad: Vec<f64> = d_mean.iter().map(|d| d * scale).collect();
            policy
                .actor
                .backward_into(&actor_cache, &out_grad, &mut grads.actor)
                .expect("shapes match");
            for k in 0..ACTION_DIM {
                grads.log_std[k] += d_log_std[k] * scale;
            }
        }

        let critic_cache = policy.critic.forward_cached(x).expect("6-d observation");
        let v = critic_cache.output()[0];
        let err = v - s.ret;
        loss.value_loss += err * err / n;
        policy
            .critic
            .backward_into(&critic_cache, &[hyper.value_coef * 2.0 * err / n], &mut grads.critic)
            .expect("shapes match");
    }
    loss.entropy = gaussian_entropy(&policy.log_std);
    for g in grads.log_std.iter_mut() {
        *g -= hyper.entropy_coef;
    }
    loss.clip_fraction = clipped as f64 / n;
    loss.total = -loss.surrogate + hyper.value_coef * loss.value_loss - hyper.entropy_coef * loss.entropy;
    (loss, grads)
}

/// Mean squared error over all seven output slots.
pub fn wm_loss(wm: &WorldModelNet, batch: &[WmSample]) -> (f64, Vec<f64>) {
    let mut grads = vec![0.0; wm.net.num_params()];
    if batch.is_empty() {
        return (0.0, grads);
    }
    let denom = (batch.len() * WM_OUTPUT_DIM) as f64;
    let mut loss = 0.0;
    for s in batch {
        let cache = wm.net.forward_cached(&s.input).expect("20-d input");
        let out_grad: Vec<f64> = cache
            .output()
            .iter()
            .zip(&s.target)
            .map(|(y, t)| {
                loss += (y - t).powi(2) / denom;
                2.0 * (y - t) / denom
            })
            .collect();
        wm.net.backward_into(&cache, &out_grad, &mut grads).expect("shapes match");
    }
    (loss, grads)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillTarget {
    pub observation: Observation,
    pub action: Action,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistilledGrads {
    pub trunk: Vec<f64>,
    pub log_std: [f64; ACTION_DIM],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillLoss {
    pub total: f64,
    /// Mean negative log-likelihood of the executed actions.
    pub action_nll: f64,
    /// `T² · mean (V^π − V^π̃)²`.
    pub kd: f64,
}

/// `total = action_nll + kd_weight · kd`; both heads share the trunk.
pub fn distill_loss(
    distilled: &DistilledPolicy,
    batch: &[DistillTarget],
    hyper: &TrainHyper,
) -> (DistillLoss, DistilledGrads) {
    let mut grads = DistilledGrads {
        trunk: vec![0.0; distilled.trunk.num_params()],
        log_std: [0.0; ACTION_DIM],
    };
    let mut loss = DistillLoss::default();
    if batch.is_empty() {
        return (loss, grads);
    }
    let n = batch.len() as f64;
    let t2 = hyper.kd_temperature * hyper.kd_temperature;
    for s in batch {
        let cache = distilled.trunk.forward_cached(s.observation.as_slice()).expect("6-d observation");
        let out = cache.output();
        let mean = &out[..ACTION_DIM];
        let lp = gaussian_logprob(mean, &distilled.log_std, s.action.as_slice()).expect("2-d action");
        loss.action_nll -= lp / n;
        let (d_mean, d_log_std) = gaussian_logprob_grad(mean, &distilled.log_std, s.action.as_slice());
        let err = out[ACTION_DIM] - s.value;
        loss.kd += t2 * err * err / n;
        let out_grad = [
            -d_mean[0] / n,
            -d_mean[1] / n,
            hyper.kd_weight * t2 * 2.0 * err / n,
        ];
        distilled
            .trunk
            .backward_into(&cache, &out_grad, &mut grads.trunk)
            .expect("shapes match");
        for k in 0..ACTION_DIM {
            grads.log_std[k] -= d_log_std[k] / n;
        }
    }
    loss.total = loss.action_nll + hyper.kd_weight * loss.kd;
    (loss, grads)
}

/// Adam state for every network an agent owns.
#[derive(Clone, Debug)]
pub struct Optimizers {
    pub actor: Adam,
    pub critic: Adam,
    pub policy_log_std: Adam,
    pub world_model: Option<Adam>,
    pub distilled: Option<Adam>,
    pub distilled_log_std: Option<Adam>,
}

impl Optimizers {
    pub fn for_agent(agent: &Agent, hyper: &TrainHyper) -> Self {
        Self {
            actor: Adam::new(agent.policy.actor.num_params(), hyper.lr_policy),
            critic: Adam::new(agent.policy.critic.num_params(), hyper.lr_policy),
            policy_log_std: Adam::new(ACTION_DIM, hyper.lr_policy),
            world_model: agent.world_model.as_ref().map(|w| Adam::new(w.net.num_params(), hyper.lr_wm)),
            distilled: agent.distilled.as_ref().map(|d| Adam::new(d.trunk.num_params(), hyper.lr_distill)),
            distilled_log_std: agent.distilled.as_ref().map(|_| Adam::new(ACTION_DIM, hyper.lr_distill)),
        }
    }
}

fn clamp_log_std(log_std: &mut [f64; ACTION_DIM]) {
    for s in log_std.iter_mut() {
        *s = s.clamp(LOG_STD_BOUNDS.0, LOG_STD_BOUNDS.1);
    }
}

fn minibatches<'a, T>(items: &'a [T], size: usize, order: &'a [usize]) -> impl Iterator<Item = Vec<&'a T>> + 'a {
    order.chunks(size).map(move |chunk| chunk.iter().map(|&i| &items[i]).collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoReport {
    pub records: usize,
    pub minibatch_updates: usize,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Surrogate and maximum |ratio − 1| of the very first minibatch.
    pub first_surrogate: f64,
    pub first_max_ratio_deviation: f64,
    pub warning: Option<String>,
}

fn normalize(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (sd + 1e-8);
    }
}

pub fn ppo_update(
    policy: &mut ModelFreePolicy,
    opt: &mut Optimizers,
    samples: &[PpoSample],
    hyper: &TrainHyper,
    rng: &mut StreamRng,
) -> Result<PpoReport> {
    let mut report = PpoReport {
        records: samples.len(),
        ..PpoReport::default()
    };
    if samples.is_empty() {
        report.warning = Some("empty PPO buffer; update skipped".into());
        return Ok(report);
    }
    let mut batch = samples.to_vec();
    let mut adv: Vec<f64> = batch.iter().map(|s| s.advantage).collect();
    normalize(&mut adv);
    for (s, a) in batch.iter_mut().zip(adv) {
        s.advantage = a;
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    for _ in 0..hyper.ppo_epochs {
        order.shuffle(rng);
        for mb in minibatches(&batch, hyper.minibatch_size, &order) {
            let mb: Vec<PpoSample> = mb.into_iter().cloned().collect();
            if report.minibatch_updates == 0 {
                report.first_max_ratio_deviation = mb
                    .iter()
                    .map(|s| {
                        let mean = policy.action_mean(&s.observation);
                        let lp = gaussian_logprob(mean.as_slice(), &policy.log_std, s.action.as_slice()).unwrap();
                        ((lp - s.old_log_prob).exp() - 1.0).abs()
                    })
                    .fold(0.0, f64::max);
            }
            let (loss, grads) = ppo_loss(policy, &mb, hyper);
            if report.minibatch_updates == 0 {
                report.first_surrogate = loss.surrogate;
            }
            policy.actor.adam_step(&grads.actor, &mut opt.actor)?;
            policy.critic.adam_step(&grads.critic, &mut opt.critic)?;
            opt.policy_log_std.step(&mut policy.log_std, &grads.log_std)?;
            clamp_log_std(&mut policy.log_std);
            report.minibatch_updates += 1;
            report.surrogate += loss.surrogate;
            report.value_loss += loss.value_loss;
            report.entropy += loss.entropy;
            report.clip_fraction += loss.clip_fraction;
        }
    }
    let k = report.minibatch_updates as f64;
    report.surrogate /= k;
    report.value_loss /= k;
    report.entropy /= k;
    report.clip_fraction /= k;
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub samples: usize,
    /// Mean minibatch loss of the first and the last epoch.
    pub first_epoch_loss: f64,
    pub last_epoch_loss: f64,
}

pub fn wm_update(
    wm: &mut WorldModelNet,
    adam: &mut Adam,
    samples: &[WmSample],
    hyper: &TrainHyper,
    rng: &mut StreamRng,
) -> Result<LossReport> {
    let mut report = LossReport {
        samples: samples.len(),
        ..LossReport::default()
    };
    if samples.is_empty() {
        return Ok(report);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..hyper.wm_epochs {
        order.shuffle(rng);
        let (mut total, mut count) = (0.0, 0);
        for mb in minibatches(samples, hyper.minibatch_size, &order) {
            let mb: Vec<WmSample> = mb.into_iter().cloned().collect();
            let (loss, grads) = wm_loss(wm, &mb);
            wm.net.adam_step(&grads, adam)?;
            total += loss;
            count += 1;
        }
        let mean = total / count as f64;
        if epoch == 0 {
            report.first_epoch_loss = mean;
        }
        report.last_epoch_loss = mean;
    }
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub samples: usize,
    pub first_epoch: DistillLoss,
    pub last_epoch: DistillLoss,
}

/// Distillation over the whole FIFO window. Value targets come from the
/// current critic.
pub fn distill_update(
    distilled: &mut DistilledPolicy,
    trunk_adam: &mut Adam,
    log_std_adam: &mut Adam,
    source_critic: &ModelFreePolicy,
    buffer: &DistillBuffer,
    hyper: &TrainHyper,
    rng: &mut StreamRng,
) -> Result<DistillReport> {
    let mut report = DistillReport {
        samples: buffer.len(),
        ..DistillReport::default()
    };
    if buffer.is_empty() {
        return Ok(report);
    }
    let targets: Vec<DistillTarget> = buffer
        .iter()
        .map(|s| DistillTarget {
            observation: s.observation,
            action: s.action,
            value: source_critic.value(&s.observation),
        })
        .collect();
    let mut order: Vec<usize> = (0..targets.len()).collect();
    for epoch in 0..hyper.distill_epochs {
        order.shuffle(rng);
        let mut acc = DistillLoss::default();
        let mut count = 0;
        for mb in minibatches(&targets, hyper.minibatch_size, &order) {
            let mb: Vec<DistillTarget> = mb.into_iter().cloned().collect();
            let (loss, grads) = distill_loss(distilled, &mb, hyper);
            distilled.trunk.adam_step(&grads.trunk, trunk_adam)?;
            log_std_adam.step(&mut distilled.log_std, &grads.log_std)?;
            clamp_log_std(&mut distilled.log_std);
            acc.total += loss.total;
            acc.action_nll += loss.action_nll;
            acc.kd += loss.kd;
            count += 1;
        }
        let k = count as f64;
        let mean = DistillLoss {
            total: acc.total / k,
            action_nll: acc.action_nll / k,
            kd: acc.kd / k,
        };
        if epoch == 0 {
            report.first_epoch = mean;
        }
        report.last_epoch = mean;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode_index: usize,
    pub outcome: Outcome,
    pub steps: usize,
    pub ret: f64,
    pub plan_steps: usize,
    pub reflex_steps: usize,
    pub modelfree_steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub step: usize,
    pub ppo: PpoReport,
    pub world_model: Option<LossReport>,
    pub distill: Option<DistillReport>,
}

pub struct TrainOutput {
    pub agent: Agent,
    pub episodes: Vec<EpisodeLog>,
    pub updates: Vec<UpdateReport>,
}

#[derive(Default)]
struct EpisodeTally {
    steps: usize,
    ret: f64,
    plan: usize,
    reflex: usize,
    model_free: usize,
}

impl EpisodeTally {
    fn add(&mut self, rec: &ActionRecord) {
        self.steps += 1;
        self.ret += rec.reward;
        match rec.mode {
            ActionMode::ModelFree => self.model_free += 1,
            ActionMode::Planned => self.plan += 1,
            ActionMode::Reflex => self.reflex += 1,
        }
    }

    fn finish(self, episode_index: usize, outcome: Outcome) -> EpisodeLog {
        EpisodeLog {
            episode_index,
            outcome,
            steps: self.steps,
            ret: self.ret,
            plan_steps: self.plan,
            reflex_steps: self.reflex,
            modelfree_steps: self.model_free,
        }
    }
}

/// Live acting state: the current episode plus the streams that drive it.
pub struct Collector {
    env_rng: StreamRng,
    rngs: AgentRngs,
    state: env::EnvState,
    history: ObsHistory,
    tally: EpisodeTally,
    pub episodes: Vec<EpisodeLog>,
}

impl Collector {
    pub fn new(env_config: &EnvConfig, seed: u64) -> Result<Self> {
        let mut env_rng = rng::stream(seed, rng::labels::ENV);
        let (state, obs) = env::reset(env_config, &mut env_rng)?;
        Ok(Self {
            env_rng,
            rngs: AgentRngs::training(seed),
            state,
            history: ObsHistory::start(obs),
            tally: EpisodeTally::default(),
            episodes: Vec::new(),
        })
    }

    /// Current observation history (the critic bootstraps from `curr`).
    pub fn history(&self) -> &ObsHistory {
        &self.history
    }

    /// Act once, route the step into both buffers and return whether the
    /// episode ended. A finished episode is logged and the env reset.
    pub fn step(
        &mut self,
        agent: &Agent,
        env_config: &EnvConfig,
        buffer: &mut RolloutBuffer,
        distill: &mut DistillBuffer,
    ) -> Result<bool> {
        let mut rec = agent.act(&self.history, &self.state, &mut self.rngs, false)?;
        let res = env::step(&self.state, rec.action, env_config, &mut self.env_rng)?;
        rec.reward = res.reward;
        rec.done = res.outcome.is_terminal();
        self.tally.add(&rec);
        if agent.kind().has_distilled() {
            distill.push(DistillSample {
                observation: rec.observation,
                action: rec.action,
                mode: rec.mode,
                critic_value: rec.value_estimate,
            });
        }
        let done = rec.done;
        buffer.push(Transition {
            prev_observation: self.history.prev,
            record: rec,
            next_observation: res.observation,
        });
        if done {
            let index = self.episodes.len();
            self.episodes.push(std::mem::take(&mut self.tally).finish(index, res.outcome));
            let (s, o) = env::reset(env_config, &mut self.env_rng)?;
            self.state = s;
            self.history = ObsHistory::start(o);
        } else {
            self.state = res.state;
            self.history.push(res.observation);
        }
        Ok(done)
    }
}

/// Run one collection/update cycle per `rollout_interval` steps until
/// `total_steps` environment steps have been taken. Only completed
/// episodes are logged.
pub fn training_loop(
    mut agent: Agent,
    env_config: &EnvConfig,
    hyper: &TrainHyper,
    total_steps: usize,
    seed: u64,
) -> Result<TrainOutput> {
    env_config.validate()?;
    hyper.validate()?;
    agent.config.reflex.validate(env_config.catch_radius)?;
    let mut updates = Vec::new();
    if total_steps == 0 {
        return Ok(TrainOutput {
            agent,
            episodes: Vec::new(),
            updates,
        });
    }
    let mut train_rng = rng::stream(seed, rng::labels::TRAIN);
    let mut opt = Optimizers::for_agent(&agent, hyper);
    let mut buffer = RolloutBuffer::default();
    let mut distill = DistillBuffer::new(hyper.distill_capacity);
    let mut collector = Collector::new(env_config, seed)?;

    for t in 0..total_steps {
        let done = collector.step(&agent, env_config, &mut buffer, &mut distill)?;
        if buffer.len() == hyper.rollout_interval {
            buffer.bootstrap_value = if done { 0.0 } else { agent.policy.value(&collector.history().curr) };
            let report = update_agent(&mut agent, &mut opt, &buffer, &distill, hyper, &mut train_rng, t + 1)?;
            updates.push(report);
            buffer.clear();
        }
    }
    Ok(TrainOutput {
        agent,
        episodes: collector.episodes,
        updates,
    })
}

/// PPO first, then the world model, then distillation against the freshly
/// updated critic.
pub fn update_agent(
    agent: &mut Agent,
    opt: &mut Optimizers,
    buffer: &RolloutBuffer,
    distill: &DistillBuffer,
    hyper: &TrainHyper,
    rng: &mut StreamRng,
    step: usize,
) -> Result<UpdateReport> {
    let samples = buffer.ppo_samples(hyper.gamma, hyper.lambda)?;
    let ppo = ppo_update(&mut agent.policy, opt, &samples, hyper, rng)?;
    let world_model = match (agent.world_model.as_mut(), opt.world_model.as_mut()) {
        (Some(wm), Some(adam)) => Some(wm_update(wm, adam, &buffer.wm_samples(), hyper, rng)?),
        _ => None,
    };
    let distill = match (agent.distilled.as_mut(), opt.distilled.as_mut(), opt.distilled_log_std.as_mut()) {
        (Some(d), Some(trunk), Some(ls)) => {
            Some(distill_update(d, trunk, ls, &agent.policy, distill, hyper, rng)?)
        }
        _ => None,
    };
    Ok(UpdateReport {
        step,
        ppo,
        world_model,
        distill,
    })
}

/// Frozen-parameter evaluation: model-free steps use the actor mean.
pub fn evaluate(agent: &Agent, env_config: &EnvConfig, episodes: usize, seed: u64) -> Result<Vec<EpisodeLog>> {
    env_config.validate()?;
    let mut env_rng = rng::stream(seed, rng::labels::EVAL_ENV);
    let mut rngs = AgentRngs::evaluation(seed);
    let mut logs = Vec::with_capacity(episodes);
    for index in 0..episodes {
        let (mut state, obs) = env::reset(env_config, &mut env_rng)?;
        let mut history = ObsHistory::start(obs);
        let mut tally = EpisodeTally::default();
        loop {
            let mut rec = agent.act(&history, &state, &mut rngs, true)?;
            let res = env::step(&state, rec.action, env_config, &mut env_rng)?;
            rec.reward = res.reward;
            tally.add(&rec);
            if res.outcome.is_terminal() {
                logs.push(tally.finish(index, res.outcome));
                break;
            }
            state = res.state;
            history.push(res.observation);
        }
    }
    Ok(logs)
}
