//! Central finite-difference checks of every analytic gradient: the raw
//! network backward pass for each architecture used in experiments, and the
//! four training losses.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::agents::{act_model_free, DistilledPolicy, ModelFreePolicy};
use crate::env::{Action, Observation};
use crate::nn::{DenseNet, NetSpec, ACTION_DIM, OBS_DIM};
use crate::rng::{self, StreamRng};
use crate::training::{distill_loss, ppo_loss, wm_loss, DistillTarget, PpoSample, TrainHyper, WmSample};
use crate::world_model::{WorldModelNet, WM_INPUT_DIM, WM_OUTPUT_DIM};

/// Two-point central step for raw network checks.
pub const FD_STEP: f64 = 1e-5;
/// Five-point central step for the loss checks. Losses are means of O(1)
/// terms, so the two-point quotient at 1e-5 is dominated by roundoff
/// (about 5e-11 absolute); the wider fourth-order stencil is not.
pub const LOSS_FD_STEP: f64 = 1e-4;
/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckResult {
    pub name: String,
    pub probes: usize,
    pub max_rel_err: f64,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn probe_indices(n: usize, probes: usize, rng: &mut StreamRng) -> Vec<usize> {
    (0..probes).map(|_| rng.gen_range(0..n)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stencil {
    Central(f64),
    FivePoint(f64),
}

fn derivative<F: FnMut(&[f64]) -> f64>(f: &mut F, buf: &mut [f64], i: usize, stencil: Stencil) -> f64 {
    let x = buf[i];
    let mut at = |d: f64| {
        buf[i] = x + d;
        let v = f(buf);
        buf[i] = x;
        v
    };
    match stencil {
        Stencil::Central(h) => (at(h) - at(-h)) / (2.0 * h),
        Stencil::FivePoint(h) => (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h),
    }
}

/// Checks `grad` of `f` at `x` on `probes` random coordinates.
fn check<F: FnMut(&[f64]) -> f64>(
    name: &str,
    x: &[f64],
    grad: &[f64],
    mut f: F,
    stencil: Stencil,
    probes: usize,
    rng: &mut StreamRng,
) -> GradcheckResult {
    let mut worst: f64 = 0.0;
    let mut buf = x.to_vec();
    for i in probe_indices(x.len(), probes, rng) {
        let numeric = derivative(&mut f, &mut buf, i, stencil);
        worst = worst.max(rel_err(grad[i], numeric));
    }
    GradcheckResult {
        name: name.to_string(),
        probes,
        max_rel_err: worst,
    }
}

fn gaussian_vec(n: usize, rng: &mut StreamRng) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn uniform_obs(rng: &mut StreamRng) -> Observation {
    let mut o = [0.0; OBS_DIM];
    o.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    Observation(o)
}

/// Parameter gradient of `c · net(x)` for a random projection `c`.
pub fn check_network(name: &str, spec: NetSpec, probes: usize, seed: u64) -> GradcheckResult {
    let mut r = rng::stream(seed, name);
    let net = DenseNet::orthogonal(spec.clone(), std::f64::consts::SQRT_2, &vec![1.0; spec.output_dim], &mut r);
    let x = gaussian_vec(spec.input_dim, &mut r);
    let c = gaussian_vec(spec.output_dim, &mut r);
    let grads = net.backward(&x, &c).expect("shapes match").param_grads;
    let objective = |p: &[f64]| {
        let n = DenseNet::from_params(spec.clone(), p.to_vec()).unwrap();
        n.forward(&x).unwrap().iter().zip(&c).map(|(y, c)| y * c).sum()
    };
    check(name, net.params(), &grads, objective, Stencil::Central(FD_STEP), probes, &mut r)
}

const HIDDEN: [&[usize]; 3] = [&[32], &[64, 64], &[128, 128, 128, 128]];

fn label(h: &[usize]) -> String {
    h.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("x")
}

pub fn check_networks(probes: usize, seed: u64) -> Vec<GradcheckResult> {
    let mut out = Vec::new();
    for h in HIDDEN {
        let h = h.to_vec();
        out.push(check_network(&format!("actor 6→{}→2", label(&h)), NetSpec::new(OBS_DIM, h.clone(), ACTION_DIM).unwrap(), probes, seed));
        out.push(check_network(&format!("critic 6→{}→1", label(&h)), NetSpec::new(OBS_DIM, h.clone(), 1).unwrap(), probes, seed));
        out.push(check_network(&format!("distilled 6→{}→3", label(&h)), NetSpec::new(OBS_DIM, h.clone(), ACTION_DIM + 1).unwrap(), probes, seed));
    }
    out.push(check_network(
        "world model 20→64x64→7",
        NetSpec::new(WM_INPUT_DIM, vec![64, 64], WM_OUTPUT_DIM).unwrap(),
        probes,
        seed,
    ));
    out
}

fn flatten_policy(p: &ModelFreePolicy) -> Vec<f64> {
    let mut v = p.actor.params().to_vec();
    v.extend_from_slice(p.critic.params());
    v.extend_from_slice(&p.log_std);
    v
}

fn unflatten_policy(template: &ModelFreePolicy, v: &[f64]) -> ModelFreePolicy {
    let (na, nc) = (template.actor.num_params(), template.critic.num_params());
    ModelFreePolicy {
        actor: DenseNet::from_params(template.actor.spec().clone(), v[..na].to_vec()).unwrap(),
        critic: DenseNet::from_params(template.critic.spec().clone(), v[na..na + nc].to_vec()).unwrap(),
        log_std: [v[na + nc], v[na + nc + 1]],
    }
}

/// Clipped surrogate + value + entropy loss. Behavior log-probs are jittered
/// so that both sides of the clip are exercised.
pub fn check_ppo_loss(hidden: &[usize], probes: usize, seed: u64) -> GradcheckResult {
    let mut r = rng::stream(seed, "ppo-loss");
    let mut policy = ModelFreePolicy::new(hidden, &mut r).unwrap();
    policy.log_std = [-0.3, 0.2];
    let hyper = TrainHyper {
        entropy_coef: 0.01,
        ..TrainHyper::default()
    };
    let batch: Vec<PpoSample> = (0..32)
        .map(|_| {
            let obs = uniform_obs(&mut r);
            let (action, lp) = act_model_free(&policy, &obs, &mut r, false);
            PpoSample {
                observation: obs,
                action,
                old_log_prob: lp + r.gen_range(-0.4..0.4),
                advantage: r.sample(StandardNormal),
                ret: r.gen_range(-1.0..1.0),
            }
        })
        .collect();
    let (_, g) = ppo_loss(&policy, &batch, &hyper);
    let mut grad = g.actor.clone();
    grad.extend_from_slice(&g.critic);
    grad.extend_from_slice(&g.log_std);
    let x = flatten_policy(&policy);
    let f = |v: &[f64]| ppo_loss(&unflatten_policy(&policy, v), &batch, &hyper).0.total;
    check(&format!("PPO loss ({})", label(hidden)), &x, &grad, f, Stencil::FivePoint(LOSS_FD_STEP), probes, &mut r)
}

pub fn check_wm_loss(hidden: &[usize], probes: usize, seed: u64) -> GradcheckResult {
    let mut r = rng::stream(seed, "wm-loss");
    let wm = WorldModelNet::new(hidden, &mut r).unwrap();
    let batch: Vec<WmSample> = (0..32)
        .map(|_| {
            let mut input = [0.0; WM_INPUT_DIM];
            input.iter_mut().for_each(|v| *v = r.gen_range(-1.0..1.0));
            let mut target = [0.0; WM_OUTPUT_DIM];
            target.iter_mut().for_each(|v| *v = r.gen_range(-1.0..1.0));
            WmSample { input, target }
        })
        .collect();
    let (_, grad) = wm_loss(&wm, &batch);
    let spec = wm.net.spec().clone();
    let f = |v: &[f64]| {
        let w = WorldModelNet::from_net(DenseNet::from_params(spec.clone(), v.to_vec()).unwrap()).unwrap();
        wm_loss(&w, &batch).0
    };
    check(&format!("world model MSE ({})", label(hidden)), wm.net.params(), &grad, f, Stencil::FivePoint(LOSS_FD_STEP), probes, &mut r)
}

/// `ActionNll` checks the likelihood term alone (kd_weight 0); `Total` adds
/// the weighted value KD term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistillTerm {
    ActionNll,
    Total,
}

pub fn check_distill_loss(hidden: &[usize], term: DistillTerm, probes: usize, seed: u64) -> GradcheckResult {
    let mut r = rng::stream(seed, "distill-loss");
    let mut d = DistilledPolicy::new(hidden, &mut r).unwrap();
    d.log_std = [0.4, -0.6];
    let hyper = TrainHyper {
        kd_temperature: 1.5,
        kd_weight: if term == DistillTerm::ActionNll { 0.0 } else { 0.5 },
        ..TrainHyper::default()
    };
    let batch: Vec<DistillTarget> = (0..32)
        .map(|_| DistillTarget {
            observation: uniform_obs(&mut r),
            action: Action([r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]),
            value: r.gen_range(-1.0..1.0),
        })
        .collect();
    let (_, g) = distill_loss(&d, &batch, &hyper);
    let mut grad = g.trunk.clone();
    grad.extend_from_slice(&g.log_std);
    let mut x = d.trunk.params().to_vec();
    x.extend_from_slice(&d.log_std);
    let n = d.trunk.num_params();
    let spec = d.trunk.spec().clone();
    let f = |v: &[f64]| {
        let p = DistilledPolicy {
            trunk: DenseNet::from_params(spec.clone(), v[..n].to_vec()).unwrap(),
            log_std: [v[n], v[n + 1]],
        };
        distill_loss(&p, &batch, &hyper).0.total
    };
    let name = match term {
        DistillTerm::ActionNll => "distillation action NLL",
        DistillTerm::Total => "distillation NLL + value KD",
    };
    check(&format!("{name} ({})", label(hidden)), &x, &grad, f, Stencil::FivePoint(LOSS_FD_STEP), probes, &mut r)
}

pub fn check_losses(probes: usize, seed: u64) -> Vec<GradcheckResult> {
    vec![
        check_ppo_loss(&[64, 64], probes, seed),
        check_wm_loss(&[64, 64], probes, seed),
        check_distill_loss(&[64, 64], DistillTerm::ActionNll, probes, seed),
        check_distill_loss(&[64, 64], DistillTerm::Total, probes, seed),
    ]
}

/// Every network and loss check.
pub fn run_all(probes: usize, seed: u64) -> Vec<GradcheckResult> {
    let mut out = check_networks(probes, seed);
    out.extend(check_losses(probes, seed));
    out
}
