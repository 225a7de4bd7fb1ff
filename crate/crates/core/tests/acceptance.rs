//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Hard criteria fail the process. Soft criteria are statistical
//! reproductions at desk scale (5 seeds, 150k steps, 500 evaluation
//! episodes); a soft miss prints `FAIL (soft)` and leaves the exit code alone.
//!
//! Experiment results are cached under `$CARGO_TARGET_TMPDIR/acceptance`,
//! keyed by config hash. Delete that directory to force a rerun.
//! `DUALPLAN_ACCEPTANCE_FULL=1` runs the stability check with 5 seeds per
//! replication instead of the 3-seed quick mode.
//! `DUALPLAN_ACCEPTANCE_HARD_ONLY=1` skips the soft criteria.

use std::cell::Cell;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dualplan::agents::{select_mode, ActionMode, Agent, AgentConfig, AgentKind, DistilledSelfModel, ModelFreePolicy, DistilledPolicy};
use dualplan::env::{Action, EnvConfig, EnvState, Observation, Outcome};
use dualplan::gradcheck;
use dualplan::harness::config::{ExperimentConfig, Recipe};
use dualplan::harness::experiment::{read_summary, run_experiment, ExperimentSummary, OutcomeStats};
use dualplan::harness::stats::{summarize, welch_t_test};
use dualplan::nn::param_count;
use dualplan::planner::{plan, score_trajectory, PlanConfig, SimTrajectory};
use dualplan::reflex::{ReflexConfig, ReflexKind};
use dualplan::rng;
use dualplan::training::{compute_gae, training_loop, Collector, DistillBuffer, RolloutBuffer, TrainHyper};
use dualplan::world_model::{wm_predict, Dynamics, ObsHistory, WorldModelNet};
use dualplan::Result;

const GRAD_TOLERANCE: f64 = 1e-5;
const GRAD_PROBES: usize = 100;
const GAE_TOLERANCE: f64 = 1e-10;
const GAE_INSTANCES: usize = 1000;
const STATS_TOLERANCE: f64 = 1e-6;
const MODE_TOLERANCE: f64 = 0.01;
const BASELINE_GAP: f64 = 0.10;
const BASELINE_ALPHA: f64 = 0.01;
const MAP20_GAP: f64 = 0.10;

struct Report {
    hard_failures: usize,
    soft_failures: usize,
}

impl Report {
    fn line(&mut self, n: usize, hard: bool, pass: bool, name: &str, detail: String) {
        let verdict = match (pass, hard) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FAIL (soft)",
        };
        if !pass {
            if hard {
                self.hard_failures += 1;
            } else {
                self.soft_failures += 1;
            }
        }
        println!("criterion {n:>2} [{}] {verdict}: {name}: {detail}", if hard { "hard" } else { "soft" });
    }
}

fn criterion_1() -> (bool, String) {
    let mf = ModelFreePolicy::layout();
    let di = DistilledPolicy::layout();
    let table = [
        (vec![32], 549, 325),
        (vec![64, 64], 9413, 4805),
        (vec![128, 128, 128, 128], 101253, 50821),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (h, want_mf, want_di) in table {
        let (a, b) = (param_count(&h, mf), param_count(&h, di));
        ok &= a == want_mf && b == want_di;
        parts.push(format!("{h:?} {a}/{b}"));
    }
    (ok, parts.join(", "))
}

fn criterion_2() -> (bool, String) {
    let results = gradcheck::run_all(GRAD_PROBES, 0);
    let worst = results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let min_probes = results.iter().map(|r| r.probes).min().unwrap_or(0);
    let ok = worst < GRAD_TOLERANCE && min_probes >= GRAD_PROBES;
    (ok, format!("{} checks, >= {min_probes} probes each, max rel err {worst:.2e} (< {GRAD_TOLERANCE:e})", results.len()))
}

fn double_sum(r: &[f64], v: &[f64], d: &[bool], g: f64, l: f64, t: usize) -> f64 {
    let mut sum = 0.0;
    for k in t..r.len() {
        let mask = if d[k] { 0.0 } else { 1.0 };
        sum += (g * l).powi((k - t) as i32) * (r[k] + g * v[k + 1] * mask - v[k]);
        if d[k] {
            break;
        }
    }
    sum
}

fn criterion_3() -> (bool, String) {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut terminals = 0;
    for _ in 0..GAE_INSTANCES {
        let n = r.gen_range(1..80);
        let rewards: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..=n).map(|_| r.gen_range(-2.0..2.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| r.gen_bool(0.1)).collect();
        terminals += dones.iter().filter(|&&d| d).count();
        let (g, l) = (r.gen_range(0.8..1.0), r.gen_range(0.0..1.0));
        let (adv, _) = compute_gae(&rewards, &values, &dones, g, l).unwrap();
        for t in 0..n {
            worst = worst.max((adv[t] - double_sum(&rewards, &values, &dones, g, l, t)).abs());
        }

        let cfg = PlanConfig::default();
        let depth = r.gen_range(1..=cfg.max_depth);
        let terminal = r.gen_bool(0.4);
        let traj = SimTrajectory {
            root_action: Action::ZERO,
            actions: vec![Action::ZERO; depth],
            rewards: rewards.iter().cycle().take(depth).copied().collect(),
            values: values.iter().cycle().take(depth + 1).copied().collect(),
            terminal,
            terminated_early: terminal && depth < cfg.max_depth,
            valid: true,
        };
        let mut d = vec![false; depth];
        d[depth - 1] = terminal;
        let want = double_sum(&traj.rewards, &traj.values, &d, cfg.gamma, cfg.lambda, 0);
        worst = worst.max((score_trajectory(&traj, &cfg) - want).abs());
    }
    (worst < GAE_TOLERANCE, format!("{GAE_INSTANCES} instances ({terminals} terminals), max abs err {worst:.2e}"))
}

/// Wraps a dynamics model and counts its calls.
struct Counting<'a, W: Dynamics> {
    inner: &'a W,
    calls: Cell<usize>,
}

impl<W: Dynamics> Dynamics for Counting<'_, W> {
    fn predict(&self, p: &Observation, c: &Observation, a: Action) -> Result<(Observation, f64)> {
        self.calls.set(self.calls.get() + 1);
        self.inner.predict(p, c, a)
    }
}

/// Stands still with zero reward, so every candidate scores the same.
struct Still;

impl Dynamics for Still {
    fn predict(&self, _p: &Observation, c: &Observation, _a: Action) -> Result<(Observation, f64)> {
        Ok((*c, 0.0))
    }
}

fn criterion_4() -> (bool, String) {
    let cfg = PlanConfig::default();
    let mut init = rng::stream(4, rng::labels::INIT);
    let wm = WorldModelNet::new(&[64, 64], &mut init).unwrap();
    let distilled = DistilledPolicy::new(&[64, 64], &mut init).unwrap();
    let sm = DistilledSelfModel(&distilled);
    let history = ObsHistory::start(Observation([0.2, 0.3, 0.8, 0.7, -0.5, 0.1]));

    // A model that never terminates makes exactly n × depth calls.
    let still = Counting { inner: &Still, calls: Cell::new(0) };
    let tied = plan(&still, &sm, &history, &cfg, &mut rng::stream(4, rng::labels::PLANNER));
    let expected = cfg.n_root_candidates * cfg.max_depth;
    let shape_ok = still.calls.get() == expected && tied.trajectories.len() == cfg.n_root_candidates;
    let tie_ok = tied.chosen_index == Some(0) && tied.chosen_action == tied.candidates[0];

    // With a real network every call is accounted for by the trajectories,
    // the choice is the first maximum, and a reseeded run is bit-identical.
    let mut argmax_ok = true;
    let mut repro_ok = true;
    let mut calls_ok = true;
    for seed in 0..50u64 {
        let counted = Counting { inner: &wm, calls: Cell::new(0) };
        let r = plan(&counted, &sm, &history, &cfg, &mut rng::stream(seed, rng::labels::PLANNER));
        let steps: usize = r.trajectories.iter().map(|t| t.rewards.len()).sum();
        let early = r.trajectories.iter().any(|t| t.terminated_early);
        calls_ok &= counted.calls.get() == steps && (early || steps == expected);
        let best = r.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first = r.scores.iter().position(|&s| s == best);
        argmax_ok &= r.chosen_index == first;
        let again = plan(&wm, &sm, &history, &cfg, &mut rng::stream(seed, rng::labels::PLANNER));
        repro_ok &= again == r;
    }
    // the real model is the one the planner uses through wm_predict
    let direct = wm_predict(&wm, &history.prev, &history.curr, Action([0.3, 0.4])).unwrap();
    repro_ok &= direct == wm.predict(&history.prev, &history.curr, Action([0.3, 0.4])).unwrap();
    let ok = shape_ok && tie_ok && argmax_ok && repro_ok && calls_ok;
    (
        ok,
        format!(
            "calls {} (want {expected}), tie -> index {:?}, argmax {argmax_ok}, call accounting {calls_ok}, reproducible {repro_ok}",
            still.calls.get(),
            tied.chosen_index
        ),
    )
}

fn small_agent(kind: AgentKind, reflex: ReflexKind, seed: u64) -> Agent {
    let cfg = AgentConfig {
        kind,
        hidden_policy: vec![16],
        hidden_distilled: vec![16],
        hidden_world_model: vec![16],
        reflex: ReflexConfig {
            kind: reflex,
            trigger_distance: 1.5,
        },
        ..AgentConfig::default()
    };
    Agent::new(cfg, &mut rng::stream(seed, rng::labels::INIT)).unwrap()
}

fn criterion_9() -> (bool, String) {
    let env = EnvConfig::default();
    let mut notes = Vec::new();

    // reflex precedence: fires even when planning is certain
    let mut a = small_agent(AgentKind::DualPolicy, ReflexKind::Freeze, 1);
    a.config.plan_probability = 1.0;
    let near = EnvState {
        agent: [5.0, 5.0],
        goal: [9.0, 9.0],
        predator: [5.5, 5.5],
        step_index: 0,
        outcome: Outcome::Ongoing,
    };
    let mut rngs = dualplan::agents::AgentRngs::training(1);
    let rec = a
        .act(&ObsHistory::start(Observation::default()), &near, &mut rngs, false)
        .unwrap();
    let reflex_ok = rec.mode == ActionMode::Reflex && rec.action == Action::ZERO && rec.sampled.is_none();
    notes.push(format!("reflex precedence {reflex_ok}"));

    // buffer routing over a mixed-mode rollout
    let agent = small_agent(AgentKind::DualPolicy, ReflexKind::Flight, 2);
    let mut c = Collector::new(&env, 2).unwrap();
    let mut buf = RolloutBuffer::default();
    let mut distill = DistillBuffer::new(4000);
    for _ in 0..4000 {
        c.step(&agent, &env, &mut buf, &mut distill).unwrap();
    }
    let count = |m| buf.transitions.iter().filter(|t| t.record.mode == m).count();
    let all_modes = [ActionMode::ModelFree, ActionMode::Planned, ActionMode::Reflex]
        .iter()
        .all(|&m| count(m) > 0);
    let ppo = buf.ppo_samples(0.99, 0.95).unwrap();
    let purity = ppo.len() == count(ActionMode::ModelFree)
        && buf
            .transitions
            .iter()
            .all(|t| t.record.sampled.is_some() == (t.record.mode == ActionMode::ModelFree));
    notes.push(format!("ppo purity {purity}"));
    let complete = distill.len() == buf.len()
        && buf
            .transitions
            .iter()
            .zip(distill.iter())
            .all(|(t, d)| t.record.action == d.action && t.record.mode == d.mode && t.record.observation == d.observation);
    notes.push(format!("distill completeness {complete} (all modes seen {all_modes})"));

    // mode frequency
    let mut freq_ok = true;
    for p in [0.5, 0.2, 0.8] {
        let mut r = rng::stream(9, rng::labels::AGENT);
        let n = 100_000;
        let planned = (0..n)
            .filter(|_| select_mode(&mut r, p, AgentKind::SharedPolicy) == ActionMode::Planned)
            .count();
        freq_ok &= (planned as f64 / n as f64 - p).abs() < MODE_TOLERANCE;
    }
    let mut r = rng::stream(9, rng::labels::AGENT);
    freq_ok &= (0..1000).all(|_| select_mode(&mut r, 0.5, AgentKind::Simple) == ActionMode::ModelFree);
    notes.push(format!("mode frequency {freq_ok}"));

    // end-to-end determinism
    let hyper = TrainHyper {
        rollout_interval: 512,
        ppo_epochs: 2,
        ..TrainHyper::default()
    };
    let run = || {
        let out = training_loop(small_agent(AgentKind::DualPolicy, ReflexKind::Freeze, 7), &env, &hyper, 3000, 7).unwrap();
        (out.episodes, serde_json::to_string(&out.agent).unwrap())
    };
    let det = run() == run();
    notes.push(format!("determinism {det}"));

    (reflex_ok && purity && complete && all_modes && freq_ok && det, notes.join(", "))
}

fn criterion_10() -> (bool, String) {
    let mut worst: f64 = 0.0;
    // textbook mean, sample std and t-interval; t quantiles from tables
    let fixtures: [(&[f64], f64); 3] = [
        (&[0.62, 0.71, 0.55, 0.8, 0.66], 2.7764451051977987),
        (&[0.1, 0.9], 12.706204736174698),
        (&[0.33, 0.41, 0.29, 0.52, 0.47, 0.38, 0.44, 0.36, 0.5, 0.31], 2.2621571627409915),
    ];
    for (xs, t975) in fixtures {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let half = t975 * sd / n.sqrt();
        let s = summarize(xs).unwrap();
        let (lo, hi) = s.ci95.unwrap();
        for (got, want) in [(s.mean, mean), (s.std.unwrap(), sd), (lo, mean - half), (hi, mean + half)] {
            worst = worst.max((got - want).abs());
        }
    }
    // scipy.stats.ttest_ind(a, b, equal_var=False)
    let welch: [(&[f64], &[f64], f64, f64); 4] = [
        (
            &[0.600123, 0.629875, 0.572586, 0.510941, 0.554533],
            &[0.750418, 0.803007, 0.867011, 0.77539, 0.768976],
            -7.650824988160854,
            6.0140830606122656e-05,
        ),
        (
            &[0.489842, 0.356887, 0.105414],
            &[0.113906, 0.29415, 0.439061, 0.031157, 0.208477, -0.080245, 0.042092],
            1.2786161371463682,
            0.2790074055789022,
        ),
        (
            &[0.079132, 0.882454, 0.366277, 1.135632, 1.078376, 0.906535, -0.25838, 0.730654, 0.97575, 1.056654],
            &[-1.960272, 0.144493, -0.857038, -0.517674],
            3.212485747450553,
            0.036013034517908486,
        ),
        (
            &[0.60609, 0.419247, 0.496748, 0.588439, 0.44164],
            &[0.48883, 0.511046, 0.506378, 0.377494, 0.507614],
            0.7063312539976933,
            0.5027392072005794,
        ),
    ];
    for (a, b, t, p) in welch {
        let r = welch_t_test(a, b).unwrap();
        // the Welch df is also checked against its closed form
        let (va, vb) = (var(a) / a.len() as f64, var(b) / b.len() as f64);
        let df = (va + vb).powi(2) / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
        for (got, want) in [(r.t, t), (r.p, p), (r.df, df)] {
            worst = worst.max((got - want).abs());
        }
    }
    (worst < STATS_TOLERANCE, format!("3 summaries, 4 Welch fixtures, max abs err {worst:.2e}"))
}

fn var(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Runs (or reloads) an experiment, cached by config hash.
fn cached(name: &str, cfg: &ExperimentConfig) -> ExperimentSummary {
    let dir: PathBuf = [env!("CARGO_TARGET_TMPDIR"), "acceptance", &format!("{name}-{}", &cfg.hash()[..12])]
        .iter()
        .collect();
    if let Ok(s) = read_summary(&dir.join("summary.json")) {
        if s.config_hash == cfg.hash() {
            println!("  [{name}] reusing {}", dir.display());
            return s;
        }
    }
    let t = Instant::now();
    let s = run_experiment(cfg, &dir).unwrap();
    println!("  [{name}] ran in {:.0} s, results in {}", t.elapsed().as_secs_f64(), dir.display());
    s
}

fn desk(recipe: Recipe) -> ExperimentConfig {
    ExperimentConfig {
        recipe,
        ..ExperimentConfig::default()
    }
}

fn agent<'a>(s: &'a ExperimentSummary, setting: &str, label: &str) -> &'a OutcomeStats {
    &s.block(setting).unwrap().per_agent[label]
}

fn ci_str(o: &OutcomeStats) -> String {
    match o.success.ci95 {
        Some((lo, hi)) => format!("{:.3} [{lo:.3}, {hi:.3}]", o.success.mean),
        None => format!("{:.3}", o.success.mean),
    }
}

fn criterion_5(base: &ExperimentSummary) -> (bool, String) {
    let (simple, shared, dual) = (
        agent(base, "baseline", "simple"),
        agent(base, "baseline", "shared"),
        agent(base, "baseline", "dual"),
    );
    let gap_ok = simple.success.mean + BASELINE_GAP <= shared.success.mean
        && simple.success.mean + BASELINE_GAP <= dual.success.mean;
    let p = welch_t_test(&shared.success.per_seed, &dual.success.per_seed).unwrap().p;
    (
        gap_ok && p >= BASELINE_ALPHA,
        format!(
            "success simple {:.3}, shared {:.3}, dual {:.3}; shared vs dual p = {p:.3}",
            simple.success.mean, shared.success.mean, dual.success.mean
        ),
    )
}

fn criterion_6(base: &ExperimentSummary) -> (bool, String) {
    let full = std::env::var("DUALPLAN_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let per_rep: u64 = if full { 5 } else { 3 };
    let reps = 5u64;
    let total = per_rep * reps;
    // seeds 1..=5 are the baseline runs, the rest are extra
    let extra_seeds: Vec<u64> = (6..=total).collect();
    let mut shared = agent(base, "baseline", "shared").success.per_seed.clone();
    let mut dual = agent(base, "baseline", "dual").success.per_seed.clone();
    for (kind, out) in [(AgentKind::SharedPolicy, &mut shared), (AgentKind::DualPolicy, &mut dual)] {
        let mut cfg = desk(Recipe::Custom);
        cfg.agent.kind = kind;
        cfg.seeds = extra_seeds.clone();
        let s = cached(&format!("stability-{}", kind.as_str()), &cfg);
        out.extend(&agent(&s, "custom", kind.as_str()).success.per_seed);
    }
    let mut wins = 0;
    let mut pairs = Vec::new();
    for k in 0..reps as usize {
        let r = k * per_rep as usize..(k + 1) * per_rep as usize;
        let (ss, sd) = (
            summarize(&shared[r.clone()]).unwrap().std.unwrap(),
            summarize(&dual[r]).unwrap().std.unwrap(),
        );
        if sd <= ss {
            wins += 1;
        }
        pairs.push(format!("{sd:.3}/{ss:.3}"));
    }
    (
        wins >= 4,
        format!(
            "{} mode, {reps} replications x {per_rep} seeds; dual std <= shared std in {wins}/5 (dual/shared: {})",
            if full { "full" } else { "quick" },
            pairs.join(" ")
        ),
    )
}

fn criterion_7() -> (bool, String) {
    let mut cfg = desk(Recipe::Baseline);
    cfg.env = EnvConfig::with_map_size(20.0);
    let s = cached("map20", &cfg);
    let (shared, dual) = (agent(&s, "baseline", "shared"), agent(&s, "baseline", "dual"));
    let gap = dual.success.mean - shared.success.mean;
    let disjoint = match (dual.success.ci95, shared.success.ci95) {
        (Some((dlo, _)), Some((_, shi))) => dlo > shi,
        _ => false,
    };
    (
        gap >= MAP20_GAP && disjoint,
        format!("map 20 success dual {}, shared {}; gap {gap:+.3}", ci_str(dual), ci_str(shared)),
    )
}

fn criterion_8() -> (bool, String) {
    let freeze = cached("freeze", &desk(Recipe::ReflexFreeze));
    let flight = cached("flight", &desk(Recipe::ReflexFlight));
    let gap = |s: &ExperimentSummary, setting| {
        agent(s, setting, "dual").success.mean - agent(s, setting, "shared").success.mean
    };
    let (gf, gl) = (gap(&freeze, "freeze"), gap(&flight, "flight"));
    // "absent or reversed": the flight gap is not positive beyond the freeze gap
    let ok = gf > 0.0 && gl < gf;
    (
        ok,
        format!(
            "dual - shared success: freeze {gf:+.3} (dual {:.3}, shared {:.3}), flight {gl:+.3} (dual {:.3}, shared {:.3})",
            agent(&freeze, "freeze", "dual").success.mean,
            agent(&freeze, "freeze", "shared").success.mean,
            agent(&flight, "flight", "dual").success.mean,
            agent(&flight, "flight", "shared").success.mean,
        ),
    )
}

fn main() {
    let mut report = Report {
        hard_failures: 0,
        soft_failures: 0,
    };
    let (ok, d) = criterion_1();
    report.line(1, true, ok, "parameter counts", d);
    let (ok, d) = criterion_2();
    report.line(2, true, ok, "gradient check", d);
    let (ok, d) = criterion_3();
    report.line(3, true, ok, "GAE oracle", d);
    let (ok, d) = criterion_4();
    report.line(4, true, ok, "planner shape", d);

    if std::env::var("DUALPLAN_ACCEPTANCE_HARD_ONLY").is_ok_and(|v| v == "1") {
        println!("criteria 5-8 skipped (DUALPLAN_ACCEPTANCE_HARD_ONLY=1)");
    } else {
        let base = cached("baseline", &desk(Recipe::Baseline));
        let (ok, d) = criterion_5(&base);
        report.line(5, false, ok, "baseline ordering", d);
        let (ok, d) = criterion_6(&base);
        report.line(6, false, ok, "stability", d);
        let (ok, d) = criterion_7();
        report.line(7, false, ok, "exploration on map 20", d);
        let (ok, d) = criterion_8();
        report.line(8, false, ok, "reflex interaction", d);
    }

    let (ok, d) = criterion_9();
    report.line(9, true, ok, "routing and properties", d);
    let (ok, d) = criterion_10();
    report.line(10, true, ok, "statistics", d);

    println!(
        "acceptance: {} hard failure(s), {} soft failure(s)",
        report.hard_failures, report.soft_failures
    );
    if report.hard_failures > 0 {
        std::process::exit(1);
    }
}
