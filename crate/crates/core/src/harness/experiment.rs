//! Multi-seed experiment orchestration.
//!
//! Output layout under the run directory:
//!
//! ```text
//! summary.json
//! <setting>/<agent>/episodes.csv
//! <setting>/<agent>/outcome_{success,death,timeout}.svg
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Recipe};
use super::plot;
use super::stats::{summarize, welch_t_test, Summary};
use crate::agents::{Agent, AgentConfig, AgentKind};
use crate::env::{EnvConfig, Outcome};
use crate::error::{Error, Result};
use crate::reflex::ReflexKind;
use crate::rng;
use crate::training::{evaluate, training_loop, EpisodeLog};

pub const OUTCOMES: [Outcome; 3] = [Outcome::Success, Outcome::Death, Outcome::Timeout];
pub const CSV_HEADER: &str = "run_seed,episode_index,phase,outcome,steps,return,plan_steps,reflex_steps,modelfree_steps";
pub const WORKERS_ENV: &str = "DUALPLAN_WORKERS";
/// Rolling window used for the learning-curve SVGs written by experiments.
pub const PLOT_WINDOW: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub run_seed: u64,
    pub episode_index: usize,
    pub phase: Phase,
    pub outcome: String,
    pub steps: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub plan_steps: usize,
    pub reflex_steps: usize,
    pub modelfree_steps: usize,
}

impl EpisodeRow {
    pub fn from_log(run_seed: u64, phase: Phase, log: &EpisodeLog) -> Self {
        Self {
            run_seed,
            episode_index: log.episode_index,
            phase,
            outcome: log.outcome.as_str().to_string(),
            steps: log.steps,
            ret: log.ret,
            plan_steps: log.plan_steps,
            reflex_steps: log.reflex_steps,
            modelfree_steps: log.modelfree_steps,
        }
    }
}

pub fn write_episodes_csv(path: &Path, rows: &[EpisodeRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    if rows.is_empty() {
        fs::write(path, format!("{CSV_HEADER}\n"))?;
    }
    Ok(())
}

/// Reads an episodes file; malformed rows report their line number.
pub fn read_episodes_csv(path: &Path) -> Result<Vec<EpisodeRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unexpected header {:?}", header.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<EpisodeRow>() {
        let row = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        if !OUTCOMES.iter().any(|o| o.as_str() == row.outcome) {
            return Err(Error::Parse {
                line: rows.len() + 2,
                msg: format!("unknown outcome {:?}", row.outcome),
            });
        }
        if row.plan_steps + row.reflex_steps + row.modelfree_steps != row.steps {
            return Err(Error::Parse {
                line: rows.len() + 2,
                msg: "per-mode step counts do not sum to steps".into(),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentSpec {
    pub label: String,
    pub config: AgentConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Setting {
    pub label: String,
    pub env: EnvConfig,
    pub agents: Vec<AgentSpec>,
}

fn hidden_label(h: &[usize]) -> String {
    h.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("x")
}

fn three_agents(base: &AgentConfig) -> Vec<AgentSpec> {
    AgentKind::ALL
        .iter()
        .map(|&kind| AgentSpec {
            label: kind.as_str().to_string(),
            config: AgentConfig {
                kind,
                ..base.clone()
            },
        })
        .collect()
}

/// The settings × agents grid each recipe expands to.
pub fn recipe_settings(cfg: &ExperimentConfig) -> Vec<Setting> {
    let with_reflex = |kind: ReflexKind| {
        let mut a = cfg.agent.clone();
        a.reflex.kind = kind;
        a
    };
    match cfg.recipe {
        Recipe::Baseline => vec![Setting {
            label: "baseline".into(),
            env: cfg.env.clone(),
            agents: three_agents(&cfg.agent),
        }],
        Recipe::SizeSweep => {
            let sizes = [vec![32], vec![64, 64], vec![128, 128, 128, 128]];
            sizes
                .iter()
                .map(|policy| Setting {
                    label: format!("policy_{}", hidden_label(policy)),
                    env: cfg.env.clone(),
                    agents: sizes
                        .iter()
                        .map(|distilled| AgentSpec {
                            label: format!("dual_distilled_{}", hidden_label(distilled)),
                            config: AgentConfig {
                                kind: AgentKind::DualPolicy,
                                hidden_policy: policy.clone(),
                                hidden_distilled: distilled.clone(),
                                ..cfg.agent.clone()
                            },
                        })
                        .collect(),
                })
                .collect()
        }
        Recipe::MapSweep => [10.0, 20.0, 30.0]
            .iter()
            .map(|&m| {
                let mut env = cfg.env.clone();
                env.map_size = m;
                env.max_steps = EnvConfig::with_map_size(m).max_steps;
                Setting {
                    label: format!("map{m}"),
                    env,
                    agents: three_agents(&cfg.agent),
                }
            })
            .collect(),
        Recipe::ReflexFlight => vec![Setting {
            label: "flight".into(),
            env: cfg.env.clone(),
            agents: three_agents(&with_reflex(ReflexKind::Flight)),
        }],
        Recipe::ReflexFreeze => vec![Setting {
            label: "freeze".into(),
            env: cfg.env.clone(),
            agents: three_agents(&with_reflex(ReflexKind::Freeze)),
        }],
        Recipe::Custom => vec![Setting {
            label: "custom".into(),
            env: cfg.env.clone(),
            agents: vec![AgentSpec {
                label: cfg.agent.kind.as_str().to_string(),
                config: cfg.agent.clone(),
            }],
        }],
    }
}

/// Train one agent for one seed, then evaluate it frozen.
pub fn run_single(
    agent_config: &AgentConfig,
    env: &EnvConfig,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<EpisodeLog>, Vec<EpisodeLog>)> {
    let agent = Agent::new(agent_config.clone(), &mut rng::stream(seed, rng::labels::INIT))?;
    let out = training_loop(agent, env, &cfg.train, cfg.total_steps, seed)?;
    let eval = evaluate(&out.agent, env, cfg.eval_episodes, seed)?;
    Ok((out.episodes, eval))
}

pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub mean: f64,
    pub std: Option<f64>,
    pub ci95: Option<(f64, f64)>,
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeStats {
    pub n_seeds: usize,
    pub success: OutcomeSummary,
    pub death: OutcomeSummary,
    pub timeout: OutcomeSummary,
}

impl OutcomeStats {
    pub fn get(&self, outcome: Outcome) -> &OutcomeSummary {
        match outcome {
            Outcome::Success => &self.success,
            Outcome::Death => &self.death,
            _ => &self.timeout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PValues {
    pub success: Option<f64>,
    pub death: Option<f64>,
    pub timeout: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingSummary {
    pub setting: String,
    pub per_agent: BTreeMap<String, OutcomeStats>,
    /// Keyed `"<a> vs <b>"` in agent declaration order.
    pub pairwise_p_values: BTreeMap<String, PValues>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub recipe: String,
    pub config_hash: String,
    pub blocks: Vec<SettingSummary>,
}

impl ExperimentSummary {
    pub fn block(&self, setting: &str) -> Option<&SettingSummary> {
        self.blocks.iter().find(|b| b.setting == setting)
    }
}

/// Per-seed outcome proportions over the eval rows, ordered by seed.
pub fn eval_proportions(rows: &[EpisodeRow]) -> BTreeMap<u64, [f64; 3]> {
    let mut counts: BTreeMap<u64, [usize; 3]> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.phase == Phase::Eval) {
        let c = counts.entry(r.run_seed).or_default();
        if let Some(k) = OUTCOMES.iter().position(|o| o.as_str() == r.outcome) {
            c[k] += 1;
        }
    }
    counts
        .into_iter()
        .map(|(seed, c)| {
            let n: usize = c.iter().sum();
            (seed, c.map(|k| k as f64 / n as f64))
        })
        .collect()
}

pub fn outcome_stats(rows: &[EpisodeRow]) -> Result<OutcomeStats> {
    let props = eval_proportions(rows);
    if props.is_empty() {
        return Err(Error::Usage("no eval rows to summarize".into()));
    }
    let column = |k: usize| -> Result<OutcomeSummary> {
        let per_seed: Vec<f64> = props.values().map(|p| p[k]).collect();
        let Summary { mean, std, ci95, .. } = summarize(&per_seed)?;
        Ok(OutcomeSummary {
            mean,
            std,
            ci95,
            per_seed,
        })
    };
    Ok(OutcomeStats {
        n_seeds: props.len(),
        success: column(0)?,
        death: column(1)?,
        timeout: column(2)?,
    })
}

fn p_value(a: &OutcomeSummary, b: &OutcomeSummary) -> Option<f64> {
    welch_t_test(&a.per_seed, &b.per_seed).ok().map(|r| r.p)
}

pub fn pairwise(labels: &[String], stats: &BTreeMap<String, OutcomeStats>) -> BTreeMap<String, PValues> {
    let mut out = BTreeMap::new();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            let (a, b) = (&stats[&labels[i]], &stats[&labels[j]]);
            out.insert(
                format!("{} vs {}", labels[i], labels[j]),
                PValues {
                    success: p_value(&a.success, &b.success),
                    death: p_value(&a.death, &b.death),
                    timeout: p_value(&a.timeout, &b.timeout),
                },
            );
        }
    }
    out
}

/// Create the directory and prove it is writable.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)?;
    Ok(())
}

struct Job {
    setting: usize,
    agent: usize,
    seed: u64,
}

pub fn agent_dir(out: &Path, setting: &str, agent: &str) -> PathBuf {
    out.join(setting).join(agent)
}

/// Run every (setting, agent, seed) of the recipe and write all artifacts.
/// The summary is computed from the CSV files after they are written.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentSummary> {
    cfg.validate()?;
    if cfg.eval_episodes == 0 {
        return Err(Error::Config("experiment.eval_episodes must be positive".into()));
    }
    let settings = recipe_settings(cfg);
    ensure_writable(out)?;
    for s in &settings {
        for a in &s.agents {
            ensure_writable(&agent_dir(out, &s.label, &a.label))?;
        }
    }

    let jobs: Vec<Job> = settings
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            (0..s.agents.len()).flat_map(move |ai| cfg.seeds.iter().map(move |&seed| Job { setting: si, agent: ai, seed }))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    let results: Vec<Result<(Vec<EpisodeLog>, Vec<EpisodeLog>)>> = pool.install(|| {
        jobs.par_iter()
            .map(|j| {
                let s = &settings[j.setting];
                run_single(&s.agents[j.agent].config, &s.env, cfg, j.seed)
            })
            .collect()
    });

    let mut rows: BTreeMap<(usize, usize), Vec<EpisodeRow>> = BTreeMap::new();
    for (job, res) in jobs.iter().zip(results) {
        let (train, eval) = res?;
        let bucket = rows.entry((job.setting, job.agent)).or_default();
        bucket.extend(train.iter().map(|l| EpisodeRow::from_log(job.seed, Phase::Train, l)));
        bucket.extend(eval.iter().map(|l| EpisodeRow::from_log(job.seed, Phase::Eval, l)));
    }

    let mut blocks = Vec::new();
    for (si, s) in settings.iter().enumerate() {
        let mut per_agent = BTreeMap::new();
        for (ai, a) in s.agents.iter().enumerate() {
            let dir = agent_dir(out, &s.label, &a.label);
            let csv_path = dir.join("episodes.csv");
            write_episodes_csv(&csv_path, &rows[&(si, ai)])?;
            let back = read_episodes_csv(&csv_path)?;
            plot::write_outcome_plots(&back, PLOT_WINDOW, &dir)?;
            per_agent.insert(a.label.clone(), outcome_stats(&back)?);
        }
        let labels: Vec<String> = s.agents.iter().map(|a| a.label.clone()).collect();
        blocks.push(SettingSummary {
            setting: s.label.clone(),
            pairwise_p_values: pairwise(&labels, &per_agent),
            per_agent,
        });
    }
    let summary = ExperimentSummary {
        recipe: cfg.recipe.as_str().to_string(),
        config_hash: cfg.hash(),
        blocks,
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

pub fn read_summary(path: &Path) -> Result<ExperimentSummary> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
