//! `dualplan` command line. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::config::{load_config, ExperimentConfig};
use super::experiment::{
    ensure_writable, outcome_stats, read_episodes_csv, read_summary, run_experiment, write_episodes_csv,
    EpisodeRow, ExperimentSummary, Phase, OUTCOMES, PLOT_WINDOW,
};
use super::plot::write_outcome_plots;
use super::stats::welch_t_test;
use crate::agents::Agent;
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::rng;
use crate::training::{evaluate, training_loop};

#[derive(Debug, Parser)]
#[command(name = "dualplan", version, about = "Train and compare planning agents in a predator/prey task")]
struct Cli {
    /// Config file (flat `dotted.key = value` lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides experiment.seeds for single runs)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one agent (agent.kind) for one seed and save a checkpoint
    Train,
    /// Run the configured recipe over all seeds
    Experiment,
    /// Evaluate a saved checkpoint with frozen parameters
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episodes to run (default: experiment.eval_episodes)
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Finite-difference check of every network and loss gradient
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        probes: usize,
    },
    /// Welch t-test between the per-seed proportions of two summary files
    Stats {
        a: PathBuf,
        b: PathBuf,
        /// Setting block to compare (default: the first)
        #[arg(long)]
        setting: Option<String>,
        /// Agent label in A (default: the first)
        #[arg(long)]
        agent_a: Option<String>,
        /// Agent label in B (default: same as A)
        #[arg(long)]
        agent_b: Option<String>,
    },
    /// Learning curves from an episodes.csv
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = PLOT_WINDOW)]
        window: usize,
    },
}

/// Gradient checks fail at or above these relative errors.
pub const NETWORK_TOLERANCE: f64 = 1e-6;
pub const LOSS_TOLERANCE: f64 = 1e-5;

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e @ Error::Usage(_)) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn require_out(out: Option<PathBuf>) -> Result<PathBuf> {
    out.ok_or_else(|| Error::Usage("--out DIR is required".into()))
}

fn config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train => {
            let cfg = config(cli.config.as_deref())?;
            let out = require_out(cli.out)?;
            ensure_writable(&out)?;
            let seed = cli.seed.unwrap_or(cfg.seeds[0]);
            let agent = Agent::new(cfg.agent.clone(), &mut rng::stream(seed, rng::labels::INIT))?;
            let res = training_loop(agent, &cfg.env, &cfg.train, cfg.total_steps, seed)?;
            let rows: Vec<EpisodeRow> = res.episodes.iter().map(|l| EpisodeRow::from_log(seed, Phase::Train, l)).collect();
            write_episodes_csv(&out.join("episodes.csv"), &rows)?;
            write_outcome_plots(&rows, PLOT_WINDOW, &out)?;
            fs::write(out.join("agent.json"), serde_json::to_string(&res.agent)?)?;
            println!(
                "trained {} for {} steps ({} episodes); checkpoint {}",
                cfg.agent.kind.as_str(),
                cfg.total_steps,
                rows.len(),
                out.join("agent.json").display()
            );
            Ok(())
        }
        Command::Experiment => {
            let mut cfg = config(cli.config.as_deref())?;
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            let out = require_out(cli.out)?;
            let summary = run_experiment(&cfg, &out)?;
            print_summary(&summary);
            Ok(())
        }
        Command::Eval { checkpoint, episodes } => {
            let cfg = config(cli.config.as_deref())?;
            let out = require_out(cli.out)?;
            ensure_writable(&out)?;
            let agent: Agent = serde_json::from_str(&fs::read_to_string(&checkpoint)?)?;
            let seed = cli.seed.unwrap_or(cfg.seeds[0]);
            let n = episodes.unwrap_or(cfg.eval_episodes);
            let logs = evaluate(&agent, &cfg.env, n, seed)?;
            let rows: Vec<EpisodeRow> = logs.iter().map(|l| EpisodeRow::from_log(seed, Phase::Eval, l)).collect();
            write_episodes_csv(&out.join("episodes.csv"), &rows)?;
            if !rows.is_empty() {
                let s = outcome_stats(&rows)?;
                println!(
                    "success {:.3}  death {:.3}  timeout {:.3}  ({n} episodes)",
                    s.success.mean, s.death.mean, s.timeout.mean
                );
            }
            Ok(())
        }
        Command::Gradcheck { probes } => {
            let seed = cli.seed.unwrap_or(0);
            let groups = [
                ("networks", gradcheck::check_networks(probes, seed), NETWORK_TOLERANCE),
                ("losses", gradcheck::check_losses(probes, seed), LOSS_TOLERANCE),
            ];
            let mut failed = false;
            for (group, results, tol) in &groups {
                let mut worst: f64 = 0.0;
                for r in results {
                    println!("{:<44} probes {:>4}  max rel err {:.3e}", r.name, r.probes, r.max_rel_err);
                    worst = worst.max(r.max_rel_err);
                }
                println!("max relative error ({group}) {worst:.3e}  (tolerance {tol:e})");
                failed |= !(worst < *tol);
            }
            if failed {
                Err(Error::Internal("gradient check failed".into()))
            } else {
                Ok(())
            }
        }
        Command::Stats {
            a,
            b,
            setting,
            agent_a,
            agent_b,
        } => {
            let (sa, sb) = (read_summary(&a)?, read_summary(&b)?);
            let pick = |s: &ExperimentSummary, agent: Option<&str>| -> Result<(String, super::experiment::OutcomeStats)> {
                let block = match &setting {
                    Some(name) => s
                        .block(name)
                        .ok_or_else(|| Error::Usage(format!("no setting {name:?} in summary")))?,
                    None => s.blocks.first().ok_or_else(|| Error::Usage("summary has no blocks".into()))?,
                };
                let (label, stats) = match agent {
                    Some(l) => block
                        .per_agent
                        .get_key_value(l)
                        .ok_or_else(|| Error::Usage(format!("no agent {l:?} in setting {:?}", block.setting)))?,
                    None => block
                        .per_agent
                        .iter()
                        .next()
                        .ok_or_else(|| Error::Usage("setting has no agents".into()))?,
                };
                Ok((label.clone(), stats.clone()))
            };
            let (la, xa) = pick(&sa, agent_a.as_deref())?;
            let (lb, xb) = pick(&sb, agent_b.as_deref().or(Some(la.as_str())))?;
            println!("{la} ({}) vs {lb} ({})", a.display(), b.display());
            for o in OUTCOMES {
                let r = welch_t_test(&xa.get(o).per_seed, &xb.get(o).per_seed)
                    .map_err(|e| Error::Usage(format!("{}: {e}", o.as_str())))?;
                println!("{:<8} t = {:.3}  df = {:.2}  p = {:.3}", o.as_str(), r.t, r.df, r.p);
            }
            Ok(())
        }
        Command::Plot { csv, window } => {
            let rows = read_episodes_csv(&csv)?;
            let out = cli
                .out
                .unwrap_or_else(|| csv.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")));
            ensure_writable(&out)?;
            write_outcome_plots(&rows, window, &out)?;
            println!("wrote outcome plots to {}", out.display());
            Ok(())
        }
    }
}

fn fmt_ci(ci: Option<(f64, f64)>) -> String {
    match ci {
        Some((lo, hi)) => format!("[{lo:.3}, {hi:.3}]"),
        None => "n/a".into(),
    }
}

pub fn print_summary(summary: &ExperimentSummary) {
    println!("recipe {}  config {}", summary.recipe, &summary.config_hash[..12]);
    for block in &summary.blocks {
        println!("[{}]", block.setting);
        for (label, s) in &block.per_agent {
            println!(
                "  {label:<28} success {:.3} {}  death {:.3}  timeout {:.3}  (seeds {})",
                s.success.mean,
                fmt_ci(s.success.ci95),
                s.death.mean,
                s.timeout.mean,
                s.n_seeds
            );
        }
        for (pair, p) in &block.pairwise_p_values {
            match p.success {
                Some(v) => println!("  {pair}: success p = {v:.3}"),
                None => println!("  {pair}: success p = n/a"),
            }
        }
    }
}
