//! Training runs, held-out evaluation, the battery-size sweep and the
//! hyperparameter search.
//!
//! One iteration is one environment step (followed by one update once the
//! replay buffer holds a batch).

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{run_episode, Agent, AgentCheckpoint, AgentNets, ActorPolicy, HyperParams, Mode, ObsScales};
use crate::config::{DataConfig, DataSource, RunConfig, SearchSpace};
use crate::data::{
    filter_complete_weeks, generate_synthetic_weeks, parse_ausgrid_csv, read_normalized, select_household,
    split_train_test, DataSplit, HalfHourRecord, WeekTrace,
};
use crate::env::{rollout, EnvConfig, StepRecord};
use crate::error::{Error, Result};
use crate::oracle::{no_battery_cost, perfect_foresight_dp};
use crate::seeds::RunSeeds;

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

/// Complete weeks of the configured household, in chronological order.
pub fn load_weeks(cfg: &DataConfig) -> Result<Vec<WeekTrace>> {
    let need = cfg.n_train + 1;
    let path = || cfg.path.as_deref().ok_or_else(|| Error::config_at("data.path", "required"));
    let weeks = match cfg.source {
        DataSource::Synthetic => generate_synthetic_weeks(cfg.synthetic_weeks, &cfg.synthetic, cfg.synthetic_seed)?,
        DataSource::Normalized => {
            let records = read_normalized(open(path()?)?)?;
            filter_complete_weeks(&records, cfg.year)
        }
        DataSource::Ausgrid => {
            let data = parse_ausgrid_csv(open(path()?)?)?;
            match cfg.customer {
                Some(id) => filter_complete_weeks(&select_household(&data, id)?, cfg.year),
                None => data
                    .values()
                    .map(|records| filter_complete_weeks(records, cfg.year))
                    .find(|w| w.len() >= need)
                    .ok_or_else(|| {
                        Error::NotFound(format!("no household with {need} complete weeks in {}", cfg.year))
                    })?,
            }
        }
    };
    if weeks.len() < need {
        return Err(Error::config_at(
            "data.n_train",
            format!("{} complete weeks available, {need} needed for a non-empty test split", weeks.len()),
        ));
    }
    Ok(weeks)
}

pub fn load_split(cfg: &DataConfig) -> Result<DataSplit> {
    split_train_test(&load_weeks(cfg)?, cfg.n_train, cfg.split_seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Completed,
    Diverged,
}

/// One training-log record, written once per episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    /// Iterations completed at the end of the episode.
    pub iteration: usize,
    pub episode: usize,
    pub episode_reward: f64,
    pub critic_loss: f64,
    pub actor_objective: f64,
    pub sigma: f64,
    /// Seconds since the start of training. The only non-reproducible column.
    pub wall_time: f64,
}

/// Noise-free reward on the validation week at a given iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub hyperparams: HyperParams,
    /// Mean noise-free reward over the test weeks; `None` when diverged.
    pub mean_episode_reward: Option<f64>,
    pub training_curve: Vec<CurvePoint>,
    pub seeds: RunSeeds,
    pub wall_time: f64,
    pub status: TrialStatus,
}

#[derive(Clone, Debug)]
pub struct TrainingRun {
    /// Best-validation snapshot (or the last one with `keep_best` off).
    pub checkpoint: AgentCheckpoint,
    pub last_checkpoint: AgentCheckpoint,
    /// Iteration at which `checkpoint` was taken.
    pub selected_iteration: usize,
    pub log: Vec<LogRow>,
    pub evaluation: Option<Evaluation>,
    pub result: TrialResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeekReward {
    pub week: NaiveDate,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub mean_reward: f64,
    pub per_week: Vec<WeekReward>,
    /// Step-level settlements of every test week, in week order.
    pub rollouts: Vec<Vec<StepRecord>>,
}

/// Noise-free rollouts of `agent` over every week.
pub fn evaluate(agent: &Agent, env: &EnvConfig, weeks: &[WeekTrace]) -> Result<Evaluation> {
    if weeks.is_empty() {
        return Err(Error::config("no weeks to evaluate on"));
    }
    if (env.capacity - agent.capacity).abs() > 1e-12 {
        return Err(Error::Shape(format!(
            "checkpoint trained for {} kWh, environment has {} kWh",
            agent.capacity, env.capacity
        )));
    }
    let mut per_week = Vec::with_capacity(weeks.len());
    let mut rollouts = Vec::with_capacity(weeks.len());
    for w in weeks {
        let r = rollout(env, w.records(), &mut ActorPolicy(agent))?;
        per_week.push(WeekReward {
            week: w.start_date(),
            reward: r.steps.iter().map(|s| s.reward).sum(),
        });
        rollouts.push(r.steps);
    }
    let mean_reward = per_week.iter().map(|w| w.reward).sum::<f64>() / weeks.len() as f64;
    Ok(Evaluation {
        mean_reward,
        per_week,
        rollouts,
    })
}

/// Evaluate a saved agent in the environment it was trained for.
pub fn evaluate_checkpoint(ckpt: &AgentCheckpoint, weeks: &[WeekTrace]) -> Result<Evaluation> {
    let env = ckpt.env.clone();
    let agent = ckpt.clone().into_agent()?;
    evaluate(&agent, &env, weeks)
}

fn episode_trace(split: &DataSplit, cfg: &RunConfig, rng: &mut ChaCha8Rng, all: &[HalfHourRecord]) -> Vec<HalfHourRecord> {
    if cfg.training.paper_mode {
        all.to_vec()
    } else {
        split.train[rng.random_range(0..split.train.len())].records().to_vec()
    }
}

fn is_divergence(e: &Error, agent: &Agent) -> bool {
    match e {
        Error::Numeric(_) => true,
        Error::Policy(_) => !(agent.nets.actor.is_finite() && agent.nets.critic.is_finite()),
        _ => false,
    }
}

/// Train one agent on the training split of `split`, then evaluate the
/// selected checkpoint on the test split.
///
/// Episodes draw a training week uniformly with replacement (or span the
/// whole split in paper mode). After each episode that ends at least
/// `eval_interval` iterations after the previous evaluation, and after the
/// final episode, the noise-free policy is scored on the validation week.
pub fn run_training(cfg: &RunConfig, split: &DataSplit, seeds: RunSeeds, trial: usize) -> Result<TrainingRun> {
    let start = Instant::now();
    let env = &cfg.env;
    let hp = &cfg.hyperparams;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::config("training and test splits must be non-empty"));
    }
    let validation = split
        .train
        .get(cfg.training.validation_week)
        .ok_or_else(|| Error::config_at("training.validation_week", "must index a training week"))?;
    let scales = ObsScales::from_training(&split.train, env.capacity);
    let mut agent = Agent::new(hp.clone(), scales, env.capacity, &seeds)?;
    let mut episode_rng = ChaCha8Rng::seed_from_u64(seeds.episodes);
    let all_train: Vec<HalfHourRecord> = if cfg.training.paper_mode {
        split.train.iter().flat_map(|w| w.records().iter().copied()).collect()
    } else {
        Vec::new()
    };

    let mut log = Vec::new();
    let mut curve = Vec::new();
    let mut best: Option<(f64, AgentNets, usize)> = None;
    let mut status = TrialStatus::Completed;
    let mut iteration = 0;
    let mut last_eval = 0;
    while iteration < hp.training_iterations {
        let trace = episode_trace(split, cfg, &mut episode_rng, &all_train);
        let stats = match run_episode(&mut agent, env, &trace, Mode::Train, hp.training_iterations - iteration) {
            Ok(s) => s,
            Err(e) if is_divergence(&e, &agent) => {
                status = TrialStatus::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        iteration += stats.steps;
        log.push(LogRow {
            iteration,
            episode: log.len() + 1,
            episode_reward: stats.reward,
            critic_loss: stats.critic_loss,
            actor_objective: stats.actor_objective,
            sigma: stats.sigma,
            wall_time: start.elapsed().as_secs_f64(),
        });
        if iteration - last_eval >= cfg.training.eval_interval || iteration >= hp.training_iterations {
            last_eval = iteration;
            let reward = match run_episode(&mut agent, env, validation.records(), Mode::Eval, usize::MAX) {
                Ok(s) => s.reward,
                Err(e) if is_divergence(&e, &agent) => {
                    status = TrialStatus::Diverged;
                    break;
                }
                Err(e) => return Err(e),
            };
            curve.push(CurvePoint { iteration, reward });
            if best.as_ref().is_none_or(|(b, _, _)| reward > *b) {
                best = Some((reward, agent.nets.clone(), iteration));
            }
        }
    }

    let last_checkpoint = AgentCheckpoint::from_agent(&agent, env, seeds);
    let usable = status == TrialStatus::Completed || (cfg.training.keep_best && best.is_some());
    let (checkpoint, selected_iteration) = match best {
        Some((_, nets, it)) if cfg.training.keep_best => {
            let mut chosen = agent.clone();
            chosen.nets = nets;
            (AgentCheckpoint::from_agent(&chosen, env, seeds), it)
        }
        _ => (last_checkpoint.clone(), iteration),
    };
    let evaluation = if usable {
        Some(evaluate_checkpoint(&checkpoint, &split.test)?)
    } else {
        None
    };
    let result = TrialResult {
        trial,
        hyperparams: hp.clone(),
        mean_episode_reward: if status == TrialStatus::Completed {
            evaluation.as_ref().map(|e| e.mean_reward)
        } else {
            None
        },
        training_curve: curve,
        seeds,
        wall_time: start.elapsed().as_secs_f64(),
        status,
    };
    Ok(TrainingRun {
        checkpoint,
        last_checkpoint,
        selected_iteration,
        log,
        evaluation,
        result,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub capacity: f64,
    /// Mean test-week reward of the trained agent.
    pub test_reward: f64,
    /// Mean test-week cost of the perfect-foresight schedule.
    pub oracle_cost: f64,
    pub no_battery_cost: f64,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
    pub runs: Vec<TrainingRun>,
}

/// Mean perfect-foresight cost over `weeks`.
pub fn mean_oracle_cost(weeks: &[WeekTrace], env: &EnvConfig, soc_levels: usize, action_levels: usize) -> Result<f64> {
    let costs = weeks
        .par_iter()
        .map(|w| Ok(perfect_foresight_dp(w.records(), env, soc_levels, action_levels)?.total_cost))
        .collect::<Result<Vec<f64>>>()?;
    Ok(costs.iter().sum::<f64>() / weeks.len() as f64)
}

pub fn mean_no_battery_cost(weeks: &[WeekTrace], env: &EnvConfig) -> f64 {
    weeks.iter().map(|w| no_battery_cost(w.records(), env)).sum::<f64>() / weeks.len() as f64
}

/// Train and evaluate one agent per size; sizes run in parallel with
/// independent seeds, results are kept in size order.
pub fn battery_size_sweep(cfg: &RunConfig, split: &DataSplit, sizes: &[f64]) -> Result<SweepResult> {
    let sweep = crate::config::SweepConfig {
        capacities: sizes.to_vec(),
        profile_capacity: None,
    };
    sweep.validate()?;
    let runs = sizes
        .par_iter()
        .enumerate()
        .map(|(i, &capacity)| {
            let mut c = cfg.clone();
            c.env.capacity = capacity;
            c.env.validate()?;
            let run = run_training(&c, split, RunSeeds::from_root(cfg.sweep_seed(i)), i)?;
            let oracle = mean_oracle_cost(&split.test, &c.env, cfg.oracle.soc_levels, cfg.oracle.action_levels)?;
            Ok((run, oracle))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut entries = Vec::with_capacity(sizes.len());
    let mut out = Vec::with_capacity(sizes.len());
    for ((run, oracle), &capacity) in runs.into_iter().zip(sizes) {
        let mut env = cfg.env.clone();
        env.capacity = capacity;
        entries.push(SweepEntry {
            capacity,
            test_reward: run.result.mean_episode_reward.unwrap_or(f64::NAN),
            oracle_cost: oracle,
            no_battery_cost: mean_no_battery_cost(&split.test, &env),
        });
        out.push(run);
    }
    Ok(SweepResult { entries, runs: out })
}

/// Enumerate the search space: draw-major over the actor x critic grid, one
/// learning rate per trial shared by actor and critic. Deterministic in
/// `seed`.
pub fn sample_hyperparams(space: &SearchSpace, base: &HyperParams, seed: u64) -> Result<Vec<HyperParams>> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(space.grid_size() * space.draws_per_cell);
    for _ in 0..space.draws_per_cell {
        for actor in &space.actor_hiddens {
            for critic in &space.critic_hiddens {
                let lr = if space.log_uniform {
                    rng.random_range(space.lr_min.ln()..=space.lr_max.ln()).exp()
                } else {
                    rng.random_range(space.lr_min..=space.lr_max)
                };
                out.push(HyperParams {
                    actor_lr: lr,
                    critic_lr: lr,
                    actor_hiddens: actor.clone(),
                    critic_hiddens: critic.clone(),
                    ..base.clone()
                });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    /// Ranked by descending mean reward; diverged trials last, by index.
    pub ranked: Vec<TrialResult>,
    /// Training logs indexed by trial.
    pub logs: Vec<Vec<LogRow>>,
}

impl SearchResult {
    pub fn ensure_completed(&self) -> Result<()> {
        if self.ranked.iter().all(|t| t.status == TrialStatus::Diverged) {
            Err(Error::SearchFailed(self.ranked.len()))
        } else {
            Ok(())
        }
    }
}

/// Rank trials: completed by descending reward (ties by index), then diverged
/// by index.
pub fn rank_trials(mut trials: Vec<TrialResult>) -> Vec<TrialResult> {
    trials.sort_by(|a, b| match (a.mean_episode_reward, b.mean_episode_reward) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(a.trial.cmp(&b.trial)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.trial.cmp(&b.trial),
    });
    trials
}

/// Run the first `cfg.search.trial_count()` trials of the search space.
pub fn hyperparameter_search(cfg: &RunConfig, split: &DataSplit) -> Result<SearchResult> {
    let budget = cfg.search.trial_count();
    let specs: Vec<HyperParams> = sample_hyperparams(&cfg.search, &cfg.hyperparams, cfg.search_seed())?
        .into_iter()
        .take(budget)
        .collect();
    let runs = specs
        .into_par_iter()
        .enumerate()
        .map(|(i, hp)| {
            let mut c = cfg.clone();
            c.hyperparams = hp;
            let run = run_training(&c, split, RunSeeds::from_root(cfg.trial_seed(i)), i)?;
            Ok((run.result, run.log))
        })
        .collect::<Result<Vec<_>>>()?;
    let (results, logs): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    Ok(SearchResult {
        ranked: rank_trials(results),
        logs,
    })
}

/// Spread between best and worst completed trials, `(best - worst) / |worst|`.
pub fn reward_spread(ranked: &[TrialResult]) -> Option<f64> {
    let rewards: Vec<f64> = ranked.iter().filter_map(|t| t.mean_episode_reward).collect();
    let best = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let worst = rewards.iter().copied().fold(f64::INFINITY, f64::min);
    (rewards.len() >= 2 && worst != 0.0).then(|| (best - worst) / worst.abs())
}

// ---- delimited outputs ----

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn finish<W: Write>(mut w: csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// `iteration,episode,episode_reward,critic_loss,actor_objective,sigma,wall_time`
pub fn write_log_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    if rows.is_empty() {
        w.write_record(LOG_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    finish(w, path)
}

pub const LOG_COLUMNS: [&str; 7] = [
    "iteration",
    "episode",
    "episode_reward",
    "critic_loss",
    "actor_objective",
    "sigma",
    "wall_time",
];

#[derive(Serialize, Deserialize)]
pub struct CurveRow {
    pub capacity: f64,
    pub iteration: usize,
    pub reward: f64,
}

/// `capacity,iteration,reward`: validation reward over training.
pub fn write_curve_csv(path: &Path, curves: &[(f64, &[CurvePoint])]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["capacity", "iteration", "reward"])?;
    for (capacity, points) in curves {
        for p in points.iter() {
            w.write_record([capacity.to_string(), p.iteration.to_string(), p.reward.to_string()])?;
        }
    }
    finish(w, path)
}

/// `capacity,test_reward,oracle_cost,no_battery_cost`
pub fn write_sweep_csv(path: &Path, entries: &[SweepEntry]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for e in entries {
        w.serialize(e)?;
    }
    finish(w, path)
}

/// `rank,trial,status,mean_episode_reward,actor_lr,critic_lr,actor_hiddens,critic_hiddens,seed_init,wall_time`
pub fn write_trials_csv(path: &Path, ranked: &[TrialResult]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "rank",
        "trial",
        "status",
        "mean_episode_reward",
        "actor_lr",
        "critic_lr",
        "actor_hiddens",
        "critic_hiddens",
        "seed_init",
        "wall_time",
    ])?;
    let widths = |h: &[usize]| h.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("x");
    for (rank, t) in ranked.iter().enumerate() {
        w.write_record([
            (rank + 1).to_string(),
            t.trial.to_string(),
            match t.status {
                TrialStatus::Completed => "completed".into(),
                TrialStatus::Diverged => "diverged".into(),
            },
            t.mean_episode_reward.map(|r| r.to_string()).unwrap_or_default(),
            t.hyperparams.actor_lr.to_string(),
            t.hyperparams.critic_lr.to_string(),
            widths(&t.hyperparams.actor_hiddens),
            widths(&t.hyperparams.critic_hiddens),
            format!("{:016x}", t.seeds.init),
            t.wall_time.to_string(),
        ])?;
    }
    finish(w, path)
}

/// `week,reward`, one row per evaluated week.
pub fn write_evaluation_csv(path: &Path, eval: &Evaluation) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in &eval.per_week {
        w.serialize(r)?;
    }
    finish(w, path)
}

/// Settlement rows of every evaluated week, labelled by week start date.
pub fn write_settlements_csv(path: &Path, weeks: &[WeekTrace], eval: &Evaluation) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(crate::env::SETTLEMENT_COLUMNS)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(w.into_inner().map_err(|e| Error::io(path, e.into_error()))?);
    for (week, steps) in weeks.iter().zip(&eval.rollouts) {
        crate::env::write_settlement_rows(&mut w, &week.start_date().to_string(), steps)?;
    }
    finish(w, path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<AgentCheckpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: AgentCheckpoint = serde_json::from_str(&text)?;
    ckpt.validate()?;
    Ok(ckpt)
}
