use std::path::{Path, PathBuf};

use solarbatt::config::{manifest_toml, Provenance, RunConfig};
use solarbatt::data::{filter_complete_weeks, parse_ausgrid_csv, split_train_test, write_normalized};
use solarbatt::env::{rollout, write_settlement_rows, SETTLEMENT_COLUMNS};
use solarbatt::experiment::{
    battery_size_sweep, evaluate, hyperparameter_search, load_split, load_weeks, read_checkpoint, write_curve_csv,
    write_evaluation_csv, write_json, write_log_csv, write_settlements_csv, write_sweep_csv, write_trials_csv,
    Evaluation, TrainingRun, TrialStatus,
};
use solarbatt::oracle::{greedy_policy, no_battery_cost, perfect_foresight_dp};
use solarbatt::plots;
use solarbatt::{Error, Result};

use crate::Common;

/// Default output root when `--out` is not given.
pub const OUT_ENV: &str = "SOLARBATT_OUT";

struct Run {
    config: RunConfig,
    out: PathBuf,
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Resolve the configuration, create the output directory and write the
/// manifest before any work starts.
fn prepare(common: &Common, verb: &str) -> Result<Run> {
    let config = match &common.config {
        Some(path) => RunConfig::load(path, &common.overrides)?,
        None => RunConfig::default().with_overrides(&common.overrides)?,
    };
    let out = common.out.clone().unwrap_or_else(|| {
        std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(verb)
    });
    create_dir(&out)?;
    let manifest = manifest_toml(&config, &Provenance::new(verb, &common.overrides, &config))?;
    let path = out.join("manifest.toml");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(Run { config, out })
}

fn csv_file(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn flush(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn print_weeks(eval: &Evaluation) {
    for w in &eval.per_week {
        println!("week={} reward={:.4}", w.week, w.reward);
    }
}

pub fn ingest(common: &Common, input: Option<PathBuf>) -> Result<()> {
    let Run { config, out } = prepare(common, "ingest")?;
    let d = &config.data;
    let input = input
        .or_else(|| d.path.clone())
        .ok_or_else(|| Error::config_at("data.path", "no input file given"))?;
    let file = std::fs::File::open(&input).map_err(|e| Error::io(&input, e))?;
    let data = parse_ausgrid_csv(file)?;
    let households = out.join("households");
    create_dir(&households)?;

    let summary_path = out.join("households.csv");
    let mut summary = csv_file(&summary_path)?;
    summary.write_record(["customer", "records", "complete_weeks", "n_train", "n_test"])?;
    let split_path = out.join("split.csv");
    let mut splits = csv_file(&split_path)?;
    splits.write_record(["customer", "week", "role"])?;

    let customers: Vec<_> = match d.customer {
        Some(id) if data.contains_key(&id) => vec![id],
        Some(id) => return Err(Error::NotFound(format!("customer {id} not in {}", input.display()))),
        None => data.keys().copied().collect(),
    };
    for id in customers {
        let records = &data[&id];
        let path = households.join(format!("{id}.csv"));
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_normalized(records, f)?;
        let weeks = filter_complete_weeks(records, d.year);
        let (n_train, n_test) = if weeks.len() > d.n_train {
            let split = split_train_test(&weeks, d.n_train, d.split_seed)?;
            for (role, set) in [("train", &split.train), ("test", &split.test)] {
                for w in set {
                    splits.write_record([id.to_string(), w.start_date().to_string(), role.to_string()])?;
                }
            }
            (split.train.len(), split.test.len())
        } else {
            (0, 0)
        };
        summary.write_record([
            id.to_string(),
            records.len().to_string(),
            weeks.len().to_string(),
            n_train.to_string(),
            n_test.to_string(),
        ])?;
        println!(
            "customer={id} records={} complete_weeks={} split={n_train}/{n_test}",
            records.len(),
            weeks.len()
        );
    }
    flush(summary, &summary_path)?;
    flush(splits, &split_path)
}

fn write_training_outputs(dir: &Path, capacity: f64, run: &TrainingRun) -> Result<()> {
    write_log_csv(&dir.join("training_log.csv"), &run.log)?;
    write_curve_csv(&dir.join(plots::CURVE_FILE), &[(capacity, &run.result.training_curve)])?;
    write_json(&dir.join("checkpoint.json"), &run.checkpoint)?;
    write_json(&dir.join("checkpoint_last.json"), &run.last_checkpoint)?;
    write_json(&dir.join("result.json"), &run.result)
}

fn reward_text(r: Option<f64>) -> String {
    r.map(|v| format!("{v:.4}")).unwrap_or_else(|| "none".into())
}

pub fn train(common: &Common) -> Result<()> {
    let Run { config, out } = prepare(common, "train")?;
    let split = load_split(&config.data)?;
    let run = solarbatt::experiment::run_training(&config, &split, config.run_seeds(), 0)?;
    write_training_outputs(&out, config.env.capacity, &run)?;
    if let Some(eval) = &run.evaluation {
        write_evaluation_csv(&out.join("evaluation.csv"), eval)?;
        write_settlements_csv(&out.join(plots::SETTLEMENTS_FILE), &split.test, eval)?;
        print_weeks(eval);
    }
    println!(
        "trial=0 capacity={} iterations={} selected_iteration={} status={:?} mean_reward={}",
        config.env.capacity,
        run.log.last().map_or(0, |r| r.iteration),
        run.selected_iteration,
        run.result.status,
        reward_text(run.result.mean_episode_reward)
    );
    if run.result.status == TrialStatus::Diverged {
        return Err(Error::Numeric("training diverged; partial log written".into()));
    }
    Ok(())
}

pub fn eval(common: &Common, checkpoint: &Path) -> Result<()> {
    let Run { config, out } = prepare(common, "eval")?;
    let ckpt = read_checkpoint(checkpoint)?;
    let split = load_split(&config.data)?;
    let agent = ckpt.into_agent()?;
    let eval = evaluate(&agent, &config.env, &split.test)?;
    write_evaluation_csv(&out.join("evaluation.csv"), &eval)?;
    write_settlements_csv(&out.join(plots::SETTLEMENTS_FILE), &split.test, &eval)?;
    print_weeks(&eval);
    println!("mean_reward={:.4}", eval.mean_reward);
    Ok(())
}

pub fn sweep(common: &Common) -> Result<()> {
    let Run { config, out } = prepare(common, "sweep")?;
    let split = load_split(&config.data)?;
    let sizes = config.sweep.capacities.clone();
    let result = battery_size_sweep(&config, &split, &sizes)?;
    write_sweep_csv(&out.join(plots::SWEEP_FILE), &result.entries)?;
    let curves: Vec<(f64, &[_])> = sizes
        .iter()
        .zip(&result.runs)
        .map(|(c, r)| (*c, r.result.training_curve.as_slice()))
        .collect();
    write_curve_csv(&out.join(plots::CURVE_FILE), &curves)?;
    let profile = config.sweep.profile_capacity();
    for (entry, run) in result.entries.iter().zip(&result.runs) {
        let dir = out.join("sizes").join(format!("{:.1}", entry.capacity));
        create_dir(&dir)?;
        write_training_outputs(&dir, entry.capacity, run)?;
        if (entry.capacity - profile).abs() < 1e-12 {
            if let Some(eval) = &run.evaluation {
                write_settlements_csv(&out.join(plots::SETTLEMENTS_FILE), &split.test, eval)?;
            }
        }
        println!(
            "capacity={} status={:?} test_reward={:.4} oracle_cost={:.4} no_battery_cost={:.4}",
            entry.capacity, run.result.status, entry.test_reward, entry.oracle_cost, entry.no_battery_cost
        );
    }
    Ok(())
}

pub fn tune(common: &Common) -> Result<()> {
    let Run { config, out } = prepare(common, "tune")?;
    let split = load_split(&config.data)?;
    let search = hyperparameter_search(&config, &split)?;
    write_trials_csv(&out.join("trials.csv"), &search.ranked)?;
    let logs = out.join("logs");
    create_dir(&logs)?;
    for (i, log) in search.logs.iter().enumerate() {
        write_log_csv(&logs.join(format!("trial_{i:03}.csv")), log)?;
    }
    for (rank, t) in search.ranked.iter().enumerate() {
        println!(
            "rank={} trial={} status={:?} lr={:.6e} actor={:?} critic={:?} mean_reward={}",
            rank + 1,
            t.trial,
            t.status,
            t.hyperparams.actor_lr,
            t.hyperparams.actor_hiddens,
            t.hyperparams.critic_hiddens,
            reward_text(t.mean_episode_reward)
        );
    }
    search.ensure_completed()
}

pub fn oracle(common: &Common) -> Result<()> {
    let Run { config, out } = prepare(common, "oracle")?;
    let weeks = load_weeks(&config.data)?;
    let env = &config.env;
    let table_path = out.join("oracle.csv");
    let mut table = csv_file(&table_path)?;
    table.write_record(["week", "no_battery_cost", "greedy_cost", "dp_cost", "dp_lattice_cost"])?;
    let settle_path = out.join("oracle_settlements.csv");
    let mut settle = csv_file(&settle_path)?;
    settle.write_record(SETTLEMENT_COLUMNS)?;
    let mut settle = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(settle.into_inner().map_err(|e| Error::io(&settle_path, e.into_error()))?);
    for w in &weeks {
        let week = w.start_date();
        let none = no_battery_cost(w.records(), env);
        let greedy = rollout(env, w.records(), &mut greedy_policy)?;
        let dp = perfect_foresight_dp(w.records(), env, config.oracle.soc_levels, config.oracle.action_levels)?;
        let replay = dp.replay(w.records(), env)?;
        write_settlement_rows(&mut settle, &format!("greedy/{week}"), &greedy.steps)?;
        write_settlement_rows(&mut settle, &format!("dp/{week}"), &replay.steps)?;
        table.write_record([
            week.to_string(),
            none.to_string(),
            greedy.total_cost.to_string(),
            dp.total_cost.to_string(),
            dp.lattice_cost.to_string(),
        ])?;
        println!(
            "week={week} no_battery_cost={none:.2} greedy_cost={:.2} dp_cost={:.2}",
            greedy.total_cost, dp.total_cost
        );
    }
    flush(table, &table_path)?;
    flush(settle, &settle_path)
}

pub fn export_plots(common: &Common, run: &Path) -> Result<()> {
    let Run { out, .. } = prepare(common, "export-plots")?;
    let files = plots::export_plots(run, &out)?;
    for f in [files.fig3, files.fig4, files.fig5] {
        println!("wrote={}", f.display());
    }
    Ok(())
}
