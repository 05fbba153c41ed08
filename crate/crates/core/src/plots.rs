//! Plot-ready tables built from a sweep run directory.
//!
//! Inputs (as written by the `sweep` command): `curve.csv`, `sweep.csv` and
//! `settlements.csv`. Outputs:
//!
//! - `fig3_training_curves.csv`: `capacity,iteration,reward`
//! - `fig4_reward_by_size.csv`: `capacity,test_reward,oracle_reward,no_battery_reward`
//! - `fig5_daily_profile.csv`: `series,slot,mean,std` with 48 slots for each of
//!   `gc`, `battery_charge`, `discharge` and `solar`; `std` is the population
//!   standard deviation over all days in the settlement log.

use std::path::{Path, PathBuf};

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::data::SLOTS_PER_DAY;
use crate::error::{Error, Result};
use crate::experiment::{CurveRow, SweepEntry};

pub const CURVE_FILE: &str = "curve.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SETTLEMENTS_FILE: &str = "settlements.csv";

pub const FIG3_FILE: &str = "fig3_training_curves.csv";
pub const FIG4_FILE: &str = "fig4_reward_by_size.csv";
pub const FIG5_FILE: &str = "fig5_daily_profile.csv";

pub const PROFILE_SERIES: [&str; 4] = ["gc", "battery_charge", "discharge", "solar"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBySize {
    pub capacity: f64,
    pub test_reward: f64,
    pub oracle_reward: f64,
    pub no_battery_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub series: String,
    pub slot: usize,
    pub mean: f64,
    pub std: f64,
}

/// The subset of settlement columns the daily profile needs.
#[derive(Debug, Deserialize)]
struct SettlementInput {
    timestamp: NaiveDateTime,
    gc: f64,
    cs: f64,
    discharge_to_gc: f64,
    discharge_to_cl: f64,
    charge: f64,
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    })
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    reader(path)?
        .deserialize()
        .map(|r| r.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

/// Mean and population standard deviation per (series, slot) over days.
/// Each settlement row contributes to the slot of its timestamp.
pub fn daily_profile<I>(rows: I) -> Vec<ProfileRow>
where
    I: IntoIterator<Item = (NaiveDateTime, [f64; 4])>,
{
    let mut samples: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); SLOTS_PER_DAY]; PROFILE_SERIES.len()];
    for (ts, values) in rows {
        let slot = (ts.hour() * 2 + ts.minute() / 30) as usize;
        for (series, v) in values.iter().enumerate() {
            samples[series][slot].push(*v);
        }
    }
    let mut out = Vec::with_capacity(PROFILE_SERIES.len() * SLOTS_PER_DAY);
    for (series, name) in PROFILE_SERIES.iter().enumerate() {
        for (slot, xs) in samples[series].iter().enumerate() {
            let n = xs.len() as f64;
            let (mean, std) = if xs.is_empty() {
                (0.0, 0.0)
            } else {
                let mean = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt())
            };
            out.push(ProfileRow {
                series: name.to_string(),
                slot,
                mean,
                std,
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotFiles {
    pub fig3: PathBuf,
    pub fig4: PathBuf,
    pub fig5: PathBuf,
}

/// Build the three figure tables from `run_dir` into `out_dir`. All inputs
/// are checked up front; missing ones are reported together.
pub fn export_plots(run_dir: &Path, out_dir: &Path) -> Result<PlotFiles> {
    let inputs = [CURVE_FILE, SWEEP_FILE, SETTLEMENTS_FILE].map(|f| run_dir.join(f));
    let missing: Vec<PathBuf> = inputs.iter().filter(|p| !p.is_file()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing));
    }
    let [curve_path, sweep_path, settle_path] = inputs;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut curves: Vec<CurveRow> = read_rows(&curve_path)?;
    curves.sort_by(|a, b| a.capacity.total_cmp(&b.capacity).then(a.iteration.cmp(&b.iteration)));
    let sweep: Vec<SweepEntry> = read_rows(&sweep_path)?;
    let settlements: Vec<SettlementInput> = read_rows(&settle_path)?;

    let files = PlotFiles {
        fig3: out_dir.join(FIG3_FILE),
        fig4: out_dir.join(FIG4_FILE),
        fig5: out_dir.join(FIG5_FILE),
    };
    write_rows(&files.fig3, &curves)?;
    let by_size: Vec<RewardBySize> = sweep
        .iter()
        .map(|e| RewardBySize {
            capacity: e.capacity,
            test_reward: e.test_reward,
            oracle_reward: -e.oracle_cost,
            no_battery_reward: -e.no_battery_cost,
        })
        .collect();
    write_rows(&files.fig4, &by_size)?;
    let profile = daily_profile(settlements.iter().map(|s| {
        (
            s.timestamp,
            [s.gc, s.charge, s.discharge_to_gc + s.discharge_to_cl, s.cs],
        )
    }));
    write_rows(&files.fig5, &profile)?;
    Ok(files)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn ts(day: u32, slot: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2013, 1, day)
            .unwrap()
            .and_hms_opt(slot / 2, (slot % 2) * 30, 0)
            .unwrap()
    }

    #[test]
    fn profile_has_48_rows_per_series() {
        let rows = (0..3).flat_map(|d| (0..48).map(move |s| (ts(7 + d, s), [s as f64, d as f64, 1.0, 0.0])));
        let p = daily_profile(rows);
        assert_eq!(p.len(), 4 * 48);
        for name in PROFILE_SERIES {
            assert_eq!(p.iter().filter(|r| r.series == name).count(), 48);
        }
        let gc5 = p.iter().find(|r| r.series == "gc" && r.slot == 5).unwrap();
        assert_eq!((gc5.mean, gc5.std), (5.0, 0.0));
        let charge = p.iter().find(|r| r.series == "battery_charge" && r.slot == 0).unwrap();
        assert_eq!(charge.mean, 1.0);
        assert!((charge.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn missing_inputs_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(SWEEP_FILE), "capacity\n").unwrap();
        match export_plots(dir.path(), dir.path()) {
            Err(Error::MissingInputs(m)) => {
                assert_eq!(m, vec![dir.path().join(CURVE_FILE), dir.path().join(SETTLEMENTS_FILE)]);
            }
            other => panic!("{other:?}"),
        }
    }
}
