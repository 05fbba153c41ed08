//! Reference policies and cost bounds: the no-battery bill, a rule-based
//! greedy controller, a perfect-foresight dynamic program over a
//! state-of-charge lattice, and a brute-force enumerator for tiny traces.

use serde::{Deserialize, Serialize};

use crate::data::HalfHourRecord;
use crate::env::{self, clip_action, settle, Action, BatteryState, EnvConfig, Observation, Rollout};
use crate::error::{Error, Result};

/// Largest `A^(3T) * K` the exhaustive enumerator accepts.
pub const EXHAUSTIVE_LIMIT: f64 = 1e8;

/// Bill with no battery: solar offsets general consumption directly, and
/// (when the config lets solar serve controlled load) the remaining surplus
/// offsets controlled load.
pub fn no_battery_cost(trace: &[HalfHourRecord], config: &EnvConfig) -> f64 {
    trace
        .iter()
        .map(|r| {
            let surplus = if config.solar_serves_cl {
                (r.cs - r.gc).max(0.0)
            } else {
                0.0
            };
            config.tariff_gc * (r.gc - r.cs).max(0.0) + config.tariff_cl * (r.cl - surplus).max(0.0)
        })
        .sum()
}

/// Charge with all available solar, top up from the grid at night when there
/// is no sun, and discharge to cover whatever general consumption the
/// leftover solar does not.
pub fn greedy_policy(obs: &Observation, in_window: bool) -> Action {
    let headroom = (obs.capacity - obs.charge).max(0.0);
    let leftover_solar = obs.cs - obs.cs.min(headroom);
    let charge_grid = if in_window && obs.cs == 0.0 {
        headroom
    } else {
        0.0
    };
    Action {
        charge_solar: headroom,
        charge_grid,
        discharge: (obs.gc - leftover_solar).max(0.0),
    }
}

/// Evenly spaced state-of-charge levels and per-component request levels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lattice {
    pub capacity: f64,
    pub soc_levels: usize,
    pub action_levels: usize,
}

impl Lattice {
    pub fn new(capacity: f64, soc_levels: usize, action_levels: usize) -> Result<Self> {
        if soc_levels < 2 {
            return Err(Error::config_at("oracle.soc_levels", "need at least 2 levels"));
        }
        if action_levels < 2 {
            return Err(Error::config_at("oracle.action_levels", "need at least 2 levels"));
        }
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(Error::config_at("env.capacity", "must be positive and finite"));
        }
        Ok(Lattice {
            capacity,
            soc_levels,
            action_levels,
        })
    }

    pub fn soc(&self, level: usize) -> f64 {
        self.capacity * level as f64 / (self.soc_levels - 1) as f64
    }

    /// Highest level not above `charge` (up to a 1e-9 relative slack for
    /// rounding noise).
    pub fn snap(&self, charge: f64) -> usize {
        let step = self.capacity / (self.soc_levels - 1) as f64;
        ((charge / step + 1e-9).floor().max(0.0) as usize).min(self.soc_levels - 1)
    }

    pub fn n_actions(&self) -> usize {
        self.action_levels.pow(3)
    }

    /// Action number `i` in base `A`: digits are (solar, grid, discharge).
    pub fn action(&self, i: usize) -> Action {
        let a = self.action_levels;
        let level = |d: usize| self.capacity * d as f64 / (a - 1) as f64;
        Action {
            charge_solar: level(i / (a * a)),
            charge_grid: level((i / a) % a),
            discharge: level(i % a),
        }
    }
}

/// One clipped and settled step from an arbitrary charge.
fn transition(
    config: &EnvConfig,
    record: &HalfHourRecord,
    charge: f64,
    request: Action,
) -> Result<(f64, f64)> {
    let in_window = config.in_window(record.timestamp.slot())?;
    let state = BatteryState {
        capacity: config.capacity,
        charge,
    };
    let clipped = clip_action(request, state, record, in_window);
    let (next, s) = settle(state, record, clipped, config, in_window)?;
    Ok((next.charge, s.cost))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedSchedule {
    pub soc_levels: usize,
    pub action_levels: usize,
    /// Lattice action index chosen at each step.
    pub action_indices: Vec<usize>,
    /// The raw requests those indices stand for.
    pub requests: Vec<Action>,
    /// Optimum of the lattice problem (charge rounded down after every step).
    pub lattice_cost: f64,
    /// Cost of replaying `requests` through the continuous simulator.
    pub total_cost: f64,
}

impl DiscretizedSchedule {
    /// Replay the schedule through the simulator.
    pub fn replay(&self, trace: &[HalfHourRecord], config: &EnvConfig) -> Result<Rollout> {
        if trace.len() != self.requests.len() {
            return Err(Error::Shape(format!(
                "schedule has {} steps, trace has {}",
                self.requests.len(),
                trace.len()
            )));
        }
        let mut t = 0;
        let mut replay = |_: &Observation, _: bool| {
            let a = self.requests[t];
            t += 1;
            a
        };
        env::rollout(config, trace, &mut replay)
    }
}

/// Backward induction over the SoC lattice with full knowledge of the trace.
///
/// After every step the charge is rounded DOWN to a lattice level, so the
/// lattice problem never credits energy the battery does not hold. Its
/// optimum (`lattice_cost`, from an empty battery) is therefore an upper
/// bound on the cost of replaying the arg-min schedule through the
/// continuous simulator (`total_cost`), and it can only improve when the
/// lattice is refined with nested levels.
pub fn perfect_foresight_dp(
    trace: &[HalfHourRecord],
    config: &EnvConfig,
    soc_levels: usize,
    action_levels: usize,
) -> Result<DiscretizedSchedule> {
    config.validate()?;
    let lattice = Lattice::new(config.capacity, soc_levels, action_levels)?;
    let horizon = trace.len();
    let k = lattice.soc_levels;
    let n_actions = lattice.n_actions();
    let actions: Vec<Action> = (0..n_actions).map(|i| lattice.action(i)).collect();

    // value[t * k + level]: optimal lattice cost-to-go from step t.
    let mut value = vec![0.0; (horizon + 1) * k];
    for t in (0..horizon).rev() {
        let (head, tail) = value.split_at_mut((t + 1) * k);
        let next_values = &tail[..k];
        for level in 0..k {
            let charge = lattice.soc(level);
            let mut best = f64::INFINITY;
            for &request in &actions {
                let (next, cost) = transition(config, &trace[t], charge, request)?;
                let q = cost + next_values[lattice.snap(next)];
                if q < best {
                    best = q;
                }
            }
            head[t * k + level] = best;
        }
    }

    let mut action_indices = Vec::with_capacity(horizon);
    let mut requests = Vec::with_capacity(horizon);
    let mut level = 0;
    for (t, record) in trace.iter().enumerate() {
        let next_values = &value[(t + 1) * k..(t + 2) * k];
        let mut best = (f64::INFINITY, 0usize, 0usize);
        for (i, &request) in actions.iter().enumerate() {
            let (next, cost) = transition(config, record, lattice.soc(level), request)?;
            let next_level = lattice.snap(next);
            let q = cost + next_values[next_level];
            if q < best.0 {
                best = (q, i, next_level);
            }
        }
        action_indices.push(best.1);
        requests.push(actions[best.1]);
        level = best.2;
    }

    let mut schedule = DiscretizedSchedule {
        soc_levels,
        action_levels,
        action_indices,
        requests,
        lattice_cost: value[0],
        total_cost: 0.0,
    };
    if horizon > 0 {
        schedule.total_cost = schedule.replay(trace, config)?.total_cost;
    }
    Ok(schedule)
}

/// Minimum lattice-problem cost over every action sequence, by depth-first
/// enumeration. Only for tiny traces.
pub fn enumerate_exhaustive(
    trace: &[HalfHourRecord],
    config: &EnvConfig,
    soc_levels: usize,
    action_levels: usize,
) -> Result<f64> {
    config.validate()?;
    let lattice = Lattice::new(config.capacity, soc_levels, action_levels)?;
    let size = (lattice.n_actions() as f64).powi(trace.len() as i32) * soc_levels as f64;
    if size > EXHAUSTIVE_LIMIT {
        return Err(Error::ResourceGuard(format!(
            "{} steps with {action_levels} action levels and {soc_levels} SoC levels \
             is {size:.3e} sequences (limit {EXHAUSTIVE_LIMIT:.0e})",
            trace.len()
        )));
    }

    fn search(
        trace: &[HalfHourRecord],
        config: &EnvConfig,
        lattice: &Lattice,
        level: usize,
    ) -> Result<f64> {
        let Some((record, rest)) = trace.split_first() else {
            return Ok(0.0);
        };
        let mut best = f64::INFINITY;
        for i in 0..lattice.n_actions() {
            let (next, cost) = transition(config, record, lattice.soc(level), lattice.action(i))?;
            let total = cost + search(rest, config, lattice, lattice.snap(next))?;
            best = best.min(total);
        }
        Ok(best)
    }

    search(trace, config, &lattice, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_weeks, SyntheticProfile, Timestamp};
    use crate::env::rollout;
    use chrono::NaiveDate;

    fn rec(slot: usize, gc: f64, cl: f64, cs: f64) -> HalfHourRecord {
        let ts = Timestamp::new(NaiveDate::from_ymd_opt(2013, 1, 7).unwrap(), slot).unwrap();
        HalfHourRecord::new(ts, gc, cl, cs).unwrap()
    }

    #[test]
    fn no_battery_examples() {
        let c = EnvConfig::default();
        assert!((no_battery_cost(&[rec(24, 1.0, 0.5, 0.0)], &c) - 0.32).abs() < 1e-12);
        assert_eq!(no_battery_cost(&[rec(24, 0.5, 0.0, 0.7), rec(25, 0.2, 0.0, 0.2)], &c), 0.0);
    }

    #[test]
    fn greedy_examples() {
        let obs = Observation {
            capacity: 1.0,
            cs: 0.6,
            ..Default::default()
        };
        assert!(greedy_policy(&obs, false).charge_solar >= 0.6);

        let obs = Observation {
            capacity: 1.0,
            charge: 0.5,
            ..Default::default()
        };
        assert_eq!(greedy_policy(&obs, true).charge_grid, 0.5);
        assert_eq!(greedy_policy(&obs, false).charge_grid, 0.0);

        let obs = Observation {
            capacity: 1.0,
            charge: 1.0,
            gc: 0.8,
            ..Default::default()
        };
        assert_eq!(greedy_policy(&obs, false).discharge, 0.8);
    }

    #[test]
    fn lattice_levels_and_actions() {
        let l = Lattice::new(2.0, 5, 3).unwrap();
        assert_eq!(l.soc(4), 2.0);
        assert_eq!(l.snap(0.74), 1);
        assert_eq!(l.snap(0.99), 1);
        assert_eq!(l.snap(1.0 - 1e-12), 2);
        assert_eq!(l.snap(9.0), 4);
        assert_eq!(l.n_actions(), 27);
        assert_eq!(l.action(0), Action::ZERO);
        assert_eq!(l.action(26), Action::new(2.0, 2.0, 2.0));
        assert_eq!(l.action(7), Action::new(0.0, 2.0, 1.0));
        assert!(Lattice::new(1.0, 1, 3).is_err());
        assert!(Lattice::new(1.0, 3, 1).is_err());
    }

    #[test]
    fn zero_trace_has_zero_cost() {
        let trace: Vec<_> = (0..48).map(|s| rec(s, 0.0, 0.0, 0.0)).collect();
        let sched = perfect_foresight_dp(&trace, &EnvConfig::default(), 5, 3).unwrap();
        assert_eq!(sched.total_cost, 0.0);
        assert_eq!(sched.lattice_cost, 0.0);
        // Ties resolve to the lowest index, which is the null action.
        assert!(sched.action_indices.iter().all(|&i| i == 0));
    }

    #[test]
    fn empty_horizon() {
        let sched = perfect_foresight_dp(&[], &EnvConfig::default(), 5, 3).unwrap();
        assert!(sched.requests.is_empty());
        assert_eq!(sched.total_cost, 0.0);
    }

    #[test]
    fn single_step_exhaustive_is_best_single_action() {
        let config = EnvConfig::with_capacity(1.0);
        let r = rec(2, 0.4, 0.2, 0.0);
        let lattice = Lattice::new(1.0, 5, 3).unwrap();
        let best = (0..27)
            .map(|i| transition(&config, &r, 0.0, lattice.action(i)).unwrap().1)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(enumerate_exhaustive(&[r], &config, 5, 3).unwrap(), best);
    }

    #[test]
    fn resource_guard() {
        let trace: Vec<_> = (0..8).map(|s| rec(s, 0.1, 0.0, 0.0)).collect();
        assert!(matches!(
            enumerate_exhaustive(&trace, &EnvConfig::default(), 5, 3),
            Err(Error::ResourceGuard(_))
        ));
    }

    #[test]
    fn schedule_cost_matches_replay_and_sandwich_holds() {
        let p = SyntheticProfile {
            noise: 0.3,
            ..SyntheticProfile::default()
        };
        let week = &generate_synthetic_weeks(1, &p, 3).unwrap()[0];
        let config = EnvConfig::default();
        let sched = perfect_foresight_dp(week.records(), &config, 17, 3).unwrap();
        let replay = sched.replay(week.records(), &config).unwrap();
        assert!((replay.total_cost - sched.total_cost).abs() < 1e-9);
        let greedy = rollout(&config, week.records(), &mut greedy_policy).unwrap();
        let none = no_battery_cost(week.records(), &config);
        assert!(sched.total_cost <= greedy.total_cost + 1e-9);
        assert!(greedy.total_cost <= none + 1e-9);
    }
}
