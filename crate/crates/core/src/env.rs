//! Half-hourly battery simulator with general and controlled-load tariffs.
//!
//! One step takes a raw action (kWh requests), clips it to what the battery
//! and the slot's solar can support, then settles in a fixed order:
//!
//! 1. charge from solar, then from the grid at the controlled-load tariff
//!    (grid charging only inside the controlled window);
//! 2. leftover solar serves general consumption, then controlled load; any
//!    surplus is spilled with no revenue;
//! 3. discharge serves the remaining general consumption, then the remaining
//!    controlled load. Discharge beyond remaining demand stays in the battery;
//! 4. whatever is still unmet is bought from the grid.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{HalfHourRecord, Timestamp, SLOTS_PER_DAY};
use crate::error::{Error, Result};

pub const TARIFF_GC: f64 = 0.27;
pub const TARIFF_CL: f64 = 0.10;
/// 23:00
pub const WINDOW_START_SLOT: u8 = 46;
/// 08:00
pub const WINDOW_END_SLOT: u8 = 16;

const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub capacity: f64,
    pub charge: f64,
}

impl BatteryState {
    pub fn new(capacity: f64, charge: f64) -> Result<Self> {
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(Error::Domain(format!("capacity must be positive, got {capacity}")));
        }
        if !(charge.is_finite() && (0.0..=capacity).contains(&charge)) {
            return Err(Error::Domain(format!(
                "charge {charge} outside [0, {capacity}]"
            )));
        }
        Ok(BatteryState { capacity, charge })
    }

    pub fn headroom(&self) -> f64 {
        (self.capacity - self.charge).max(0.0)
    }
}

/// Energy requests for one step, kWh.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub charge_solar: f64,
    pub charge_grid: f64,
    pub discharge: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        charge_solar: 0.0,
        charge_grid: 0.0,
        discharge: 0.0,
    };

    pub fn new(charge_solar: f64, charge_grid: f64, discharge: f64) -> Self {
        Action {
            charge_solar,
            charge_grid,
            discharge,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.charge_solar, self.charge_grid, self.discharge]
    }

    pub fn is_valid(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// What the agent sees at the start of a step. Residuals are the unmet
/// demand of the previous step's settlement, zero at the episode start.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub capacity: f64,
    pub charge: f64,
    pub gc: f64,
    pub cl: f64,
    pub cs: f64,
    pub residual_cl: f64,
    pub residual_gc: f64,
}

impl Observation {
    pub const DIM: usize = 7;

    pub fn as_array(&self) -> [f64; Self::DIM] {
        [
            self.capacity,
            self.charge,
            self.gc,
            self.cl,
            self.cs,
            self.residual_cl,
            self.residual_gc,
        ]
    }
}

/// Energy flows and cost of one settled step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Settlement {
    pub solar_to_battery: f64,
    pub grid_to_battery: f64,
    pub solar_to_load: f64,
    pub discharge_to_gc: f64,
    pub discharge_to_cl: f64,
    pub residual_gc: f64,
    pub residual_cl: f64,
    pub spilled_solar: f64,
    pub cost: f64,
}

impl Settlement {
    /// Cost implied by the energy fields under `config`'s tariffs.
    pub fn implied_cost(&self, config: &EnvConfig) -> f64 {
        config.tariff_gc * self.residual_gc
            + config.tariff_cl * self.residual_cl
            + config.tariff_cl * self.grid_to_battery
    }

    pub fn discharge(&self) -> f64 {
        self.discharge_to_gc + self.discharge_to_cl
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Battery size, kWh.
    pub capacity: f64,
    /// AUD/kWh for general consumption.
    pub tariff_gc: f64,
    /// AUD/kWh for controlled load and for grid charging.
    pub tariff_cl: f64,
    /// First slot of the controlled window (inclusive).
    pub window_start: u8,
    /// Slot at which the controlled window closes (exclusive).
    pub window_end: u8,
    /// Whether leftover solar may serve controlled load after general
    /// consumption.
    pub solar_serves_cl: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            capacity: 1.0,
            tariff_gc: TARIFF_GC,
            tariff_cl: TARIFF_CL,
            window_start: WINDOW_START_SLOT,
            window_end: WINDOW_END_SLOT,
            solar_serves_cl: true,
        }
    }
}

impl EnvConfig {
    pub fn with_capacity(capacity: f64) -> Self {
        EnvConfig {
            capacity,
            ..EnvConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return Err(Error::config_at("env.capacity", "must be positive and finite"));
        }
        for (key, v) in [("env.tariff_gc", self.tariff_gc), ("env.tariff_cl", self.tariff_cl)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config_at(key, "must be non-negative and finite"));
            }
        }
        for (key, v) in [
            ("env.window_start", self.window_start),
            ("env.window_end", self.window_end),
        ] {
            if v as usize >= SLOTS_PER_DAY {
                return Err(Error::config_at(key, "slot index must be in 0..48"));
            }
        }
        if self.window_start == self.window_end {
            return Err(Error::config_at("env.window_end", "controlled window is empty"));
        }
        Ok(())
    }

    /// Whether `slot` starts inside this config's controlled window.
    pub fn in_window(&self, slot: usize) -> Result<bool> {
        window_contains(self.window_start as usize, self.window_end as usize, slot)
    }
}

fn window_contains(start: usize, end: usize, slot: usize) -> Result<bool> {
    if slot >= SLOTS_PER_DAY {
        return Err(Error::Domain(format!("slot index {slot} outside 0..48")));
    }
    Ok(if start < end {
        (start..end).contains(&slot)
    } else {
        slot >= start || slot < end
    })
}

/// True iff the slot starts in `[23:00, 08:00)`.
pub fn is_controlled_window(slot: usize) -> Result<bool> {
    window_contains(WINDOW_START_SLOT as usize, WINDOW_END_SLOT as usize, slot)
}

/// Clip raw requests to what is physically possible this step. Never fails
/// on non-negative input.
pub fn clip_action(
    raw: Action,
    state: BatteryState,
    record: &HalfHourRecord,
    in_window: bool,
) -> Action {
    let headroom = state.headroom();
    let charge_solar = raw.charge_solar.min(record.cs).min(headroom).max(0.0);
    let charge_grid = if in_window {
        raw.charge_grid.min(headroom - charge_solar).max(0.0)
    } else {
        0.0
    };
    let discharge = raw
        .discharge
        .min(state.charge + charge_solar + charge_grid)
        .max(0.0);
    Action {
        charge_solar,
        charge_grid,
        discharge,
    }
}

/// Settle a clipped action. Returns the next battery state and the flows.
pub fn settle(
    state: BatteryState,
    record: &HalfHourRecord,
    clipped: Action,
    config: &EnvConfig,
    in_window: bool,
) -> Result<(BatteryState, Settlement)> {
    let tol = FEASIBILITY_TOL;
    let headroom = state.headroom();
    let bad = !clipped.is_valid()
        || clipped.charge_solar > record.cs + tol
        || clipped.charge_solar + clipped.charge_grid > headroom + tol
        || (!in_window && clipped.charge_grid > 0.0)
        || clipped.discharge > state.charge + clipped.charge_solar + clipped.charge_grid + tol;
    if bad {
        return Err(Error::Contract(format!(
            "action {clipped:?} is infeasible for {state:?} and {record:?}"
        )));
    }

    let solar_to_battery = clipped.charge_solar.min(record.cs);
    let grid_to_battery = clipped.charge_grid;

    let mut solar_left = record.cs - solar_to_battery;
    let solar_to_gc = solar_left.min(record.gc);
    solar_left -= solar_to_gc;
    let solar_to_cl = if config.solar_serves_cl {
        solar_left.min(record.cl)
    } else {
        0.0
    };
    solar_left -= solar_to_cl;

    let gc_left = record.gc - solar_to_gc;
    let cl_left = record.cl - solar_to_cl;
    let discharge_to_gc = clipped.discharge.min(gc_left);
    let discharge_to_cl = (clipped.discharge - discharge_to_gc).min(cl_left);

    let mut s = Settlement {
        solar_to_battery,
        grid_to_battery,
        solar_to_load: solar_to_gc + solar_to_cl,
        discharge_to_gc,
        discharge_to_cl,
        residual_gc: gc_left - discharge_to_gc,
        residual_cl: cl_left - discharge_to_cl,
        spilled_solar: solar_left,
        cost: 0.0,
    };
    s.cost = s.implied_cost(config);

    let charge = state.charge + solar_to_battery + grid_to_battery
        - discharge_to_gc
        - discharge_to_cl;
    let next = BatteryState {
        capacity: state.capacity,
        charge: charge.clamp(0.0, state.capacity),
    };
    Ok((next, s))
}

/// Output of [`BatteryEnv::step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub settlement: Settlement,
    pub clipped: Action,
    /// Battery charge after settlement.
    pub charge: f64,
}

/// One episode over a borrowed trace.
#[derive(Clone, Debug)]
pub struct BatteryEnv<'a> {
    config: EnvConfig,
    records: &'a [HalfHourRecord],
    t: usize,
    state: BatteryState,
    residual_gc: f64,
    residual_cl: f64,
}

impl<'a> BatteryEnv<'a> {
    /// Start an episode with an empty battery and zero residuals.
    pub fn reset(config: &EnvConfig, trace: &'a [HalfHourRecord]) -> Result<(Self, Observation)> {
        config.validate()?;
        if trace.is_empty() {
            return Err(Error::config("episode trace is empty"));
        }
        let env = BatteryEnv {
            config: config.clone(),
            records: trace,
            t: 0,
            state: BatteryState::new(config.capacity, 0.0)?,
            residual_gc: 0.0,
            residual_cl: 0.0,
        };
        let obs = env.observation();
        Ok((env, obs))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> BatteryState {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.records.len()
    }

    /// Record the next step will settle against, if any.
    pub fn current_record(&self) -> Option<&'a HalfHourRecord> {
        self.records.get(self.t)
    }

    pub fn in_window(&self) -> bool {
        self.current_record()
            .map(|r| self.config.in_window(r.timestamp.slot()).unwrap_or(false))
            .unwrap_or(false)
    }

    /// Current observation. Past the last record the demand and solar fields
    /// are zero.
    pub fn observation(&self) -> Observation {
        let (gc, cl, cs) = self
            .current_record()
            .map_or((0.0, 0.0, 0.0), |r| (r.gc, r.cl, r.cs));
        Observation {
            capacity: self.state.capacity,
            charge: self.state.charge,
            gc,
            cl,
            cs,
            residual_cl: self.residual_cl,
            residual_gc: self.residual_gc,
        }
    }

    pub fn step(&mut self, raw: Action) -> Result<StepOutcome> {
        let record = self
            .current_record()
            .ok_or_else(|| Error::Protocol("step called after the episode finished".into()))?;
        if !raw.is_valid() {
            return Err(Error::Policy(format!(
                "action components must be finite and non-negative, got {raw:?}"
            )));
        }
        let in_window = self.config.in_window(record.timestamp.slot())?;
        let clipped = clip_action(raw, self.state, record, in_window);
        let (next, settlement) = settle(self.state, record, clipped, &self.config, in_window)?;
        self.state = next;
        self.residual_gc = settlement.residual_gc;
        self.residual_cl = settlement.residual_cl;
        self.t += 1;
        Ok(StepOutcome {
            observation: self.observation(),
            reward: -settlement.cost,
            done: self.is_done(),
            settlement,
            clipped,
            charge: next.charge,
        })
    }
}

/// A decision rule mapping an observation (plus whether the slot is in the
/// controlled window) to raw requests.
pub trait Policy {
    fn decide(&mut self, obs: &Observation, in_window: bool) -> Action;
}

impl<F> Policy for F
where
    F: FnMut(&Observation, bool) -> Action,
{
    fn decide(&mut self, obs: &Observation, in_window: bool) -> Action {
        self(obs, in_window)
    }
}

/// Requests nothing; equivalent to having no battery.
pub fn null_policy(_: &Observation, _: bool) -> Action {
    Action::ZERO
}

/// One row of an exported settlement table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub timestamp: Timestamp,
    pub gc: f64,
    pub cl: f64,
    pub cs: f64,
    pub settlement: Settlement,
    pub reward: f64,
    /// Battery charge after the step.
    pub charge: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub total_cost: f64,
    pub steps: Vec<StepRecord>,
}

impl Rollout {
    pub fn settlements(&self) -> impl Iterator<Item = &Settlement> {
        self.steps.iter().map(|s| &s.settlement)
    }
}

/// Run `policy` over the whole trace.
pub fn rollout<P: Policy + ?Sized>(
    config: &EnvConfig,
    trace: &[HalfHourRecord],
    policy: &mut P,
) -> Result<Rollout> {
    let (mut env, mut obs) = BatteryEnv::reset(config, trace)?;
    let mut steps = Vec::with_capacity(trace.len());
    let mut total_cost = 0.0;
    while let Some(record) = env.current_record() {
        let action = policy.decide(&obs, env.in_window());
        let out = env.step(action)?;
        total_cost += out.settlement.cost;
        steps.push(StepRecord {
            timestamp: record.timestamp,
            gc: record.gc,
            cl: record.cl,
            cs: record.cs,
            settlement: out.settlement,
            reward: out.reward,
            charge: out.charge,
        });
        obs = out.observation;
    }
    Ok(Rollout { total_cost, steps })
}

#[derive(Serialize)]
struct SettlementRow<'a> {
    label: &'a str,
    timestamp: chrono::NaiveDateTime,
    gc: f64,
    cl: f64,
    cs: f64,
    solar_to_battery: f64,
    grid_to_battery: f64,
    solar_to_load: f64,
    discharge_to_gc: f64,
    discharge_to_cl: f64,
    residual_gc: f64,
    residual_cl: f64,
    spilled_solar: f64,
    cost: f64,
    reward: f64,
    charge: f64,
}

/// Column order of settlement tables.
pub const SETTLEMENT_COLUMNS: [&str; 16] = [
    "label",
    "timestamp",
    "gc",
    "cl",
    "cs",
    "solar_to_battery",
    "grid_to_battery",
    "solar_to_load",
    "discharge_to_gc",
    "discharge_to_cl",
    "residual_gc",
    "residual_cl",
    "spilled_solar",
    "cost",
    "reward",
    "charge",
];

/// Append settlement rows to a CSV writer. `label` tags the rollout (policy
/// name, week) so several rollouts can share one file.
pub fn write_settlement_rows<W: Write>(
    writer: &mut csv::Writer<W>,
    label: &str,
    steps: &[StepRecord],
) -> Result<()> {
    for s in steps {
        let st = &s.settlement;
        writer.serialize(SettlementRow {
            label,
            timestamp: s.timestamp.start(),
            gc: s.gc,
            cl: s.cl,
            cs: s.cs,
            solar_to_battery: st.solar_to_battery,
            grid_to_battery: st.grid_to_battery,
            solar_to_load: st.solar_to_load,
            discharge_to_gc: st.discharge_to_gc,
            discharge_to_cl: st.discharge_to_cl,
            residual_gc: st.residual_gc,
            residual_cl: st.residual_cl,
            spilled_solar: st.spilled_solar,
            cost: st.cost,
            reward: s.reward,
            charge: s.charge,
        })?;
    }
    Ok(())
}
