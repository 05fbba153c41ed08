use chrono::NaiveDate;
use proptest::prelude::*;
use solarbatt::data::{generate_synthetic_weeks, HalfHourRecord, SyntheticProfile, Timestamp};
use solarbatt::env::{
    clip_action, is_controlled_window, null_policy, rollout, settle, Action, BatteryEnv,
    BatteryState, EnvConfig, Observation,
};
use solarbatt::oracle::{greedy_policy, no_battery_cost};

const TOL: f64 = 1e-9;

fn record(slot: usize, gc: f64, cl: f64, cs: f64) -> HalfHourRecord {
    let date = NaiveDate::from_ymd_opt(2013, 1, 7).unwrap();
    HalfHourRecord::new(Timestamp::new(date, slot).unwrap(), gc, cl, cs).unwrap()
}

/// Raw requests including adversarial magnitudes and negative values.
fn raw_component() -> impl Strategy<Value = f64> {
    prop_oneof![
        0.0..3.0f64,
        Just(0.0),
        Just(1e6),
        -5.0..0.0f64,
    ]
}

fn case() -> impl Strategy<Value = (f64, f64, usize, f64, f64, f64, Action, bool)> {
    (0.05..4.0f64, 0.0..=1.0f64, 0..48usize, 0.0..2.0f64, 0.0..1.0f64, 0.0..2.0f64)
        .prop_flat_map(|(cap, frac, slot, gc, cl, cs)| {
            (
                Just(cap),
                Just(cap * frac),
                Just(slot),
                Just(gc),
                Just(cl),
                Just(cs),
                (raw_component(), raw_component(), raw_component())
                    .prop_map(|(a, b, c)| Action::new(a, b, c)),
                any::<bool>(),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn settlement_invariants((cap, charge, slot, gc, cl, cs, raw, solar_serves_cl) in case()) {
        let config = EnvConfig { capacity: cap, solar_serves_cl, ..EnvConfig::default() };
        let state = BatteryState::new(cap, charge).unwrap();
        let rec = record(slot, gc, cl, cs);
        let in_window = is_controlled_window(slot).unwrap();
        let clipped = clip_action(raw, state, &rec, in_window);
        prop_assert!(clipped.is_valid());
        let (next, s) = settle(state, &rec, clipped, &config, in_window).unwrap();

        let delta = next.charge - state.charge;
        let flows = s.solar_to_battery + s.grid_to_battery - s.discharge_to_gc - s.discharge_to_cl;
        prop_assert!((delta - flows).abs() <= TOL, "delta {delta} flows {flows}");
        prop_assert!(next.charge >= 0.0 && next.charge <= cap);
        if !in_window {
            prop_assert_eq!(s.grid_to_battery, 0.0);
        }
        let cost = config.tariff_gc * s.residual_gc
            + config.tariff_cl * s.residual_cl
            + config.tariff_cl * s.grid_to_battery;
        prop_assert!((cost - s.cost).abs() <= TOL);

        // Every stream is non-negative and the meters balance.
        for v in [s.solar_to_battery, s.solar_to_load, s.discharge_to_gc, s.discharge_to_cl,
                  s.residual_gc, s.residual_cl, s.spilled_solar] {
            prop_assert!(v >= -TOL);
        }
        prop_assert!((s.solar_to_battery + s.solar_to_load + s.spilled_solar - cs).abs() <= TOL);
        prop_assert!(
            (s.solar_to_load + s.discharge_to_gc + s.discharge_to_cl + s.residual_gc + s.residual_cl
                - gc - cl).abs() <= TOL
        );
    }

    #[test]
    fn null_action_without_solar_leaves_demand_untouched(
        gc in proptest::collection::vec(0.0..2.0f64, 48),
        cl in proptest::collection::vec(0.0..1.0f64, 48),
        cap in 0.1..3.0f64,
    ) {
        let trace: Vec<_> = (0..48).map(|i| record(i, gc[i], cl[i], 0.0)).collect();
        let r = rollout(&EnvConfig::with_capacity(cap), &trace, &mut null_policy).unwrap();
        for (step, rec) in r.steps.iter().zip(&trace) {
            prop_assert_eq!(step.settlement.residual_gc, rec.gc);
            prop_assert_eq!(step.settlement.residual_cl, rec.cl);
        }
    }

    #[test]
    fn grid_charging_only_in_window(level in 0.0..5.0f64) {
        let config = EnvConfig::with_capacity(2.0);
        let trace: Vec<_> = (0..48).map(|i| record(i, 0.3, 0.1, 0.0)).collect();
        let mut always = |_: &Observation, _: bool| Action::new(0.0, level, 0.0);
        let r = rollout(&config, &trace, &mut always).unwrap();
        for step in &r.steps {
            if !is_controlled_window(step.timestamp.slot()).unwrap() {
                prop_assert_eq!(step.settlement.grid_to_battery, 0.0);
            }
        }
    }
}

/// "Charge all solar, discharge greedily" never costs more with a bigger battery.
#[test]
fn greedy_cost_is_monotone_in_capacity() {
    let profile = SyntheticProfile {
        noise: 0.4,
        ..SyntheticProfile::default()
    };
    let weeks = generate_synthetic_weeks(4, &profile, 11).unwrap();
    let solar_first = |obs: &Observation, _: bool| {
        let headroom = obs.capacity - obs.charge;
        Action::new(headroom, 0.0, (obs.gc - (obs.cs - obs.cs.min(headroom))).max(0.0))
    };
    for week in &weeks {
        let mut last = f64::INFINITY;
        for i in 0..=20 {
            let cap = 0.1 + 0.1 * i as f64;
            let cost = rollout(&EnvConfig::with_capacity(cap), week.records(), &mut { solar_first })
                .unwrap()
                .total_cost;
            assert!(cost <= last + TOL, "capacity {cap}: {cost} > {last}");
            last = cost;
        }
    }
}

#[test]
fn null_rollout_matches_no_battery_cost() {
    let profile = SyntheticProfile {
        noise: 0.5,
        ..SyntheticProfile::default()
    };
    for week in generate_synthetic_weeks(5, &profile, 3).unwrap() {
        for serves in [true, false] {
            let config = EnvConfig {
                solar_serves_cl: serves,
                ..EnvConfig::with_capacity(1.0)
            };
            let r = rollout(&config, week.records(), &mut null_policy).unwrap();
            assert!((r.total_cost - no_battery_cost(week.records(), &config)).abs() < TOL);
        }
    }
}

#[test]
fn env_step_reward_is_negative_cost() {
    let week = &generate_synthetic_weeks(1, &SyntheticProfile::default(), 0).unwrap()[0];
    let config = EnvConfig::with_capacity(1.0);
    let (mut env, mut obs) = BatteryEnv::reset(&config, week.records()).unwrap();
    assert_eq!((obs.residual_gc, obs.residual_cl), (0.0, 0.0));
    let mut steps = 0;
    while !env.is_done() {
        let in_window = env.in_window();
        let out = env.step(greedy_policy(&obs, in_window)).unwrap();
        assert_eq!(out.reward, -out.settlement.cost);
        assert_eq!(out.observation.residual_gc, out.settlement.residual_gc);
        obs = out.observation;
        steps += 1;
    }
    assert_eq!(steps, week.records().len());
    assert!(env.step(Action::ZERO).is_err());
}

#[test]
fn settle_rejects_unclipped_actions() {
    let config = EnvConfig::with_capacity(1.0);
    let state = BatteryState::new(1.0, 0.5).unwrap();
    let rec = record(20, 0.3, 0.0, 0.2);
    for bad in [
        Action::new(0.3, 0.0, 0.0),
        Action::new(0.0, 0.1, 0.0),
        Action::new(0.0, 0.0, 0.8),
        Action::new(-0.1, 0.0, 0.0),
    ] {
        assert!(settle(state, &rec, bad, &config, false).is_err(), "{bad:?}");
    }
}
