use chrono::NaiveDate;
use proptest::prelude::*;
use solarbatt::config::SWEEP_CAPACITIES;
use solarbatt::data::{generate_synthetic_weeks, HalfHourRecord, SyntheticProfile, Timestamp};
use solarbatt::env::{rollout, EnvConfig};
use solarbatt::oracle::{enumerate_exhaustive, greedy_policy, no_battery_cost, perfect_foresight_dp};

const TOL: f64 = 1e-9;

fn tiny_trace() -> impl Strategy<Value = Vec<HalfHourRecord>> {
    (0usize..48, proptest::collection::vec((0.0..1.0f64, 0.0..0.5f64, 0.0..1.0f64), 1..=4)).prop_map(
        |(start, values)| {
            let date = NaiveDate::from_ymd_opt(2013, 1, 7).unwrap();
            values
                .into_iter()
                .enumerate()
                .map(|(i, (gc, cl, cs))| {
                    let ts = Timestamp::new(date, (start + i) % 48).unwrap();
                    HalfHourRecord::new(ts, gc, cl, cs).unwrap()
                })
                .collect()
        },
    )
}

fn noisy_weeks(n: usize, seed: u64) -> Vec<solarbatt::data::WeekTrace> {
    let profile = SyntheticProfile {
        noise: 0.5,
        ..SyntheticProfile::default()
    };
    generate_synthetic_weeks(n, &profile, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn dp_equals_exhaustive(trace in tiny_trace(), cap in 0.2..2.0f64) {
        let config = EnvConfig::with_capacity(cap);
        let dp = perfect_foresight_dp(&trace, &config, 5, 3).unwrap();
        let ex = enumerate_exhaustive(&trace, &config, 5, 3).unwrap();
        prop_assert!((dp.lattice_cost - ex).abs() <= TOL, "dp {} exhaustive {}", dp.lattice_cost, ex);
        prop_assert!(dp.total_cost <= dp.lattice_cost + TOL);
    }
}

#[test]
fn sandwich_on_synthetic_weeks() {
    let config = EnvConfig::with_capacity(1.0);
    for week in noisy_weeks(12, 5) {
        let trace = week.records();
        let dp = perfect_foresight_dp(trace, &config, 17, 3).unwrap().total_cost;
        let greedy = rollout(&config, trace, &mut greedy_policy).unwrap().total_cost;
        let none = no_battery_cost(trace, &config);
        assert!(dp <= greedy + TOL && greedy <= none + TOL, "{dp} {greedy} {none}");
    }
}

#[test]
fn dp_cost_non_increasing_in_capacity() {
    for week in noisy_weeks(3, 9) {
        let mut last = f64::INFINITY;
        for cap in SWEEP_CAPACITIES {
            let dp = perfect_foresight_dp(week.records(), &EnvConfig::with_capacity(cap), 33, 3).unwrap();
            assert!(dp.lattice_cost <= last + TOL, "capacity {cap}: {} > {last}", dp.lattice_cost);
            last = dp.lattice_cost;
        }
    }
}

#[test]
fn dp_cost_non_increasing_under_refinement() {
    let config = EnvConfig::with_capacity(1.0);
    let week = &noisy_weeks(1, 21)[0];
    let day = &week.records()[..96];
    let mut last = f64::INFINITY;
    for k in [3, 5, 9, 17, 33] {
        let c = perfect_foresight_dp(day, &config, k, 3).unwrap().lattice_cost;
        assert!(c <= last + TOL, "K={k}: {c} > {last}");
        last = c;
    }
    let mut last = f64::INFINITY;
    for a in [2, 3, 5] {
        let c = perfect_foresight_dp(day, &config, 9, a).unwrap().lattice_cost;
        assert!(c <= last + TOL, "A={a}: {c} > {last}");
        last = c;
    }
}

#[test]
fn schedule_replays_to_reported_cost() {
    let config = EnvConfig::with_capacity(0.8);
    let week = &noisy_weeks(1, 2)[0];
    let dp = perfect_foresight_dp(week.records(), &config, 9, 3).unwrap();
    let replay = dp.replay(week.records(), &config).unwrap();
    assert_eq!(replay.total_cost, dp.total_cost);
    assert_eq!(dp.requests.len(), week.records().len());
    assert!(dp.replay(&week.records()[1..], &config).is_err());
}
