use std::collections::BTreeSet;

use loadrank::chiller::{fit_chiller, ChillerFitOptions, ChillerObservation};
use loadrank::controller::{greedy_select, RankedAlternatives, ScoredAlternative};
use loadrank::domain::{
    enumerate_alternatives, Appliance, BaselinePolicy, Building, CriteriaConfig, Floor, Timestamp, Zone,
};
use loadrank::emulator::{Command, Emulator, EmulatorConfig};
use loadrank::mcdm::RankingResult;
use loadrank::occupancy::{fit_occupancy, forecast, OccupancyFitOptions, OccupancyState, OccupancyTrace};
use loadrank::scoring::CurtailmentScaleParams;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per zone, a list of appliance kinds: 0 HVAC, 1 light, 2 plug.
fn arb_building() -> impl Strategy<Value = Building> {
    prop::collection::vec(prop::collection::vec(0u8..3, 0..4), 1..6).prop_map(|zones| Building {
        id: "b".into(),
        floor_area_m2: 100.0,
        floors: vec![Floor {
            id: "F".into(),
            zones: zones
                .iter()
                .enumerate()
                .map(|(z, kinds)| Zone {
                    id: format!("z{z}"),
                    desired_temp_c: 22.0,
                    comfort_alpha: 10.0,
                    comfort_delta_c: 3.0,
                    appliances: kinds
                        .iter()
                        .enumerate()
                        .map(|(k, kind)| {
                            let id = format!("z{z}/a{k}");
                            match kind {
                                0 => Appliance::hvac(id),
                                1 => Appliance::dimmable_light(id, 500.0),
                                _ => Appliance::plug_load(id, 150.0),
                            }
                        })
                        .collect(),
                })
                .collect(),
        }],
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alternative_count_is_sum_of_settings(b in arb_building()) {
        let all = enumerate_alternatives(&b, BaselinePolicy::Include).unwrap();
        let total: usize = b.appliances().map(|(_, a)| a.settings.len()).sum();
        prop_assert_eq!(all.len(), total);
        let ranked = enumerate_alternatives(&b, BaselinePolicy::Exclude).unwrap();
        let baselines = b.appliances().filter(|(_, a)| a.baseline_index().is_some()).count();
        prop_assert_eq!(ranked.len(), total - baselines);
        prop_assert!(ranked.iter().all(|a| !a.baseline));
        prop_assert_eq!(enumerate_alternatives(&b, BaselinePolicy::Include).unwrap(), all);
    }

    #[test]
    fn greedy_is_exclusive_and_rank_consistent(
        b in arb_building(),
        seed in any::<u64>(),
        target in prop::option::of(0.0f64..5000.0),
    ) {
        let alts = enumerate_alternatives(&b, BaselinePolicy::Exclude).unwrap();
        prop_assume!(!alts.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alternatives: Vec<ScoredAlternative> = alts
            .into_iter()
            .map(|a| ScoredAlternative {
                alternative: a,
                occupied_prob: rng.random(),
                estimated_reduction_w: if rng.random_bool(0.2) { -rng.random_range(0.0..100.0) } else { rng.random_range(0.0..800.0) },
                occupied_comfort: 1.0,
                expected_scores: vec![0.5, 0.5],
                curtailment_clamped: false,
            })
            .collect();
        let n = alternatives.len();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut fitness = vec![0.0; n];
        for (pos, &i) in order.iter().enumerate() {
            fitness[i] = 1.0 - pos as f64 / n as f64;
        }
        let ranked = RankedAlternatives {
            timestamp: Timestamp(0),
            criteria: CriteriaConfig::default(),
            scale: CurtailmentScaleParams::new(10.0, 1000.0, 10.0).unwrap(),
            alternatives,
            ranking: RankingResult { order: order.clone(), fitness, superiority: vec![], rationale: vec![] },
        };
        let (selected, total, unmet) = greedy_select(&ranked, target);

        let knobs: BTreeSet<&str> = selected.iter().map(|s| s.alternative.appliance_id.as_str()).collect();
        prop_assert_eq!(knobs.len(), selected.len());
        prop_assert!(selected.windows(2).all(|w| w[0].rank < w[1].rank));
        let sum: f64 = selected.iter().map(|s| s.estimated_reduction_w).sum();
        prop_assert!((sum - total).abs() < 1e-9);

        // Every skipped alternative ranked above the last pick was blocked or useless.
        let last = selected.last().map(|s| s.rank);
        let picked: BTreeSet<usize> = selected.iter().map(|s| s.rank).collect();
        let horizon = if unmet || target.is_none() { n } else { last.unwrap_or(0) };
        for pos in 0..horizon {
            if picked.contains(&pos) {
                continue;
            }
            let s = &ranked.alternatives[order[pos]];
            let blocked = selected
                .iter()
                .any(|p| p.rank < pos && p.alternative.appliance_id == s.alternative.appliance_id);
            let useless = s.estimated_reduction_w <= 0.0;
            prop_assert!(blocked || useless, "position {} skipped without cause", pos);
        }
        match target {
            Some(t) if unmet => prop_assert!(total < t),
            Some(t) => {
                prop_assert!(total >= t);
                if let Some(l) = selected.last() {
                    prop_assert!(total - l.estimated_reduction_w < t);
                }
            }
            None => prop_assert!(!unmet),
        }
    }

    #[test]
    fn occupancy_fit_rows_are_stochastic(seed in any::<u64>(), p_switch in 0.01f64..0.5, pooling in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bit = false;
        let bits: Vec<bool> = (0..8 * 288)
            .map(|_| {
                if rng.random_bool(p_switch) {
                    bit = !bit;
                }
                bit
            })
            .collect();
        let trace = OccupancyTrace::from_bits("z", Timestamp(0), 300, bits).unwrap();
        let model = fit_occupancy(&trace, &OccupancyFitOptions { pooling, ..OccupancyFitOptions::default() }).unwrap();
        for w in &model.windows {
            for row in w {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
        let t = Timestamp(rng.random_range(0..86_400));
        let state = OccupancyState::new(rng.random_bool(0.5), rng.random_range(0..300));
        let f = forecast(&model, state, t, 120);
        prop_assert!(f.horizon.iter().all(|p| (0.0..=1.0).contains(&p.occupied_prob)));
    }

    #[test]
    fn ols_residuals_are_orthogonal(seed in any::<u64>(), zones in 1usize..5, n in 200usize..600) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<String> = (0..zones).map(|z| format!("z{z}")).collect();
        let beta_z: Vec<f64> = (0..zones).map(|_| -rng.random_range(50.0..300.0)).collect();
        let obs: Vec<ChillerObservation> = (0..n)
            .map(|k| {
                let tout = rng.random_range(25.0..40.0);
                let sp: Vec<f64> = (0..zones).map(|_| rng.random_range(19.0..27.0)).collect();
                let p = 40_000.0 + 400.0 * tout + sp.iter().zip(&beta_z).map(|(s, b)| s * b).sum::<f64>();
                ChillerObservation {
                    timestamp: Timestamp(k as i64 * 300),
                    chiller_power_w: p * (1.0 + rng.random_range(-0.05..0.05)),
                    outdoor_temp_c: tout,
                    setpoints_c: sp,
                }
            })
            .collect();
        let m = fit_chiller(&ids, &obs, &ChillerFitOptions::default()).unwrap();
        let mut xtr = vec![0.0f64; zones + 2];
        let mut scale = vec![0.0f64; zones + 2];
        for o in &obs {
            let r = m.predict_power(o.outdoor_temp_c, &o.setpoints_c).unwrap() - o.chiller_power_w;
            let row: Vec<f64> = [1.0, o.outdoor_temp_c].into_iter().chain(o.setpoints_c.iter().copied()).collect();
            for (j, x) in row.iter().enumerate() {
                xtr[j] += x * r;
                scale[j] += (x * o.chiller_power_w).abs();
            }
        }
        for j in 0..zones + 2 {
            prop_assert!(xtr[j].abs() / scale[j] < 1e-6, "column {}: {}", j, xtr[j]);
        }
    }
}

fn emulator(seed: u64) -> Emulator {
    Emulator::new(
        Building::office(1),
        EmulatorConfig {
            seed,
            dt_s: 300,
            start: Timestamp::from_hours(6.0),
            occupancy_training_days: 7,
            ..EmulatorConfig::default()
        },
    )
    .unwrap()
}

fn arb_commands() -> impl Strategy<Value = Vec<(usize, usize, usize)>> {
    // (step, appliance index, setting index), reduced modulo sizes at use.
    prop::collection::vec((0usize..24, 0usize..15, 0usize..11), 0..12)
}

fn commands_at(step: usize, cmds: &[(usize, usize, usize)], b: &Building) -> Vec<Command> {
    let apps: Vec<_> = b.appliances().map(|(_, a)| a).collect();
    cmds.iter()
        .filter(|c| c.0 == step)
        .map(|&(_, a, s)| {
            let app = apps[a % apps.len()];
            Command::Set {
                appliance_id: app.id.clone(),
                setting_index: s % app.settings.len(),
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn emulator_is_deterministic_and_commands_idempotent(seed in 0u64..1000, cmds in arb_commands()) {
        let b = Building::office(1);
        let mut once = emulator(seed);
        let mut again = emulator(seed);
        let mut twice = emulator(seed);
        for step in 0..24 {
            for c in commands_at(step, &cmds, &b) {
                once.submit(c.clone()).unwrap();
                again.submit(c.clone()).unwrap();
                twice.submit(c.clone()).unwrap();
                twice.submit(c).unwrap();
            }
            let s1 = once.step().unwrap().clone();
            prop_assert_eq!(&s1, again.step().unwrap());
            prop_assert_eq!(&s1, twice.step().unwrap());
        }
    }
}
