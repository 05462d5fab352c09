mod common;

use common::*;
use dlc_core::error::Error;
use dlc_core::plant::{DisturbanceChannel, DisturbanceModel};
use dlc_core::tf::DiscreteTransferFunction;
use proptest::prelude::*;

const W_MIN: f64 = 17500.0;
const W_MAX: f64 = 21500.0;

#[test]
fn weights_sum_to_one_and_hit_knots() {
    let model = reference_plant().model;
    for n in 0..1000 {
        let w = W_MIN + (W_MAX - W_MIN) * n as f64 / 999.0;
        for row in model.weights(w).unwrap() {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-10, "w = {w}: {sum}");
        }
    }
    for (j, &knot) in KNOTS.iter().enumerate() {
        for row in model.weights(knot).unwrap() {
            for (i, v) in row.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-10, "knot {knot}: {row:?}");
            }
        }
    }
}

#[test]
fn weights_between_knots_match_independent_spline() {
    let model = reference_plant().model;
    let want = spline_weights(&KNOTS, 18500.0);
    for row in model.weights(18500.0).unwrap() {
        for (a, b) in row.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "{row:?} vs {want:?}");
        }
    }
}

#[test]
fn weights_outside_range_clamp_or_fail() {
    let model = reference_plant().model;
    let (at_edge, _) = model.weights_clamped(W_MAX);
    let (beyond, clamped) = model.weights_clamped(W_MAX + 300.0);
    assert!(clamped);
    assert_eq!(at_edge, beyond);
    assert!(model.weights(W_MIN - 1.0).is_err());
}

fn random_tf() -> impl Strategy<Value = DiscreteTransferFunction> {
    (-2.0..2.0f64, 0.05..0.95f64, 0usize..4, prop::bool::ANY, -0.5..0.5f64).prop_map(|(b, pole, d, second, extra)| {
        if second {
            DiscreteTransferFunction::new(vec![b, extra], vec![-(pole + 0.02), 0.5 * pole * 0.02], d).unwrap()
        } else {
            DiscreteTransferFunction::new(vec![b], vec![-pole], d).unwrap()
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spline_oracle_agrees_everywhere(w in W_MIN..W_MAX) {
        let model = reference_plant().model;
        let want = spline_weights(&KNOTS, w);
        for row in model.weights(w).unwrap() {
            for (a, b) in row.iter().zip(&want) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn frozen_gain_matches_blended_channel(w in W_MIN..W_MAX, k in 0usize..7, i in 0usize..10) {
        let model = reference_plant().model;
        let gains = model.gain_matrix(w).unwrap();
        let frozen = model.linearize_at(w).unwrap();
        let tf = frozen.channel_tf(k, i);
        let g = if tf.is_zero() { 0.0 } else { tf.steady_state_gain().unwrap() };
        prop_assert!((gains.rows[k][i] - g).abs() < 1e-9 * gains.rows[k][i].abs().max(1.0));
        prop_assert!((frozen.gain(k, i) - g).abs() < 1e-9 * g.abs().max(1.0));
    }

    #[test]
    fn blended_channel_is_weighted_sum_of_locals(
        w in W_MIN..W_MAX,
        k in 0usize..7,
        i in 0usize..10,
        input in prop::collection::vec(-1.0..1.0f64, 50),
    ) {
        let model = reference_plant().model;
        let frozen = model.linearize_at(w).unwrap();
        let got = frozen.channel_tf(k, i).simulate(&input);
        let mut want = vec![0.0; input.len()];
        for j in 0..model.n_w() {
            for (o, y) in want.iter_mut().zip(model.channel(j, k, i).simulate(&input)) {
                *o += frozen.weights[k][j] * y;
            }
        }
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn channels_are_linear(
        tf in random_tf(),
        u1 in prop::collection::vec(-1.0..1.0f64, 50),
        u2 in prop::collection::vec(-1.0..1.0f64, 50),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        let mix: Vec<f64> = u1.iter().zip(&u2).map(|(x, y)| a * x + b * y).collect();
        let (y1, y2, y) = (tf.simulate(&u1), tf.simulate(&u2), tf.simulate(&mix));
        for n in 0..50 {
            prop_assert!((y[n] - a * y1[n] - b * y2[n]).abs() < 1e-9);
        }
    }

    #[test]
    fn dead_time_shifts_output(tf in random_tf(), input in prop::collection::vec(-1.0..1.0f64, 50)) {
        let undelayed = DiscreteTransferFunction::new(tf.b.clone(), tf.a.clone(), 0).unwrap();
        let y = tf.simulate(&input);
        let y0 = undelayed.simulate(&input);
        for n in 0..50 {
            let want = if n >= tf.d { y0[n - tf.d] } else { 0.0 };
            prop_assert!((y[n] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn base_point_is_an_equilibrium() {
    let plant = reference_plant();
    let mut state = plant.initial_state();
    let start = state.cv.clone();
    for _ in 0..500 {
        plant.step(&mut state, &plant.base.mv.clone(), &DisturbanceModel::none()).unwrap();
    }
    for (a, b) in state.cv.iter().zip(&start) {
        assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "{a} drifted from {b}");
    }
}

fn noisy_run(seed: u64) -> Vec<Vec<f64>> {
    let plant = reference_plant();
    let noise = DisturbanceModel {
        channels: vec![DisturbanceChannel::FilteredNoise { amplitude: 5.0, pole: 0.8 }; 7],
        seed,
    };
    let mut state = plant.initial_state();
    let mut u = plant.base.mv.clone();
    (0..100)
        .map(|n| {
            u[0] = 90000.0 + 500.0 * ((n as f64) / 10.0).sin();
            plant.step(&mut state, &u, &noise).unwrap().cv
        })
        .collect()
}

#[test]
fn identical_seeds_give_identical_runs() {
    assert_eq!(noisy_run(42), noisy_run(42));
    assert_ne!(noisy_run(42), noisy_run(43));
}

#[test]
fn snapshot_restores_exact_trajectory() {
    let plant = reference_plant();
    let mut state = plant.initial_state();
    let mut u = plant.base.mv.clone();
    u[0] = 92000.0;
    for _ in 0..7 {
        plant.step(&mut state, &u, &DisturbanceModel::none()).unwrap();
    }
    let text = serde_json::to_string(&plant.snapshot(&state)).unwrap();
    let mut restored = plant.restore(&serde_json::from_str(&text).unwrap()).unwrap();
    assert_eq!(restored, state);
    for _ in 0..20 {
        let a = plant.step(&mut state, &u, &DisturbanceModel::none()).unwrap();
        let b = plant.step(&mut restored, &u, &DisturbanceModel::none()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn snapshot_from_another_plant_is_refused() {
    let plant = reference_plant();
    let mut other_cfg = reference_config();
    other_cfg.base.cv[0] += 1.0;
    let other = dlc_core::plant::Plant::from_config(&other_cfg).unwrap();
    let snap = other.snapshot(&other.initial_state());
    assert!(matches!(plant.restore(&snap), Err(Error::ConfigMismatch { .. })));
}

#[test]
fn out_of_range_mv_is_refused() {
    let plant = reference_plant();
    let mut state = plant.initial_state();
    let mut u = plant.base.mv.clone();
    u[0] = plant.mv_max[0] + 1.0;
    assert!(matches!(
        plant.step(&mut state, &u, &DisturbanceModel::none()),
        Err(Error::OutOfRange { .. })
    ));
}
