//! One PASS/FAIL line per headline criterion. Run with
//! `cargo test -p dlc-core --test acceptance -- --nocapture` to see them.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::control::*;
use common::*;
use dlc_core::lp::{self, LpStatus};
use dlc_core::plant::DisturbanceModel;
use dlc_core::qp::{self, QpStatus};
use dlc_core::session::{Command, EventBody, Session, Status};
use dlc_core::trace::write_csv;
use dlc_core::training::{troublemaker_arm, Holder, ModeId, TROUBLE_MODES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn solver_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_lp = 0.0f64;
    for case in 0..200 {
        let prob = random_lp(&mut rng);
        let sol = lp::solve(&prob);
        match lp_vertex_oracle(&prob) {
            Some(best) => {
                check(sol.status == LpStatus::Optimal, format!("LP case {case}: {:?}", sol.status))?;
                worst_lp = worst_lp.max(rel_err(sol.objective, best));
            }
            None => check(sol.status == LpStatus::Infeasible, format!("LP case {case} should be infeasible"))?,
        }
    }
    let lp_time = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_qp = 0.0f64;
    for case in 0..100 {
        let prob = random_qp(&mut rng);
        let sol = qp::solve(&prob);
        match qp_oracle(&prob) {
            Some(best) => {
                check(sol.status == QpStatus::Optimal, format!("QP case {case}: {:?}", sol.status))?;
                worst_qp = worst_qp.max(rel_err(sol.objective, best));
            }
            None => check(sol.status == QpStatus::Infeasible, format!("QP case {case} should be infeasible"))?,
        }
    }
    let qp_time = start.elapsed().as_secs_f64();
    let detail = format!("LP rel err {worst_lp:.1e} in {lp_time:.2}s, QP rel err {worst_qp:.1e} in {qp_time:.2}s");
    check(worst_lp <= 1e-6 && worst_qp <= 1e-6 && lp_time < 60.0 && qp_time < 60.0, detail.clone())?;
    Ok(detail)
}

fn linear_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    let mut most = 0;
    for seed in 0..50 {
        let (diff, iterations, converged) = linear_case(seed);
        check(converged, format!("seed {seed} did not converge"))?;
        worst = worst.max(diff);
        most = most.max(iterations);
    }
    let detail = format!("max plan difference {worst:.1e}, at most {most} outer iterations over 50 cases");
    check(worst < 1e-8 && most <= 2, detail.clone())?;
    Ok(detail)
}

fn lpv_structure() -> Outcome {
    let model = reference_plant().model;
    let (lo, hi) = model.weighting.bounds();
    let mut unity = 0.0f64;
    for n in 0..1000 {
        let w = lo + (hi - lo) * n as f64 / 999.0;
        for row in model.weights(w).map_err(|e| e.to_string())? {
            unity = unity.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    let mut knot = 0.0f64;
    for (j, &w) in KNOTS.iter().enumerate() {
        for row in model.weights(w).map_err(|e| e.to_string())? {
            for (i, v) in row.iter().enumerate() {
                knot = knot.max((v - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    let mut gain = 0.0f64;
    let mut linear = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let w = rng.gen_range(lo..hi);
        let k = model.gain_matrix(w).map_err(|e| e.to_string())?;
        let frozen = model.linearize_at(w).map_err(|e| e.to_string())?;
        for (y, row) in k.rows.iter().enumerate() {
            for (u, g) in row.iter().enumerate() {
                let tf = frozen.channel_tf(y, u);
                let steady = if tf.is_zero() { 0.0 } else { tf.steady_state_gain().map_err(|e| e.to_string())? };
                gain = gain.max((g - steady).abs() / g.abs().max(1.0));
                let u1: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let u2: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
                let mix: Vec<f64> = u1.iter().zip(&u2).map(|(x, z)| a * x + b * z).collect();
                let (y1, y2, ym) = (tf.simulate(&u1), tf.simulate(&u2), tf.simulate(&mix));
                for n in 0..50 {
                    linear = linear.max((ym[n] - a * y1[n] - b * y2[n]).abs() / y1[n].abs().max(y2[n].abs()).max(1.0));
                }
            }
        }
    }
    let detail = format!("unity {unity:.1e}, knots {knot:.1e}, gain consistency {gain:.1e}, superposition {linear:.1e}");
    check(unity <= 1e-10 && knot <= 1e-10 && gain <= 1e-9 && linear <= 1e-9, detail.clone())?;
    Ok(detail)
}

fn run_to_end(s: &mut Session) {
    while s.status() == Status::Running {
        s.advance(100).unwrap();
    }
}

fn dlc_targets() -> Outcome {
    let start = Instant::now();
    let mut longest = 0;
    let mut lowest = f64::INFINITY;
    for (a, b) in dlc_tasks() {
        let name = format!("dlc_{a}_{b}");
        let mut s = Session::create(&name, scenario(&name)).map_err(|e| e.to_string())?;
        run_to_end(&mut s);
        check(s.status() == Status::Completed, format!("{name} ended {:?}", s.status()))?;
        let steps = s.trace().len();
        let low = s.trace().iter().filter(|r| r.cv[6] < 97.0).count();
        let score = s.score().map_err(|e| e.to_string())?.total;
        check(steps <= 40, format!("{name} took {steps} steps"))?;
        check(low == 0, format!("{name} had {low} samples with CV7 < 97"))?;
        check(score >= 95.0, format!("{name} scored {score:.2}"))?;
        longest = longest.max(steps);
        lowest = lowest.min(score);
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 120.0, format!("batch took {secs:.1}s"))?;
    Ok(format!("12 tasks, longest {longest} steps, lowest score {lowest:.2}, {secs:.1}s"))
}

fn accident_replay() -> Outcome {
    let (plant, ctl) = single_loop();
    let engine = dlc_core::impc::ImpcEngine::new(plant.model.clone(), plant.base.clone(), ctl, 0.5, &plant.base.mv, 8.0)
        .map_err(|e| e.to_string())?;
    let mut lp = Loop { engine, state: plant.initial_state(), plant };
    let mut target = 0.0;
    for _ in 0..80 {
        target = lp.step(None, &[-2.5641], &DisturbanceModel::none()).sso.y[0];
    }
    let excess = lp.state.cv[0] - target;
    check((excess - 2.5641).abs() <= 0.3, format!("true CV settles {excess:.4} above target"))?;

    let mut s = Session::create("accident", scenario("accident_replay")).map_err(|e| e.to_string())?;
    run_to_end(&mut s);
    let alarm = s.events().iter().find(|e| matches!(e.body, EventBody::Alarm { .. })).map(|e| e.t);
    let latched = s.trace().iter().skip_while(|r| !r.alarm).all(|r| r.alarm);
    check(alarm.is_some() && latched, "no latched CV7 alarm on the reference plant")?;
    Ok(format!(
        "single loop excess {excess:.4}; reference plant alarm at step {}, status {:?}",
        alarm.unwrap(),
        s.status()
    ))
}

fn scripted(name: &str) -> Session {
    let mut sc = scenario(name);
    sc.mode = ModeId::CooperationPartner;
    let mut s = Session::create("script", sc).unwrap();
    s.submit(Command::AuthorityTransfer { mv: Some("HIC102".into()), to: Holder::Operator }).unwrap();
    s.advance(3).unwrap();
    s.submit(Command::MvSet { mv: "HIC102".into(), value: 53.0 }).unwrap();
    s.advance(5).unwrap();
    s.submit(Command::AuthorityTransfer { mv: None, to: Holder::Machine }).unwrap();
    run_to_end(&mut s);
    s
}

fn csv(s: &Session) -> Vec<u8> {
    let m = &s.plant().model;
    let mut buf = Vec::new();
    write_csv(s.trace(), &m.cv_tags, &m.mv_tags, &mut buf).unwrap();
    buf
}

fn determinism() -> Outcome {
    let (a, b) = (scripted("dlc_19000_21000"), scripted("dlc_19000_21000"));
    check(csv(&a) == csv(&b), "scripted traces differ between runs")?;
    let mut names: Vec<String> = dlc_tasks().iter().map(|(a, b)| format!("dlc_{a}_{b}")).collect();
    names.push("accident_replay".into());
    for name in &names {
        let mut s = Session::create(name.as_str(), scenario(name)).map_err(|e| e.to_string())?;
        run_to_end(&mut s);
        let again = Session::replay(s.events()).map_err(|e| e.to_string())?;
        check(again.state_hash() == s.state_hash(), format!("{name}: replayed hash differs"))?;
    }
    let again = Session::replay(a.events()).map_err(|e| e.to_string())?;
    check(again.state_hash() == a.state_hash(), "scripted session: replayed hash differs")?;
    Ok(format!("byte-identical scripted traces; replay hash equal on {} scenarios", names.len() + 1))
}

fn mode_contracts() -> Outcome {
    // authority exclusivity, read back from the log
    let s = scripted("dlc_18000_20000");
    let tags = &s.plant().model.mv_tags;
    let mut machine: BTreeSet<String> = tags.iter().cloned().collect();
    for e in s.events() {
        match &e.body {
            EventBody::ModeChange { machine_mvs, .. } | EventBody::AuthorityTransfer { machine_mvs, .. } => {
                machine = machine_mvs.iter().cloned().collect();
            }
            EventBody::MvSet { mv, .. } => check(!machine.contains(mv), format!("operator moved machine-held {mv}"))?,
            EventBody::Step(r) => {
                for (i, tag) in tags.iter().enumerate() {
                    check(r.machine[i] == machine.contains(tag), format!("{tag} has two holders at step {}", r.t))?;
                }
            }
            _ => {}
        }
    }

    // advisor non-intrusion
    let mut sc = scenario("dlc_18000_21000");
    sc.mode = ModeId::OperationAdvisor;
    let mut adv = Session::create("advisor", sc).unwrap();
    adv.advance(4).unwrap();
    let before = adv.core().plant.hash();
    adv.submit(Command::HelpRequest { lookahead: 30 }).unwrap();
    check(adv.core().plant.hash() == before, "advice changed the plant state")?;

    // timer conservation
    adv.submit(Command::ModeChange { mode: ModeId::SafetySupervisor }).unwrap();
    adv.advance(3).unwrap();
    adv.submit(Command::AuthorityTransfer { mv: None, to: Holder::Machine }).unwrap();
    adv.advance(3).unwrap();
    let c = adv.core();
    let period_s = adv.plant().period_min * 60.0;
    let gap = c.timer.operator_s + c.timer.machine_s - c.plant.t as f64 * period_s - c.advisor_s;
    check(gap.abs() <= period_s, format!("timers off by {gap}s"))?;

    // troublemaker with the normal mode is the performer
    let run = |mode, trouble| {
        let mut sc = scenario("dlc_21000_20000");
        sc.mode = mode;
        sc.trouble_index = trouble;
        let mut s = Session::create("m", sc).unwrap();
        s.advance(60).unwrap();
        let decisions: Vec<String> = s
            .events()
            .iter()
            .filter_map(|e| match &e.body {
                EventBody::Decision(d) => Some(serde_json::to_string(d).unwrap()),
                _ => None,
            })
            .collect();
        (csv(&s), decisions)
    };
    check(run(ModeId::TaskPerformer, None) == run(ModeId::Troublemaker, Some(0)), "mode 0 differs from the performer")?;

    // uniform trouble draw
    let mut counts = [0usize; TROUBLE_MODES];
    for seed in 0..10_000 {
        counts[troublemaker_arm(seed)] += 1;
    }
    let sigma = (10_000.0 * 0.1 * 0.9f64).sqrt();
    let spread = counts.iter().map(|&n| (n as f64 - 1000.0).abs() / sigma).fold(0.0, f64::max);
    check(spread <= 3.0, format!("trouble draw deviates {spread:.2} sigma"))?;
    Ok(format!("exclusivity, advisor hash, timers (gap {gap:.1}s), mode-0 identity, draw within {spread:.2} sigma"))
}

fn offset_rejection() -> Outcome {
    let mut worst = 0;
    for (cv, offset) in [(1, 150.0), (3, 0.3)] {
        let cfg = reference_controller();
        let tol = 1e-3 * (cfg.sso.y_max[cv] - cfg.sso.y_min[cv]);
        let mut lp = Loop::settled(reference_plant(), cfg, 19000.0);
        let at = settles_within(&mut lp, cv, tol, &constant(cv, offset), hold(19000.0));
        let n = at.ok_or(format!("CV{} never returned to target", cv + 1))?;
        check(n <= 60, format!("CV{} needed {n} steps", cv + 1))?;
        worst = worst.max(n);
    }
    Ok(format!("back within 0.1% of range after at most {worst} steps"))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("solver oracles", solver_oracles),
        ("linear equivalence", linear_equivalence),
        ("LPV structure", lpv_structure),
        ("load-change targets", dlc_targets),
        ("accident replay", accident_replay),
        ("determinism and replay", determinism),
        ("mode contracts", mode_contracts),
        ("offset rejection", offset_rejection),
    ];
    let mut failed = Vec::new();
    println!();
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                println!("FAIL  {name}: {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
