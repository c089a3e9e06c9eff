mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use probdmp::dataset::{apply_perturbation, generate_letter_dataset, PerturbationSpec};
use probdmp::dmp::{integrate, rollout_weights, scaling_factor};
use probdmp::imitation::demo_task;
use probdmp::kalman::{execute_and_monitor, rollout};
use probdmp::lds::DiscretizationMode;
use probdmp::{learn_primitive, LearnConfig, PrimitiveModel, TaskSpec};

const MODES: [DiscretizationMode; 2] = [
    DiscretizationMode::SubstitutedEuler,
    DiscretizationMode::PrintedA,
];

/// Largest gap between the probabilistic rollout mean and the scalar
/// integrator driven by the posterior mean weights.
fn rollout_vs_scalar(model: &PrimitiveModel, task: &TaskSpec, n: usize) -> f64 {
    let beliefs = rollout(model, task, n).unwrap();
    let mut worst: f64 = 0.0;
    for dof in 0..model.n_dofs() {
        let tp = model.dof_params(dof, task);
        let w = &model.dofs[dof].posterior.mean_w;
        let kin = rollout_weights(&model.hyper, &tp, w, n, model.mode).unwrap();
        for (b, (p, v)) in beliefs.iter().zip(kin.pos.iter().zip(&kin.vel)) {
            worst = worst.max((b.dofs[dof].mean[2] - p).abs());
            worst = worst.max((b.dofs[dof].mean[1] - v).abs());
        }
    }
    worst
}

#[test]
fn rollout_mean_is_the_scalar_dmp() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for draw in 0..10 {
        for mode in MODES {
            let goal = rng.random_range(0.5..20.0);
            let model = random_model(draw, 2, mode, 0.01, 151, goal);
            let start = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let goal = vec![rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
            let task = model.task(start, goal);
            let gap = rollout_vs_scalar(&model, &task, 151);
            assert!(gap < 1e-9, "draw {draw} {mode:?}: {gap:e}");
        }
    }
}

#[test]
fn rollout_uses_the_scaled_forcing() {
    // the same oracle written against the integrator directly
    let model = random_model(8, 1, DiscretizationMode::SubstitutedEuler, 0.01, 101, 3.0);
    let task = model.task(vec![0.5], vec![-2.0]);
    let plan = model.plan(0, &task).unwrap();
    let s = scaling_factor(&plan.tp).unwrap();
    let forcing: Vec<f64> = (0..100).map(|t| s * plan.forcing(t).0).collect();
    let kin = integrate(&model.hyper, &plan.tp, &forcing, model.mode);
    let beliefs = rollout(&model, &task, 101).unwrap();
    for (b, p) in beliefs.iter().zip(&kin.pos) {
        assert!((b.dofs[0].mean[2] - p).abs() < 1e-9);
    }
}

#[test]
fn trained_letter_rollout_is_the_scalar_dmp() {
    let ds = generate_letter_dataset(42, 10, 0);
    for letter in ["a", "s", "w"] {
        let (model, _) = learn_primitive(
            ds.letter(letter).unwrap().train.clone(),
            letter,
            &LearnConfig::default(),
        )
        .unwrap();
        let gap = rollout_vs_scalar(&model, &model.default_task(), model.fit.n_steps);
        // positions are in millimetres, so the bound is relative to the stroke
        let range = model
            .fit
            .delta_g
            .iter()
            .map(|g| g.abs())
            .fold(1.0, f64::max);
        assert!(gap < 1e-9 * range, "{letter}: {gap:e}");
    }
}

#[test]
fn zero_forcing_converges_to_the_goal() {
    for mode in MODES {
        let mut model = deterministic_model(&random_model(4, 3, mode, 0.01, 201, 1.0));
        model.fit.tau = 1.0;
        let start = vec![0.0, 2.0, -1.0];
        let goal = vec![1.0, -3.0, 5.0];
        let task = model.task(start.clone(), goal.clone());
        // T = 2 s at dt = 0.01
        let last = rollout(&model, &task, 201).unwrap().pop().unwrap();
        for d in 0..3 {
            let err = (last.positions()[d] - goal[d]).abs();
            assert!(
                err < 1e-3 * (goal[d] - start[d]).abs(),
                "{mode:?} DOF {d}: {err:e}"
            );
        }
    }
}

#[test]
fn noiseless_observations_of_the_plan_leave_it_unchanged() {
    let model = random_model(21, 2, DiscretizationMode::SubstitutedEuler, 0.01, 101, 6.0);
    let task = model.default_task();
    let plan = rollout(&model, &task, 101).unwrap();
    let obs: Vec<Option<Vec<f64>>> = plan.iter().map(|b| Some(b.positions())).collect();
    let trace = execute_and_monitor(&model, &task, 101, obs).unwrap();
    for (a, b) in trace.beliefs.iter().zip(&plan) {
        for (x, y) in a.dofs.iter().zip(&b.dofs) {
            assert!((x.mean - y.mean).amax() < 1e-9 * (1.0 + y.mean.amax()));
        }
    }
}

#[test]
fn short_streams_return_partial_traces() {
    let model = random_model(2, 1, DiscretizationMode::SubstitutedEuler, 0.01, 101, 1.0);
    let obs = vec![Some(vec![0.0]); 30];
    let trace = execute_and_monitor(&model, &model.default_task(), 101, obs).unwrap();
    assert!(!trace.completed);
    assert_eq!(trace.beliefs.len(), 30);
    assert_eq!(trace.likelihoods.len(), 30);
}

#[test]
fn blocked_motion_flattens_the_belief_and_drops_the_likelihood() {
    let ds = generate_letter_dataset(42, 10, 10);
    let l = ds.letter("b").unwrap();
    let (model, _) = learn_primitive(l.train.clone(), "b", &LearnConfig::default()).unwrap();
    let n = model.fit.n_steps;
    let tb = n / 2;
    let mut nominal = Vec::new();
    for demo in &l.test {
        let task = demo_task(&model, demo);
        let trace = execute_and_monitor(&model, &task, n, demo.samples.iter().map(Some)).unwrap();
        nominal.extend(trace.logliks().into_iter().flatten());
    }
    nominal.sort_by(f64::total_cmp);
    let q01 = nominal[nominal.len() / 100];

    let demo = &l.test[0];
    let held = apply_perturbation(demo, &PerturbationSpec::hold(0.5, 0.5)).unwrap();
    let task = demo_task(&model, &held);
    let trace = execute_and_monitor(&model, &task, n, held.samples.iter().map(Some)).unwrap();
    let ll = trace.logliks()[tb + 10].unwrap();
    assert!(
        ll < q01,
        "loglik {ll} after the block is not below the 1% quantile {q01}"
    );
    // the filtered position stays near the held value
    let hold = &held.samples[tb];
    let free = rollout(&model, &task, n).unwrap();
    for (t, (b, f)) in trace.beliefs.iter().zip(&free).enumerate().skip(tb + 10) {
        for (d, h) in hold.iter().enumerate() {
            let to_hold = (b.positions()[d] - h).abs();
            let plan_gap = (f.positions()[d] - h).abs();
            assert!(
                to_hold <= plan_gap + 1e-6,
                "step {t} DOF {d}: {to_hold} vs {plan_gap}"
            );
        }
    }
}
