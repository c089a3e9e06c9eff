//! Shared oracles for the integration tests.
//!
//! The brute-force oracle builds the joint Gaussian over every state of a
//! short linear-Gaussian sequence and conditions it directly, with no
//! recursion, so it shares no code with the filter under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3, RowVector3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use probdmp::kalman::{DofBelief, Transition};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A random linear-Gaussian sequence with some missing observations.
pub struct Lgssm {
    pub initial: DofBelief,
    pub transitions: Vec<Transition>,
    pub c: RowVector3<f64>,
    pub r: f64,
    pub obs: Vec<Option<f64>>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_psd(rng: &mut ChaCha8Rng, rank: usize, scale: f64) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for _ in 0..rank {
        let v = Vector3::new(normal(rng), normal(rng), normal(rng));
        m += v * v.transpose() * scale;
    }
    m
}

fn sample_gaussian(rng: &mut ChaCha8Rng, mean: &Vector3<f64>, cov: &Matrix3<f64>) -> Vector3<f64> {
    let eig = cov.symmetric_eigen();
    let z = Vector3::new(normal(rng), normal(rng), normal(rng));
    let scaled = Vector3::from_iterator(
        eig.eigenvalues
            .iter()
            .zip(z.iter())
            .map(|(l, z)| l.max(0.0).sqrt() * z),
    );
    mean + eig.eigenvectors * scaled
}

/// Draws a model and an observation sequence of length `t` from it. Process
/// noise ranks vary from 1 to 3; roughly one observation in five is missing.
pub fn random_lgssm(seed: u64, t: usize) -> Lgssm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m0 = Vector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng));
    let p0 = random_psd(&mut rng, 3, 0.2) + Matrix3::identity() * 0.01;
    let transitions: Vec<Transition> = (0..t.saturating_sub(1))
        .map(|_| {
            let a =
                Matrix3::from_fn(|i, j| 0.4 * normal(&mut rng) + if i == j { 0.6 } else { 0.0 });
            let offset = Vector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng)) * 0.5;
            let rank = rng.random_range(1..=3);
            Transition {
                a,
                offset,
                q: random_psd(&mut rng, rank, 0.05),
            }
        })
        .collect();
    let c = if rng.random_bool(0.5) {
        RowVector3::new(0.0, 0.0, 1.0)
    } else {
        RowVector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng))
    };
    let r: f64 = rng.random_range(0.05..1.0);
    let mut s = sample_gaussian(&mut rng, &m0, &p0);
    let mut obs = Vec::with_capacity(t);
    for k in 0..t {
        if k > 0 {
            let tr = &transitions[k - 1];
            s = sample_gaussian(&mut rng, &(tr.a * s + tr.offset), &tr.q);
        }
        let o = (c * s)[0] + r.sqrt() * normal(&mut rng);
        obs.push(if rng.random_bool(0.2) { None } else { Some(o) });
    }
    Lgssm {
        initial: DofBelief::new(m0, p0),
        transitions,
        c,
        r,
        obs,
    }
}

/// Joint Gaussian over all `3T` states.
pub struct Joint {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub fn joint(m: &Lgssm) -> Joint {
    let t = m.obs.len();
    let n = 3 * t;
    let mut mean = DVector::zeros(n);
    mean.fixed_rows_mut::<3>(0).copy_from(&m.initial.mean);
    for k in 1..t {
        let tr = &m.transitions[k - 1];
        let prev: Vector3<f64> = mean.fixed_rows::<3>(3 * (k - 1)).into();
        mean.fixed_rows_mut::<3>(3 * k)
            .copy_from(&(tr.a * prev + tr.offset));
    }
    // state k = sum_j Phi(k, j) xi_j with xi_0 the initial deviation and
    // xi_j (j >= 1) the noise entering at step j
    let mut map = DMatrix::zeros(n, n);
    for j in 0..t {
        let mut phi = Matrix3::identity();
        for k in j..t {
            if k > j {
                phi = m.transitions[k - 1].a * phi;
            }
            map.fixed_view_mut::<3, 3>(3 * k, 3 * j).copy_from(&phi);
        }
    }
    let mut noise = DMatrix::zeros(n, n);
    noise.fixed_view_mut::<3, 3>(0, 0).copy_from(&m.initial.cov);
    for j in 1..t {
        noise
            .fixed_view_mut::<3, 3>(3 * j, 3 * j)
            .copy_from(&m.transitions[j - 1].q);
    }
    let cov = &map * noise * map.transpose();
    Joint { mean, cov }
}

/// Posterior of the joint after observing the steps in `steps`.
pub struct Conditioned {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub loglik: f64,
}

pub fn condition(m: &Lgssm, j: &Joint, steps: &[usize]) -> Conditioned {
    let n = j.mean.len();
    if steps.is_empty() {
        return Conditioned {
            mean: j.mean.clone(),
            cov: j.cov.clone(),
            loglik: 0.0,
        };
    }
    let k = steps.len();
    let mut h = DMatrix::zeros(k, n);
    let mut o = DVector::zeros(k);
    for (row, &s) in steps.iter().enumerate() {
        for col in 0..3 {
            h[(row, 3 * s + col)] = m.c[col];
        }
        o[row] = m.obs[s].expect("observed step");
    }
    let s_oo = &h * &j.cov * h.transpose() + DMatrix::identity(k, k) * m.r;
    let s_xo = &j.cov * h.transpose();
    let chol = s_oo
        .clone()
        .cholesky()
        .expect("observation covariance is positive definite");
    let resid = o - &h * &j.mean;
    let alpha = chol.solve(&resid);
    let mean = &j.mean + &s_xo * &alpha;
    let cov = &j.cov - &s_xo * chol.solve(&s_xo.transpose());
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let loglik = -0.5 * (k as f64 * LN_2PI + log_det + resid.dot(&alpha));
    Conditioned { mean, cov, loglik }
}

pub fn observed_up_to(m: &Lgssm, t: usize) -> Vec<usize> {
    (0..=t).filter(|&s| m.obs[s].is_some()).collect()
}

pub fn block_mean(c: &Conditioned, t: usize) -> Vector3<f64> {
    c.mean.fixed_rows::<3>(3 * t).into()
}

pub fn block_cov(c: &Conditioned, row: usize, col: usize) -> Matrix3<f64> {
    c.cov.fixed_view::<3, 3>(3 * row, 3 * col).into()
}

/// Largest absolute deviation of the filter, smoother and log marginal from
/// the brute-force joint.
pub fn kalman_vs_joint(seed: u64, t: usize) -> f64 {
    use probdmp::kalman::{forward_pass, rts_smooth, CovarianceUpdate};
    let m = random_lgssm(seed, t);
    let j = joint(&m);
    let pass = forward_pass(
        &m.initial,
        &m.transitions,
        &m.c,
        m.r,
        &m.obs,
        CovarianceUpdate::Simple,
    );
    let smoothed = rts_smooth(&pass, &m.transitions);
    let mut worst: f64 = 0.0;
    let mut track = |a: f64| worst = worst.max(a);
    for k in 0..t {
        let f = condition(&m, &j, &observed_up_to(&m, k));
        track((pass.filtered[k].mean - block_mean(&f, k)).amax());
        track((pass.filtered[k].cov - block_cov(&f, k, k)).amax());
    }
    let all = condition(&m, &j, &observed_up_to(&m, t - 1));
    track((pass.loglik() - all.loglik).abs());
    for k in 0..t {
        track((smoothed.beliefs[k].mean - block_mean(&all, k)).amax());
        track((smoothed.beliefs[k].cov - block_cov(&all, k, k)).amax());
        if k + 1 < t {
            track((smoothed.cross[k] - block_cov(&all, k + 1, k)).amax());
        }
    }
    worst
}

use probdmp::dmp::{DmpHyperParams, PhaseIntegration};
use probdmp::lds::{default_q0, DiscretizationMode};
use probdmp::model::{DofModel, FitInfo, ForcingPosterior, Provenance};
use probdmp::PrimitiveModel;

/// A hand-built primitive with random weights over `n_steps` steps of `dt`,
/// moving every DOF from 0 to `goal`.
pub fn random_model(
    seed: u64,
    n_dofs: usize,
    mode: DiscretizationMode,
    dt: f64,
    n_steps: usize,
    goal: f64,
) -> PrimitiveModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = 8;
    let hyper = DmpHyperParams::critically_damped(25.0, 3.0, nb).unwrap();
    let duration = (n_steps - 1) as f64 * dt;
    let dofs = (0..n_dofs)
        .map(|_| {
            let mean_w = DVector::from_fn(nb, |_, _| 30.0 * normal(&mut rng));
            let g = DMatrix::from_fn(nb, nb, |_, _| normal(&mut rng));
            DofModel {
                posterior: ForcingPosterior {
                    mean_w,
                    cov_w: &g * g.transpose() * 0.5,
                    noise_var: 4.0,
                    prior_precision: 1e-6,
                },
                obs_noise: 1e-3,
            }
        })
        .collect();
    PrimitiveModel {
        label: format!("random-{seed}"),
        hyper,
        mode,
        phase: PhaseIntegration::Exact,
        fit: FitInfo {
            tau: 1.0 / duration,
            dt,
            duration,
            n_steps,
            start: vec![0.0; n_dofs],
            goal: vec![goal; n_dofs],
            delta_g: vec![goal; n_dofs],
        },
        dofs,
        q0: default_q0(),
        calibration: None,
        provenance: Provenance::default(),
    }
}

/// Zero forcing, no weight or forcing uncertainty.
pub fn deterministic_model(model: &PrimitiveModel) -> PrimitiveModel {
    let mut m = model.clone();
    for d in &mut m.dofs {
        d.posterior = ForcingPosterior::deterministic(DVector::zeros(m.hyper.n_basis()));
    }
    m.q0 = Matrix3::zeros();
    m
}

/// Draws one execution of `model` from its own LDS with observation noise
/// `r_true`: `(latent positions, observations)` per step and DOF.
pub fn sample_execution(
    model: &PrimitiveModel,
    task: &probdmp::TaskSpec,
    n_steps: usize,
    r_true: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![0.0; model.n_dofs()]; n_steps];
    for dof in 0..model.n_dofs() {
        let plan = model.plan(dof, task).unwrap();
        let init = plan.initial();
        let mut s = sample_gaussian(rng, &init.mean, &init.cov);
        for (t, row) in rows.iter_mut().enumerate() {
            if t > 0 {
                let tr = plan.transition(t - 1);
                s = sample_gaussian(rng, &(tr.a * s + tr.offset), &tr.q);
            }
            row[dof] = s[2] + r_true.sqrt() * normal(rng);
        }
    }
    rows
}
