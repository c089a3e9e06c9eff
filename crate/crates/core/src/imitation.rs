//! Learning a primitive from demonstrations: Bayesian linear regression of
//! the forcing term over the normalized RBF features, EM for the observation
//! noise, and threshold calibration.

use log::warn;
use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dmp::{
    basis_features, forcing_targets, phase_trajectory, DerivativeScheme, DmpHyperParams,
    Kinematics, PhaseIntegration, TaskParams, DEFAULT_ALPHA_X, DEFAULT_ALPHA_Z,
};
use crate::error::{DmpError, Result};
use crate::kalman::{forward_pass, rts_smooth, CovarianceUpdate};
use crate::lds::{default_q0, DiscretizationMode};
use crate::model::{DofModel, FitInfo, ForcingPosterior, PrimitiveModel, Provenance, TaskSpec};
use crate::monitor::{calibrate_threshold, MonitorConfig};
use crate::trajectory::Trajectory;

/// Smallest observation noise variance EM will return.
pub const R_FLOOR: f64 = 1e-12;

/// Demonstrations sharing one time step and length.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub demos: Vec<Trajectory>,
    pub dt: f64,
    pub aligned_length: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl DemoSet {
    /// Rescales every demonstration linearly in time to the median duration
    /// and resamples it at the median time step.
    pub fn align(demos: Vec<Trajectory>) -> Result<Self> {
        if demos.is_empty() {
            return Err(DmpError::arg("at least one demonstration is required"));
        }
        for d in &demos {
            d.validate()?;
        }
        let n_dofs = demos[0].n_dofs();
        if let Some(bad) = demos.iter().find(|d| d.n_dofs() != n_dofs) {
            return Err(DmpError::DimensionMismatch {
                expected: n_dofs,
                got: bad.n_dofs(),
            });
        }
        let duration = median(demos.iter().map(Trajectory::duration).collect());
        let dt = median(demos.iter().map(|d| d.dt).collect());
        let n = ((duration / dt).round() as usize + 1).max(3);
        let duration = (n - 1) as f64 * dt;
        let demos = demos
            .iter()
            .map(|d| d.resampled(duration, n))
            .collect::<Result<Vec<_>>>()?;
        Ok(DemoSet {
            demos,
            dt,
            aligned_length: n,
        })
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn n_dofs(&self) -> usize {
        self.demos[0].n_dofs()
    }

    pub fn duration(&self) -> f64 {
        (self.aligned_length - 1) as f64 * self.dt
    }
}

/// How the residual forcing noise `sigma_n^2` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseVarMode {
    Fixed {
        value: f64,
    },
    /// Type-II maximum likelihood, alternating with the posterior update.
    Evidence {
        max_iters: usize,
        tol: f64,
    },
}

impl Default for NoiseVarMode {
    fn default() -> Self {
        NoiseVarMode::Evidence {
            max_iters: 200,
            tol: 1e-9,
        }
    }
}

/// Bayesian linear regression `y = Phi w + e`, `w ~ N(0, I / prior_precision)`,
/// `e ~ N(0, sigma_n^2)`.
pub fn bayesian_regression(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    prior_precision: f64,
    mode: NoiseVarMode,
) -> Result<ForcingPosterior> {
    let (n, p) = phi.shape();
    if n == 0 || p == 0 || y.len() != n {
        return Err(DmpError::Fit(format!(
            "regression needs matching non-empty data, got {n}x{p} features and {} targets",
            y.len()
        )));
    }
    if !(prior_precision >= 0.0) || !prior_precision.is_finite() {
        return Err(DmpError::Fit(format!(
            "prior precision must be finite and >= 0, got {prior_precision}"
        )));
    }
    let gram = phi.transpose() * phi;
    let eig = SymmetricEigen::new(gram);
    let evals = eig.eigenvalues.map(|e| e.max(0.0));
    let top = evals.max();
    if prior_precision == 0.0
        && evals
            .iter()
            .any(|e| *e <= 1e-12 * top.max(f64::MIN_POSITIVE))
    {
        return Err(DmpError::Fit(
            "normal equations are singular; use a positive prior precision".into(),
        ));
    }
    let v = &eig.eigenvectors;
    let proj = v.transpose() * (phi.transpose() * y);

    let solve = |beta: f64| -> (DVector<f64>, DVector<f64>) {
        let inv = evals.map(|e| 1.0 / (prior_precision + beta * e));
        let mean = v * inv.component_mul(&proj) * beta;
        (mean, inv)
    };

    let y_power = y.norm_squared() / n as f64;
    let floor = 1e-12 * y_power.max(1.0);
    let noise_var = match mode {
        NoiseVarMode::Fixed { value } => {
            if !(value > 0.0) {
                return Err(DmpError::Fit(format!(
                    "fixed noise variance must be positive, got {value}"
                )));
            }
            value
        }
        NoiseVarMode::Evidence { max_iters, tol } => {
            let mut var = (0.1 * y_power).max(floor);
            for _ in 0..max_iters.max(1) {
                let beta = 1.0 / var;
                let (mean, _) = solve(beta);
                let gamma: f64 = evals
                    .iter()
                    .map(|e| beta * e / (prior_precision + beta * e))
                    .sum();
                let resid = (y - phi * &mean).norm_squared();
                let dof = (n as f64 - gamma).max(1.0);
                let next = (resid / dof).max(floor);
                let change = (next - var).abs() / var;
                var = next;
                if change < tol {
                    break;
                }
            }
            var
        }
    };
    let (mean, inv) = solve(1.0 / noise_var);
    let cov = v * DMatrix::from_diagonal(&inv) * v.transpose();
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(ForcingPosterior {
        mean_w: mean,
        cov_w: cov,
        noise_var,
        prior_precision,
    })
}

/// Endpoint task of one demonstration for one DOF.
fn demo_params(demo: &Trajectory, dof: usize, tau: f64, delta_g: f64) -> TaskParams {
    let ends = demo.endpoints();
    TaskParams {
        start: ends.start[dof],
        goal: ends.goal[dof],
        tau,
        dt: demo.dt,
        delta_g_fit: delta_g,
    }
}

/// Timing and differentiation choices shared by every DOF of a fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionSetup {
    pub tau: f64,
    pub scheme: DerivativeScheme,
    pub phase: PhaseIntegration,
}

/// Pooled design matrix and targets of one DOF. A demonstration with
/// amplitude ratio `s_k` contributes rows `s_k phi(x_t)` against its raw
/// forcing targets.
pub fn regression_data(
    demos: &DemoSet,
    dof: usize,
    hp: &DmpHyperParams,
    delta_g: f64,
    setup: RegressionSetup,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let RegressionSetup { tau, scheme, phase } = setup;
    let nb = hp.n_basis();
    let mut rows: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for demo in &demos.demos {
        let tp = demo_params(demo, dof, tau, delta_g);
        let kin = match (&demo.velocities, &demo.accelerations) {
            (Some(v), Some(a)) => Kinematics {
                pos: demo.dof(dof),
                vel: v.iter().map(|r| r[dof]).collect(),
                acc: a.iter().map(|r| r[dof]).collect(),
            },
            _ => Kinematics::from_positions(&demo.dof(dof), demo.dt, scheme)?,
        };
        let targets = forcing_targets(&kin, hp, &tp)?;
        let s = (tp.goal - tp.start) / delta_g;
        let xs = phase_trajectory(hp, &tp, targets.len(), phase)?;
        for (&x, f) in xs.values().iter().zip(&targets) {
            rows.extend(basis_features(x, hp).iter().map(|v| v * s));
            ys.push(*f);
        }
    }
    let n = ys.len();
    Ok((DMatrix::from_row_slice(n, nb, &rows), DVector::from_vec(ys)))
}

pub fn fit_forcing_posterior(
    demos: &DemoSet,
    dof: usize,
    hp: &DmpHyperParams,
    delta_g: f64,
    setup: RegressionSetup,
    prior_precision: f64,
    mode: NoiseVarMode,
) -> Result<ForcingPosterior> {
    let (phi, y) = regression_data(demos, dof, hp, delta_g, setup)?;
    bayesian_regression(&phi, &y, prior_precision, mode)
}

/// Result of the EM estimation of the observation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct EmOutcome {
    pub r: Vec<f64>,
    /// Marginal log-likelihood of all demonstrations before each M-step.
    pub loglik_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Sufficient statistics of one DOF of one demonstration.
struct EStep {
    loglik: f64,
    sq_resid: f64,
    count: usize,
}

fn e_step(
    model: &PrimitiveModel,
    demo: &Trajectory,
    task: &TaskSpec,
    dof: usize,
    r: f64,
) -> Result<EStep> {
    let plan = model.plan(dof, task)?;
    let transitions = plan.transitions(demo.len());
    let obs: Vec<Option<f64>> = demo.dof(dof).into_iter().map(Some).collect();
    let pass = forward_pass(
        &plan.initial(),
        &transitions,
        &plan.matrices.c,
        r,
        &obs,
        CovarianceUpdate::Simple,
    );
    let smoothed = rts_smooth(&pass, &transitions);
    let c = plan.matrices.c;
    let mut sq = 0.0;
    for (b, o) in smoothed.beliefs.iter().zip(&obs) {
        let o = o.expect("fully observed");
        let resid = o - (c * b.mean)[0];
        sq += resid * resid + (c * b.cov * c.transpose())[0];
    }
    Ok(EStep {
        loglik: pass.loglik(),
        sq_resid: sq,
        count: obs.len(),
    })
}

/// Estimates `R` per DOF by EM with the smoother as E-step. The model's
/// current `R` values are the starting point and every demonstration is
/// conditioned on its own end points.
pub fn em_fit_observation_noise(
    model: &PrimitiveModel,
    demos: &DemoSet,
    n_iters: usize,
    tol: f64,
) -> Result<EmOutcome> {
    let tasks: Vec<TaskSpec> = demos.demos.iter().map(|d| demo_task(model, d)).collect();
    em_fit_observation_noise_with_tasks(model, demos, &tasks, n_iters, tol)
}

/// EM as in [`em_fit_observation_noise`] with known start and goal per
/// demonstration, for data whose end points are themselves noisy.
pub fn em_fit_observation_noise_with_tasks(
    model: &PrimitiveModel,
    demos: &DemoSet,
    tasks: &[TaskSpec],
    n_iters: usize,
    tol: f64,
) -> Result<EmOutcome> {
    if demos.is_empty() {
        return Err(DmpError::arg("EM needs at least one demonstration"));
    }
    if tasks.len() != demos.len() {
        return Err(DmpError::arg(format!(
            "{} tasks for {} demonstrations",
            tasks.len(),
            demos.len()
        )));
    }
    if demos.n_dofs() != model.n_dofs() {
        return Err(DmpError::DimensionMismatch {
            expected: model.n_dofs(),
            got: demos.n_dofs(),
        });
    }
    let mut model = model.clone();
    let mut trace = Vec::new();
    let mut warnings = Vec::new();
    for iter in 0..n_iters.max(1) {
        let mut total = 0.0;
        let mut updates = Vec::with_capacity(model.n_dofs());
        for dof in 0..model.n_dofs() {
            let r = model.dofs[dof].obs_noise;
            let stats = demos
                .demos
                .par_iter()
                .zip(tasks)
                .map(|(d, task)| e_step(&model, d, task, dof, r))
                .collect::<Result<Vec<_>>>()?;
            total += stats.iter().map(|s| s.loglik).sum::<f64>();
            let sq: f64 = stats.iter().map(|s| s.sq_resid).sum();
            let count: usize = stats.iter().map(|s| s.count).sum();
            let mut next = sq / count as f64;
            if !(next >= R_FLOOR) {
                if next < 0.0 || !next.is_finite() {
                    let msg = format!(
                        "EM iteration {iter}, DOF {dof}: R update {next} floored to {R_FLOOR}"
                    );
                    warn!("{msg}");
                    warnings.push(msg);
                }
                next = R_FLOOR;
            }
            updates.push(next);
        }
        let converged = trace.last().is_some_and(|prev: &f64| total - prev < tol);
        trace.push(total);
        if converged {
            break;
        }
        for (dof, r) in updates.into_iter().enumerate() {
            model.dofs[dof].obs_noise = r;
        }
    }
    Ok(EmOutcome {
        r: model.dofs.iter().map(|d| d.obs_noise).collect(),
        loglik_trace: trace,
        warnings,
    })
}

/// Everything that controls [`learn_primitive`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    pub n_basis: usize,
    pub alpha_z: f64,
    pub alpha_x: f64,
    pub prior_precision: f64,
    pub noise_var: NoiseVarMode,
    pub discretization: DiscretizationMode,
    pub phase_integration: PhaseIntegration,
    pub derivatives: DerivativeScheme,
    pub em_iters: usize,
    pub em_tol: f64,
    /// Diagonal of the initial-state covariance over `(acc, vel, pos)`.
    pub q0_diag: [f64; 3],
    /// Starting `R`; `None` uses the mean squared deviation of the
    /// demonstrations from the mean rollout.
    pub r_init: Option<f64>,
    pub monitor: MonitorConfig,
}

impl Default for LearnConfig {
    fn default() -> Self {
        let q0 = default_q0();
        LearnConfig {
            n_basis: 30,
            alpha_z: DEFAULT_ALPHA_Z,
            alpha_x: DEFAULT_ALPHA_X,
            prior_precision: 1e-10,
            noise_var: NoiseVarMode::default(),
            discretization: DiscretizationMode::default(),
            phase_integration: PhaseIntegration::default(),
            derivatives: DerivativeScheme::default(),
            em_iters: 100,
            em_tol: 1e-6,
            q0_diag: [q0[(0, 0)], q0[(1, 1)], q0[(2, 2)]],
            r_init: None,
            monitor: MonitorConfig::default(),
        }
    }
}

/// Diagnostics produced alongside a learned model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub n_demos: usize,
    pub n_steps: usize,
    /// RMSE of the mean rollout against the demonstrations, per DOF.
    pub fit_rmse: Vec<f64>,
    pub noise_var: Vec<f64>,
    pub r: Vec<f64>,
    pub em_loglik_trace: Vec<f64>,
    pub em_warnings: Vec<String>,
    pub train_loglik_min: f64,
    pub threshold: f64,
}

fn mean_rollout_sq_resid(model: &PrimitiveModel, demos: &DemoSet) -> Result<Vec<(f64, usize)>> {
    let mut acc = vec![(0.0, 0usize); model.n_dofs()];
    for demo in &demos.demos {
        let ends = demo.endpoints();
        let task = model.task(ends.start, ends.goal);
        let roll = crate::kalman::rollout(model, &task, demo.len())?;
        for (b, row) in roll.iter().zip(&demo.samples) {
            for (d, slot) in acc.iter_mut().enumerate() {
                let e = row[d] - b.dofs[d].mean[2];
                slot.0 += e * e;
                slot.1 += 1;
            }
        }
    }
    Ok(acc)
}

/// Full pipeline: align, regress the forcing term per DOF, estimate `R` by
/// EM and calibrate the failure threshold on the training demonstrations.
pub fn learn_primitive(
    demos: Vec<Trajectory>,
    label: &str,
    config: &LearnConfig,
) -> Result<(PrimitiveModel, TrainingReport)> {
    let demos = DemoSet::align(demos).map_err(|e| e.in_stage("align"))?;
    let hp = DmpHyperParams::critically_damped(config.alpha_z, config.alpha_x, config.n_basis)
        .map_err(|e| e.in_stage("hyper-parameters"))?;
    let n_dofs = demos.n_dofs();
    let duration = demos.duration();
    let tau = 1.0 / duration;

    let mut start = vec![0.0; n_dofs];
    let mut goal = vec![0.0; n_dofs];
    for demo in &demos.demos {
        let ends = demo.endpoints();
        for d in 0..n_dofs {
            start[d] += ends.start[d] / demos.len() as f64;
            goal[d] += ends.goal[d] / demos.len() as f64;
        }
    }
    let delta_g: Vec<f64> = start.iter().zip(&goal).map(|(s, g)| g - s).collect();
    if let Some(d) = delta_g.iter().position(|g| g.abs() < 1e-9) {
        return Err(DmpError::Fit(format!(
            "DOF {d} has no net displacement (goal == start); amplitude scaling is undefined"
        ))
        .in_stage("forcing regression"));
    }

    let setup = RegressionSetup {
        tau,
        scheme: config.derivatives,
        phase: config.phase_integration,
    };
    let posteriors = (0..n_dofs)
        .map(|d| {
            fit_forcing_posterior(
                &demos,
                d,
                &hp,
                delta_g[d],
                setup,
                config.prior_precision,
                config.noise_var,
            )
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("forcing regression"))?;

    let q0d = config.q0_diag;
    let mut model = PrimitiveModel {
        label: label.to_string(),
        hyper: hp,
        mode: config.discretization,
        phase: config.phase_integration,
        fit: FitInfo {
            tau,
            dt: demos.dt,
            duration,
            n_steps: demos.aligned_length,
            start,
            goal,
            delta_g,
        },
        dofs: posteriors
            .into_iter()
            .map(|posterior| DofModel {
                posterior,
                obs_noise: 1.0,
            })
            .collect(),
        q0: Matrix3::from_diagonal(&Vector3::new(q0d[0], q0d[1], q0d[2])),
        calibration: None,
        provenance: Provenance::default(),
    };

    let resid = mean_rollout_sq_resid(&model, &demos).map_err(|e| e.in_stage("rollout"))?;
    for (dof, (sq, n)) in model.dofs.iter_mut().zip(&resid) {
        dof.obs_noise = config.r_init.unwrap_or((sq / *n as f64).max(1e-8));
    }
    let fit_rmse: Vec<f64> = resid
        .iter()
        .map(|(sq, n)| (sq / *n as f64).sqrt())
        .collect();

    let em = em_fit_observation_noise(&model, &demos, config.em_iters, config.em_tol)
        .map_err(|e| e.in_stage("EM"))?;
    for (dof, r) in model.dofs.iter_mut().zip(&em.r) {
        dof.obs_noise = *r;
    }

    let calibration = calibrate_threshold(&model, &demos, &config.monitor)
        .map_err(|e| e.in_stage("calibration"))?;
    let report = TrainingReport {
        n_demos: demos.len(),
        n_steps: demos.aligned_length,
        fit_rmse,
        noise_var: model.dofs.iter().map(|d| d.posterior.noise_var).collect(),
        r: em.r.clone(),
        em_loglik_trace: em.loglik_trace,
        em_warnings: em.warnings,
        train_loglik_min: calibration.train_loglik_min,
        threshold: calibration.threshold,
    };
    model.calibration = Some(calibration);
    Ok((model, report))
}

/// Task of a demonstration under a learned model: its own endpoints at fit speed.
pub fn demo_task(model: &PrimitiveModel, demo: &Trajectory) -> TaskSpec {
    let ends = demo.endpoints();
    model.task(ends.start, ends.goal)
}
