//! The learned primitive and its JSON document.

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::dmp::{basis_features, scaling_factor, DmpHyperParams, PhaseIntegration, TaskParams};
use crate::error::{DmpError, Result};
use crate::kalman::{DofBelief, Transition};
use crate::lds::{
    build_matrices, control_input, initial_mean, process_noise_at, DiscretizationMode, LdsMatrices,
};
use crate::monitor::MonitorConfig;

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const MODEL_KIND: &str = "probdmp.primitive";

/// Gaussian posterior over the forcing weights plus the residual forcing noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingPosterior {
    pub mean_w: DVector<f64>,
    pub cov_w: DMatrix<f64>,
    pub noise_var: f64,
    pub prior_precision: f64,
}

impl ForcingPosterior {
    /// Point-mass posterior: the forcing term is exactly `features . w`.
    pub fn deterministic(mean_w: DVector<f64>) -> Self {
        let n = mean_w.len();
        ForcingPosterior {
            mean_w,
            cov_w: DMatrix::zeros(n, n),
            noise_var: 0.0,
            prior_precision: f64::INFINITY,
        }
    }

    pub fn n_basis(&self) -> usize {
        self.mean_w.len()
    }
}

/// Predictive distribution `(mean, variance)` of the forcing term at phase `x`.
pub fn predictive_forcing(posterior: &ForcingPosterior, hp: &DmpHyperParams, x: f64) -> (f64, f64) {
    let phi = basis_features(x, hp);
    let mean = phi.dot(&posterior.mean_w);
    let var = (&posterior.cov_w * &phi).dot(&phi).max(0.0) + posterior.noise_var;
    (mean, var)
}

/// Fit-time timing and amplitude information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub tau: f64,
    pub dt: f64,
    pub duration: f64,
    pub n_steps: usize,
    /// Mean start over the demonstrations, per DOF.
    pub start: Vec<f64>,
    /// Mean goal over the demonstrations, per DOF.
    pub goal: Vec<f64>,
    /// Stored `goal - start` used by the amplitude scaling, per DOF.
    pub delta_g: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DofModel {
    pub posterior: ForcingPosterior,
    /// Observation noise variance `R` of the position channel.
    pub obs_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub train_loglik_min: f64,
    pub threshold: f64,
    pub config: MonitorConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveModel {
    pub label: String,
    pub hyper: DmpHyperParams,
    pub mode: DiscretizationMode,
    pub phase: PhaseIntegration,
    pub fit: FitInfo,
    pub dofs: Vec<DofModel>,
    pub q0: Matrix3<f64>,
    pub calibration: Option<Calibration>,
    pub provenance: Provenance,
}

/// Start, goal and timing of one execution of a multi-DOF primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    pub tau: f64,
    pub dt: f64,
}

impl PrimitiveModel {
    pub fn n_dofs(&self) -> usize {
        self.dofs.len()
    }

    /// Fit speed and step with the given endpoints.
    pub fn task(&self, start: Vec<f64>, goal: Vec<f64>) -> TaskSpec {
        TaskSpec {
            start,
            goal,
            tau: self.fit.tau,
            dt: self.fit.dt,
        }
    }

    /// The mean fitted endpoints at fit speed.
    pub fn default_task(&self) -> TaskSpec {
        self.task(self.fit.start.clone(), self.fit.goal.clone())
    }

    pub fn check_task(&self, task: &TaskSpec) -> Result<()> {
        let d = self.n_dofs();
        if task.start.len() != d {
            return Err(DmpError::DimensionMismatch {
                expected: d,
                got: task.start.len(),
            });
        }
        if task.goal.len() != d {
            return Err(DmpError::DimensionMismatch {
                expected: d,
                got: task.goal.len(),
            });
        }
        Ok(())
    }

    pub fn dof_params(&self, dof: usize, task: &TaskSpec) -> TaskParams {
        TaskParams {
            start: task.start[dof],
            goal: task.goal[dof],
            tau: task.tau,
            dt: task.dt,
            delta_g_fit: self.fit.delta_g[dof],
        }
    }

    pub fn phase_at(&self, task: &TaskSpec, step: usize) -> f64 {
        let rate = self.hyper.alpha_x * task.tau * task.dt;
        match self.phase {
            PhaseIntegration::Exact => (-rate * step as f64).exp(),
            PhaseIntegration::Euler => (1.0 - rate).powi(step as i32),
        }
    }

    pub fn plan(&self, dof: usize, task: &TaskSpec) -> Result<DofPlan<'_>> {
        self.check_task(task)?;
        let tp = self.dof_params(dof, task);
        tp.validate()?;
        let scale = scaling_factor(&tp)?;
        Ok(DofPlan {
            model: self,
            dof,
            task: task.clone(),
            tp,
            scale,
            matrices: build_matrices(&self.hyper, &tp, self.mode),
        })
    }

    pub fn plans(&self, task: &TaskSpec) -> Result<Vec<DofPlan<'_>>> {
        (0..self.n_dofs()).map(|d| self.plan(d, task)).collect()
    }

    pub fn threshold(&self) -> Option<f64> {
        self.calibration.as_ref().map(|c| c.threshold)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        let nb = self.hyper.n_basis();
        if self.dofs.is_empty() {
            return Err(DmpError::InvalidModel(
                "model has no degrees of freedom".into(),
            ));
        }
        let d = self.n_dofs();
        if self.fit.start.len() != d || self.fit.goal.len() != d || self.fit.delta_g.len() != d {
            return Err(DmpError::InvalidModel(
                "fit endpoints do not match the DOF count".into(),
            ));
        }
        if let Some(g) = self
            .fit
            .delta_g
            .iter()
            .find(|g| **g == 0.0 || !g.is_finite())
        {
            return Err(DmpError::InvalidModel(format!(
                "delta_g must be non-zero, got {g}"
            )));
        }
        for (i, dof) in self.dofs.iter().enumerate() {
            let p = &dof.posterior;
            if p.mean_w.len() != nb || p.cov_w.nrows() != nb || p.cov_w.ncols() != nb {
                return Err(DmpError::InvalidModel(format!(
                    "DOF {i}: posterior size does not match {nb} basis functions"
                )));
            }
            if !(p.noise_var >= 0.0) || !(dof.obs_noise > 0.0) {
                return Err(DmpError::InvalidModel(format!(
                    "DOF {i}: noise variances must be positive"
                )));
            }
        }
        if let Some(c) = &self.calibration {
            if !c.train_loglik_min.is_finite() || !c.threshold.is_finite() {
                return Err(DmpError::InvalidModel(
                    "calibration values must be finite".into(),
                ));
            }
        }
        Ok(())
    }
}

/// The LDS realization of one DOF for one task.
#[derive(Debug, Clone)]
pub struct DofPlan<'a> {
    pub model: &'a PrimitiveModel,
    pub dof: usize,
    pub task: TaskSpec,
    pub tp: TaskParams,
    pub scale: f64,
    pub matrices: LdsMatrices,
}

impl DofPlan<'_> {
    pub fn initial(&self) -> DofBelief {
        DofBelief::new(initial_mean(&self.tp), self.model.q0)
    }

    pub fn obs_noise(&self) -> f64 {
        self.model.dofs[self.dof].obs_noise
    }

    /// Mean and variance of the forcing used to leave step `step`.
    pub fn forcing(&self, step: usize) -> (f64, f64) {
        let x = self.model.phase_at(&self.task, step);
        predictive_forcing(&self.model.dofs[self.dof].posterior, &self.model.hyper, x)
    }

    /// Transition from step `step` to `step + 1`.
    pub fn transition(&self, step: usize) -> Transition {
        let (mu, var) = self.forcing(step);
        let hp = &self.model.hyper;
        // delta_g was validated when the plan was built
        let u = control_input(hp, &self.tp, mu).expect("validated scaling");
        let q = process_noise_at(&self.tp, &self.matrices.b, var).expect("validated variance");
        Transition::from_lds(&self.matrices, u, q)
    }

    pub fn transitions(&self, n_steps: usize) -> Vec<Transition> {
        (0..n_steps.saturating_sub(1))
            .map(|t| self.transition(t))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// JSON document

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DofDocument {
    pub mean_w: Vec<f64>,
    /// Row-major `n_basis x n_basis`.
    pub cov_w: Vec<f64>,
    pub noise_var: f64,
    pub prior_precision: Option<f64>,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub kind: String,
    pub label: String,
    pub hyper: DmpHyperParams,
    pub discretization: DiscretizationMode,
    pub phase_integration: PhaseIntegration,
    pub fit: FitInfo,
    /// Row-major 3x3 initial-state covariance.
    pub q0: Vec<f64>,
    pub dofs: Vec<DofDocument>,
    pub train_loglik_min: Option<f64>,
    pub monitor: Option<MonitorDocument>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorDocument {
    pub threshold: f64,
    #[serde(flatten)]
    pub config: MonitorConfig,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl From<&PrimitiveModel> for ModelDocument {
    fn from(m: &PrimitiveModel) -> Self {
        let q0 = DMatrix::from_column_slice(3, 3, m.q0.as_slice());
        ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            kind: MODEL_KIND.into(),
            label: m.label.clone(),
            hyper: m.hyper.clone(),
            discretization: m.mode,
            phase_integration: m.phase,
            fit: m.fit.clone(),
            q0: row_major(&q0),
            dofs: m
                .dofs
                .iter()
                .map(|d| DofDocument {
                    mean_w: d.posterior.mean_w.as_slice().to_vec(),
                    cov_w: row_major(&d.posterior.cov_w),
                    noise_var: d.posterior.noise_var,
                    prior_precision: d
                        .posterior
                        .prior_precision
                        .is_finite()
                        .then_some(d.posterior.prior_precision),
                    r: d.obs_noise,
                })
                .collect(),
            train_loglik_min: m.calibration.as_ref().map(|c| c.train_loglik_min),
            monitor: m.calibration.as_ref().map(|c| MonitorDocument {
                threshold: c.threshold,
                config: c.config.clone(),
            }),
            provenance: m.provenance.clone(),
        }
    }
}

impl TryFrom<ModelDocument> for PrimitiveModel {
    type Error = DmpError;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(DmpError::InvalidModel(format!(
                "unsupported model format version {}",
                doc.format_version
            )));
        }
        if doc.q0.len() != 9 {
            return Err(DmpError::InvalidModel("q0 must hold 9 values".into()));
        }
        let nb = doc.hyper.n_basis();
        let dofs = doc
            .dofs
            .into_iter()
            .enumerate()
            .map(|(i, d)| {
                if d.mean_w.len() != nb || d.cov_w.len() != nb * nb {
                    return Err(DmpError::InvalidModel(format!(
                        "DOF {i}: expected {nb} weights and {} covariance entries",
                        nb * nb
                    )));
                }
                Ok(DofModel {
                    posterior: ForcingPosterior {
                        mean_w: DVector::from_vec(d.mean_w),
                        cov_w: DMatrix::from_row_slice(nb, nb, &d.cov_w),
                        noise_var: d.noise_var,
                        prior_precision: d.prior_precision.unwrap_or(f64::INFINITY),
                    },
                    obs_noise: d.r,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let calibration = match (doc.train_loglik_min, doc.monitor) {
            (Some(min), Some(mon)) => Some(Calibration {
                train_loglik_min: min,
                threshold: mon.threshold,
                config: mon.config,
            }),
            (None, None) => None,
            _ => {
                return Err(DmpError::InvalidModel(
                    "train_loglik_min and monitor must be present together".into(),
                ))
            }
        };
        let model = PrimitiveModel {
            label: doc.label,
            hyper: doc.hyper,
            mode: doc.discretization,
            phase: doc.phase_integration,
            fit: doc.fit,
            dofs,
            q0: Matrix3::from_row_slice(&doc.q0),
            calibration,
            provenance: doc.provenance,
        };
        model.validate()?;
        Ok(model)
    }
}

impl PrimitiveModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument::from(self))? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        PrimitiveModel::try_from(doc)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| DmpError::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()?).map_err(|e| DmpError::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DmpError::io(path, e))?;
        Self::from_json(&text)
    }
}
