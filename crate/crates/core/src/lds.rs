//! The discretized transformation system as a controlled linear dynamical
//! system `s_t = A s_{t-1} + B u_{t-1} + eps_t`, observed through `o_t = C s_t + v`.

use nalgebra::{Matrix3, RowVector3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dmp::{scaling_factor, DmpHyperParams, TaskParams};
use crate::error::{DmpError, Result};

/// Which one-step update the matrices realize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscretizationMode {
    /// Velocity and position are advanced with the previous step's
    /// acceleration and velocity; `B = (1, 0, 0)`.
    PrintedA,
    /// Velocity and position are advanced with the freshly computed
    /// acceleration and velocity (semi-implicit Euler); `B = (1, dt, dt^2)`.
    #[default]
    SubstitutedEuler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdsMatrices {
    pub a: Matrix3<f64>,
    pub b: Vector3<f64>,
    pub c: RowVector3<f64>,
    pub mode: DiscretizationMode,
}

/// Observation row selecting position from `(acc, vel, pos)`.
pub fn position_row() -> RowVector3<f64> {
    RowVector3::new(0.0, 0.0, 1.0)
}

pub fn build_matrices(
    hp: &DmpHyperParams,
    tp: &TaskParams,
    mode: DiscretizationMode,
) -> LdsMatrices {
    let (az, bz, tau, dt) = (hp.alpha_z, hp.beta_z, tp.tau, tp.dt);
    let r0 = RowVector3::new(0.0, -az * tau, -az * bz * tau * tau);
    let (a, b) = match mode {
        DiscretizationMode::PrintedA => (
            Matrix3::from_rows(&[
                r0,
                RowVector3::new(dt, 1.0, 0.0),
                RowVector3::new(0.0, dt, 1.0),
            ]),
            Vector3::new(1.0, 0.0, 0.0),
        ),
        DiscretizationMode::SubstitutedEuler => {
            // row1 = e_vel + dt * row0, row2 = e_pos + dt * row1
            let r1 = RowVector3::new(0.0, 1.0, 0.0) + r0 * dt;
            let r2 = RowVector3::new(0.0, dt, 1.0) + r0 * (dt * dt);
            (
                Matrix3::from_rows(&[r0, r1, r2]),
                Vector3::new(1.0, dt, dt * dt),
            )
        }
    };
    LdsMatrices {
        a,
        b,
        c: position_row(),
        mode,
    }
}

impl LdsMatrices {
    pub fn spectral_radius(&self) -> f64 {
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }
}

/// `u_t = tau^2 (alpha_z beta_z g + s mu_f)`; the `tau^2` factor lets `B u_t`
/// carry the acceleration update of the transformation system.
pub fn control_input(hp: &DmpHyperParams, tp: &TaskParams, mu_f: f64) -> Result<f64> {
    let s = scaling_factor(tp)?;
    Ok(tp.tau * tp.tau * (hp.alpha_z * hp.beta_z * tp.goal + s * mu_f))
}

/// `Q_t = (s tau^2)^2 sigma2_f B B^T`, rank one.
pub fn process_noise_at(tp: &TaskParams, b: &Vector3<f64>, sigma2_f: f64) -> Result<Matrix3<f64>> {
    if !(sigma2_f >= 0.0) {
        return Err(DmpError::arg(format!(
            "forcing variance must be non-negative, got {sigma2_f}"
        )));
    }
    let s = scaling_factor(tp)?;
    let gain = s * tp.tau * tp.tau;
    Ok(b * b.transpose() * (gain * gain * sigma2_f))
}

/// Initial-state covariance used when none is supplied.
pub fn default_q0() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1e-4, 1e-4, 1e-8))
}

/// Rest at the start position.
pub fn initial_mean(tp: &TaskParams) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, tp.start)
}
