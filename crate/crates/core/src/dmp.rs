//! Deterministic DMP machinery: the canonical phase system, the normalized
//! RBF basis, amplitude scaling and forcing-target extraction.
//!
//! Conventions: `tau` multiplies every time derivative (the transformation
//! system reads `(1/tau) z' = alpha_z (beta_z (g - p) - z) + s f(x)`), so it
//! acts as a playback speed. The hidden state per degree of freedom is
//! ordered `(acceleration, velocity, position)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{DmpError, Result};
use crate::lds::DiscretizationMode;

pub const DEFAULT_ALPHA_Z: f64 = 25.0;
pub const DEFAULT_ALPHA_X: f64 = 3.0;

/// Gains and basis layout shared by every degree of freedom of a primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmpHyperParams {
    pub alpha_z: f64,
    pub beta_z: f64,
    pub alpha_x: f64,
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
}

impl DmpHyperParams {
    pub fn new(
        alpha_z: f64,
        beta_z: f64,
        alpha_x: f64,
        centers: Vec<f64>,
        widths: Vec<f64>,
    ) -> Result<Self> {
        let hp = DmpHyperParams {
            alpha_z,
            beta_z,
            alpha_x,
            centers,
            widths,
        };
        hp.validate()?;
        Ok(hp)
    }

    /// Critically damped gains (`beta_z = alpha_z / 4`) with `n_basis`
    /// centers spread uniformly in time over the unit-duration phase range.
    pub fn with_default_basis(n_basis: usize) -> Result<Self> {
        Self::critically_damped(DEFAULT_ALPHA_Z, DEFAULT_ALPHA_X, n_basis)
    }

    pub fn critically_damped(alpha_z: f64, alpha_x: f64, n_basis: usize) -> Result<Self> {
        if n_basis == 0 {
            return Err(DmpError::arg("n_basis must be at least 1"));
        }
        let (centers, widths) = default_basis_layout(alpha_x, n_basis);
        Self::new(alpha_z, alpha_z / 4.0, alpha_x, centers, widths)
    }

    pub fn n_basis(&self) -> usize {
        self.centers.len()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.alpha_z) || !positive(self.beta_z) || !positive(self.alpha_x) {
            return Err(DmpError::InvalidModel(format!(
                "gains must be positive (alpha_z={}, beta_z={}, alpha_x={})",
                self.alpha_z, self.beta_z, self.alpha_x
            )));
        }
        if self.centers.is_empty() {
            return Err(DmpError::InvalidModel("n_basis must be at least 1".into()));
        }
        if self.centers.len() != self.widths.len() {
            return Err(DmpError::InvalidModel(format!(
                "{} centers but {} widths",
                self.centers.len(),
                self.widths.len()
            )));
        }
        if let Some(c) = self.centers.iter().find(|c| !(**c > 0.0 && **c <= 1.0)) {
            return Err(DmpError::InvalidModel(format!("center {c} outside (0, 1]")));
        }
        if let Some(h) = self.widths.iter().find(|h| !positive(**h)) {
            return Err(DmpError::InvalidModel(format!("width {h} is not positive")));
        }
        Ok(())
    }
}

/// Centers at `exp(-alpha_x * t_i)` for uniform `t_i` in `[0, 1]`; each width
/// makes a kernel intersect its right neighbour.
pub fn default_basis_layout(alpha_x: f64, n_basis: usize) -> (Vec<f64>, Vec<f64>) {
    if n_basis == 1 {
        return (vec![(-0.5 * alpha_x).exp()], vec![1.0]);
    }
    let centers: Vec<f64> = (0..n_basis)
        .map(|i| (-alpha_x * i as f64 / (n_basis - 1) as f64).exp())
        .collect();
    let mut widths: Vec<f64> = centers
        .windows(2)
        .map(|w| 1.0 / (w[1] - w[0]).powi(2))
        .collect();
    widths.push(*widths.last().unwrap());
    (centers, widths)
}

/// Start, goal and timing for one degree of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    pub start: f64,
    pub goal: f64,
    pub tau: f64,
    pub dt: f64,
    /// `goal - start` of the demonstrations the forcing term was fitted on.
    pub delta_g_fit: f64,
}

impl TaskParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(DmpError::arg(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DmpError::arg(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !self.start.is_finite() || !self.goal.is_finite() {
            return Err(DmpError::arg("start and goal must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseIntegration {
    /// `x_t = exp(-alpha_x tau t dt)`.
    #[default]
    Exact,
    /// Explicit Euler on `(1/tau) x' = -alpha_x x`.
    Euler,
}

/// Phase values `x_t`, one per time step, starting at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrajectory(Vec<f64>);

impl PhaseTrajectory {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for PhaseTrajectory {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn phase_trajectory(
    hp: &DmpHyperParams,
    tp: &TaskParams,
    n_steps: usize,
    integration: PhaseIntegration,
) -> Result<PhaseTrajectory> {
    if n_steps == 0 {
        return Err(DmpError::arg("n_steps must be at least 1"));
    }
    tp.validate()?;
    let rate = hp.alpha_x * tp.tau * tp.dt;
    let values = match integration {
        PhaseIntegration::Exact => (0..n_steps).map(|t| (-rate * t as f64).exp()).collect(),
        PhaseIntegration::Euler => {
            if rate >= 1.0 {
                return Err(DmpError::arg(format!(
                    "Euler phase integration needs alpha_x*tau*dt < 1, got {rate}"
                )));
            }
            let mut x = 1.0;
            (0..n_steps)
                .map(|t| {
                    if t > 0 {
                        x *= 1.0 - rate;
                    }
                    x
                })
                .collect()
        }
    };
    Ok(PhaseTrajectory(values))
}

/// Normalized, phase-gated RBF activations: component `i` is
/// `psi_i(x) x / sum_j psi_j(x)`, so `f(x) = features . w`.
///
/// Kernels are evaluated relative to the largest log-activation, so the
/// normalizer is at least one and never underflows.
pub fn basis_features(x: f64, hp: &DmpHyperParams) -> DVector<f64> {
    let log_psi: Vec<f64> = hp
        .centers
        .iter()
        .zip(&hp.widths)
        .map(|(c, h)| -h * (x - c).powi(2))
        .collect();
    let peak = log_psi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let psi: Vec<f64> = log_psi.iter().map(|l| (l - peak).exp()).collect();
    let norm: f64 = psi.iter().sum();
    DVector::from_iterator(psi.len(), psi.iter().map(|p| p * x / norm))
}

/// Amplitude scaling `s = (goal - start) / delta_g_fit`.
pub fn scaling_factor(tp: &TaskParams) -> Result<f64> {
    if tp.delta_g_fit == 0.0 || !tp.delta_g_fit.is_finite() {
        return Err(DmpError::InvalidModel(format!(
            "delta_g_fit must be finite and non-zero, got {}",
            tp.delta_g_fit
        )));
    }
    Ok((tp.goal - tp.start) / tp.delta_g_fit)
}

/// How velocities and accelerations are recovered from sampled positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeScheme {
    /// Backward differences from a rest state. Matches the Euler update
    /// exactly, so a rollout driven by the extracted targets reproduces the
    /// sampled positions.
    #[default]
    Backward,
    /// Central differences, one-sided at the boundaries.
    Central,
}

/// Positions with their first and second derivatives for one DOF.
#[derive(Debug, Clone, PartialEq)]
pub struct Kinematics {
    pub pos: Vec<f64>,
    pub vel: Vec<f64>,
    pub acc: Vec<f64>,
}

impl Kinematics {
    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    pub fn from_positions(pos: &[f64], dt: f64, scheme: DerivativeScheme) -> Result<Self> {
        if pos.len() < 3 {
            return Err(DmpError::arg(format!(
                "need at least 3 samples, got {}",
                pos.len()
            )));
        }
        if !(dt > 0.0) {
            return Err(DmpError::arg("dt must be positive"));
        }
        let vel = differentiate(pos, dt, scheme);
        let acc = differentiate(&vel, dt, scheme);
        Ok(Kinematics {
            pos: pos.to_vec(),
            vel,
            acc,
        })
    }
}

fn differentiate(v: &[f64], dt: f64, scheme: DerivativeScheme) -> Vec<f64> {
    let n = v.len();
    match scheme {
        DerivativeScheme::Backward => std::iter::once(0.0)
            .chain(v.windows(2).map(|w| (w[1] - w[0]) / dt))
            .collect(),
        DerivativeScheme::Central => (0..n)
            .map(|t| {
                if t == 0 {
                    (v[1] - v[0]) / dt
                } else if t == n - 1 {
                    (v[n - 1] - v[n - 2]) / dt
                } else {
                    (v[t + 1] - v[t - 1]) / (2.0 * dt)
                }
            })
            .collect(),
    }
}

/// Forcing values that make the discretized transformation system follow a
/// demonstration (with `s = 1`).
///
/// Target `t` is the forcing applied at phase `x_t` while stepping from
/// sample `t` to `t + 1`:
/// `f_t = acc_{t+1} / tau^2 - alpha_z (beta_z (g - p_t) - vel_t / tau)`.
/// The result has one entry fewer than the demonstration.
pub fn forcing_targets(
    demo: &Kinematics,
    hp: &DmpHyperParams,
    tp: &TaskParams,
) -> Result<Vec<f64>> {
    let n = demo.len();
    if n < 3 {
        return Err(DmpError::arg(format!("need at least 3 samples, got {n}")));
    }
    if demo.vel.len() != n || demo.acc.len() != n {
        return Err(DmpError::arg(
            "positions, velocities and accelerations differ in length",
        ));
    }
    tp.validate()?;
    let tau2 = tp.tau * tp.tau;
    Ok((0..n - 1)
        .map(|t| {
            demo.acc[t + 1] / tau2
                - hp.alpha_z * (hp.beta_z * (tp.goal - demo.pos[t]) - demo.vel[t] / tp.tau)
        })
        .collect())
}

/// Scalar reference integrator of the transformation system.
///
/// `forcing[t]` is the (already scaled) forcing used while stepping from
/// `t` to `t + 1`; the output has `forcing.len() + 1` samples, starting at
/// rest at `tp.start`.
pub fn integrate(
    hp: &DmpHyperParams,
    tp: &TaskParams,
    forcing: &[f64],
    mode: DiscretizationMode,
) -> Kinematics {
    let n = forcing.len() + 1;
    let mut out = Kinematics {
        pos: Vec::with_capacity(n),
        vel: Vec::with_capacity(n),
        acc: Vec::with_capacity(n),
    };
    let (mut acc, mut vel, mut pos) = (0.0, 0.0, tp.start);
    out.acc.push(acc);
    out.vel.push(vel);
    out.pos.push(pos);
    let tau2 = tp.tau * tp.tau;
    for f in forcing {
        let new_acc = tau2 * (hp.alpha_z * (hp.beta_z * (tp.goal - pos) - vel / tp.tau) + f);
        match mode {
            DiscretizationMode::SubstitutedEuler => {
                vel += new_acc * tp.dt;
                pos += vel * tp.dt;
            }
            DiscretizationMode::PrintedA => {
                let old_vel = vel;
                vel += acc * tp.dt;
                pos += old_vel * tp.dt;
            }
        }
        acc = new_acc;
        out.acc.push(acc);
        out.vel.push(vel);
        out.pos.push(pos);
    }
    out
}

/// Deterministic DMP rollout with weights `w`: forcing `s * features(x_t) . w`.
pub fn rollout_weights(
    hp: &DmpHyperParams,
    tp: &TaskParams,
    weights: &DVector<f64>,
    n_steps: usize,
    mode: DiscretizationMode,
) -> Result<Kinematics> {
    let s = scaling_factor(tp)?;
    let phase = phase_trajectory(hp, tp, n_steps, PhaseIntegration::Exact)?;
    let forcing: Vec<f64> = phase.values()[..n_steps - 1]
        .iter()
        .map(|&x| s * basis_features(x, hp).dot(weights))
        .collect();
    Ok(integrate(hp, tp, &forcing, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn task(tau: f64, dt: f64) -> TaskParams {
        TaskParams {
            start: 0.0,
            goal: 1.0,
            tau,
            dt,
            delta_g_fit: 1.0,
        }
    }

    fn hp3() -> DmpHyperParams {
        DmpHyperParams::new(
            25.0,
            6.25,
            2.0,
            vec![0.25, 0.5, 0.75],
            vec![10.0, 10.0, 10.0],
        )
        .unwrap()
    }

    #[test]
    fn phase_closed_form() {
        let hp = hp3();
        let x = phase_trajectory(&hp, &task(1.0, 0.1), 3, PhaseIntegration::Exact).unwrap();
        assert_eq!(x[0], 1.0);
        assert_relative_eq!(x[1], 0.818_730_753_077_981_9, epsilon = 1e-15);
        let x2 = phase_trajectory(&hp, &task(2.0, 0.1), 2, PhaseIntegration::Exact).unwrap();
        assert_relative_eq!(x2[1], (-0.4f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn phase_rejects_zero_steps() {
        assert!(phase_trajectory(&hp3(), &task(1.0, 0.1), 0, PhaseIntegration::Exact).is_err());
    }

    #[test]
    fn euler_phase_is_positive_and_decreasing() {
        let x = phase_trajectory(&hp3(), &task(1.0, 0.01), 500, PhaseIntegration::Euler).unwrap();
        assert_eq!(x[0], 1.0);
        assert_relative_eq!(x[1], 0.98, epsilon = 1e-15);
        assert!(x.values().windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
    }

    #[test]
    fn single_basis_feature_is_phase() {
        let hp = DmpHyperParams::new(25.0, 6.25, 2.0, vec![0.3], vec![123.0]).unwrap();
        for x in [1.0, 0.5, 0.01, 1e-6] {
            assert_relative_eq!(basis_features(x, &hp)[0], x, epsilon = 1e-15);
        }
    }

    #[test]
    fn three_basis_hand_evaluation() {
        // psi = (exp(-0.625), 1, exp(-0.625)); sum = 1 + 2 exp(-0.625)
        let phi = basis_features(0.5, &hp3());
        let e = (-0.625f64).exp();
        let norm = 1.0 + 2.0 * e;
        assert_relative_eq!(phi[0], 0.5 * e / norm, epsilon = 1e-15);
        assert_relative_eq!(phi[1], 0.5 / norm, epsilon = 1e-15);
        assert_relative_eq!(phi[2], 0.5 * e / norm, epsilon = 1e-15);
        assert_relative_eq!(phi.sum(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn features_survive_extreme_widths() {
        let hp = DmpHyperParams::new(25.0, 6.25, 2.0, vec![0.9, 1.0], vec![1e9, 1e9]).unwrap();
        let phi = basis_features(1e-3, &hp);
        assert!(phi.iter().all(|v| v.is_finite()));
        assert_relative_eq!(phi.sum(), 1e-3, epsilon = 1e-15);
        // the nearer center takes all the mass
        assert_relative_eq!(phi[0], 1e-3, epsilon = 1e-15);
    }

    #[test]
    fn default_layout() {
        let hp = DmpHyperParams::with_default_basis(5).unwrap();
        assert_eq!(hp.beta_z, hp.alpha_z / 4.0);
        assert_eq!(hp.centers[0], 1.0);
        assert_relative_eq!(hp.centers[4], (-DEFAULT_ALPHA_X).exp(), epsilon = 1e-15);
        assert!(hp.centers.windows(2).all(|w| w[1] < w[0]));
        assert_relative_eq!(hp.widths[0], 1.0 / (hp.centers[1] - hp.centers[0]).powi(2));
        assert!(DmpHyperParams::with_default_basis(0).is_err());
        assert!(DmpHyperParams::new(25.0, 6.25, 2.0, vec![0.5], vec![-1.0]).is_err());
        assert!(DmpHyperParams::new(25.0, 6.25, 2.0, vec![0.5, 0.2], vec![1.0]).is_err());
    }

    #[test]
    fn scaling() {
        let mut tp = task(1.0, 0.01);
        tp.start = 0.3;
        tp.goal = 0.3;
        assert_eq!(scaling_factor(&tp).unwrap(), 0.0);
        tp.goal = 1.3;
        assert_eq!(scaling_factor(&tp).unwrap(), 1.0);
        tp.goal = 2.3;
        assert_relative_eq!(scaling_factor(&tp).unwrap(), 2.0, epsilon = 1e-15);
        tp.delta_g_fit = 0.0;
        assert!(matches!(
            scaling_factor(&tp),
            Err(DmpError::InvalidModel(_))
        ));
    }

    #[test]
    fn rest_state_needs_no_forcing() {
        let hp = hp3();
        let mut tp = task(1.0, 0.01);
        tp.goal = 0.7;
        let demo =
            Kinematics::from_positions(&[0.7; 20], tp.dt, DerivativeScheme::Central).unwrap();
        let f = forcing_targets(&demo, &hp, &tp).unwrap();
        assert_eq!(f.len(), 19);
        assert!(f.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forcing_direct_substitution() {
        let hp = hp3();
        let tp = task(2.0, 0.01);
        let demo = Kinematics {
            pos: vec![1.0, 1.0, 1.0],
            vel: vec![0.0, 0.0, 0.0],
            acc: vec![0.0, 4.0, 0.0],
        };
        let f = forcing_targets(&demo, &hp, &tp).unwrap();
        assert_relative_eq!(f[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn short_demo_rejected() {
        assert!(Kinematics::from_positions(&[0.0, 1.0], 0.01, DerivativeScheme::Backward).is_err());
        let demo = Kinematics {
            pos: vec![0.0; 2],
            vel: vec![0.0; 2],
            acc: vec![0.0; 2],
        };
        assert!(forcing_targets(&demo, &hp3(), &task(1.0, 0.01)).is_err());
    }

    #[test]
    fn rollout_round_trip_recovers_forcing() {
        let hp = DmpHyperParams::with_default_basis(10).unwrap();
        let tp = TaskParams {
            start: -0.2,
            goal: 0.9,
            tau: 1.0,
            dt: 1e-3,
            delta_g_fit: 1.1,
        };
        let w = DVector::from_fn(10, |i, _| 50.0 * ((i as f64) * 0.7).sin());
        let n = 1001;
        for mode in [
            DiscretizationMode::SubstitutedEuler,
            DiscretizationMode::PrintedA,
        ] {
            let roll = rollout_weights(&hp, &tp, &w, n, mode).unwrap();
            let f = forcing_targets(&roll, &hp, &tp).unwrap();
            let x = phase_trajectory(&hp, &tp, n, PhaseIntegration::Exact).unwrap();
            for t in 0..n - 1 {
                let expected = basis_features(x[t], &hp).dot(&w);
                assert!((f[t] - expected).abs() < 1e-6, "{mode:?} step {t}");
            }
        }
    }

    #[test]
    fn backward_positions_reproduce_demo() {
        let hp = DmpHyperParams::with_default_basis(10).unwrap();
        let tp = task(1.0, 0.01);
        let pos: Vec<f64> = (0..101).map(|t| (t as f64 * 0.01 * 3.0).sin()).collect();
        let mut tp = tp;
        tp.start = pos[0];
        tp.goal = pos[100];
        let kin = Kinematics::from_positions(&pos, tp.dt, DerivativeScheme::Backward).unwrap();
        let f = forcing_targets(&kin, &hp, &tp).unwrap();
        let replay = integrate(&hp, &tp, &f, DiscretizationMode::SubstitutedEuler);
        for (a, b) in replay.pos.iter().zip(&pos) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
