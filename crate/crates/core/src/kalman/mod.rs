//! Inference on the per-DOF linear dynamical system: prediction, innovation
//! updates with predictive log-likelihoods, forward filtering and
//! fixed-interval (RTS) smoothing.
//!
//! Everything here works on a single 3-dimensional state with a scalar
//! observation. Multi-DOF primitives are block diagonal, so they run one
//! independent filter per DOF; [`Executor`] drives them together.

mod execute;

pub use execute::{
    execute_and_monitor, rollout, BeliefState, ExecutionTrace, Executor, JointLikelihood,
};

use nalgebra::{Matrix3, RowVector3, Vector3};
use serde::{Deserialize, Serialize};

use crate::lds::LdsMatrices;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const S_REGULARIZER: f64 = 1e-12;

/// Gaussian belief over `(acc, vel, pos)` of one DOF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DofBelief {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

impl DofBelief {
    pub fn new(mean: Vector3<f64>, cov: Matrix3<f64>) -> Self {
        DofBelief {
            mean,
            cov: symmetrize(&cov),
        }
    }

    pub fn position_var(&self) -> f64 {
        self.cov[(2, 2)]
    }
}

/// One transition `s_{t+1} = A s_t + offset + eps`, `eps ~ N(0, q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub a: Matrix3<f64>,
    pub offset: Vector3<f64>,
    pub q: Matrix3<f64>,
}

impl Transition {
    pub fn from_lds(m: &LdsMatrices, u: f64, q: Matrix3<f64>) -> Self {
        Transition {
            a: m.a,
            offset: m.b * u,
            q,
        }
    }
}

/// Innovation statistics of one scalar observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLikelihood {
    pub innovation: f64,
    pub innovation_cov: f64,
    pub loglik: f64,
    /// Set when the innovation covariance had to be regularized.
    pub regularized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceUpdate {
    /// `V_u = V_p - K C V_p`, then symmetrized.
    #[default]
    Simple,
    /// `V_u = (I - K C) V_p (I - K C)^T + K R K^T`.
    Joseph,
}

pub fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

pub fn predict(belief: &DofBelief, tr: &Transition) -> DofBelief {
    DofBelief {
        mean: tr.a * belief.mean + tr.offset,
        cov: symmetrize(&(tr.a * belief.cov * tr.a.transpose() + tr.q)),
    }
}

/// Conditions a predicted belief on observation `o = c s + v`, `v ~ N(0, r)`.
pub fn innovate(
    prior: &DofBelief,
    c: &RowVector3<f64>,
    r: f64,
    o: f64,
    form: CovarianceUpdate,
) -> (DofBelief, StepLikelihood) {
    let pc = prior.cov * c.transpose();
    let mut s = (c * pc)[0] + r;
    let mut regularized = false;
    if !(s > S_REGULARIZER) {
        s += S_REGULARIZER;
        regularized = true;
    }
    let gain = pc / s;
    let innovation = o - (c * prior.mean)[0];
    let mean = prior.mean + gain * innovation;
    let cov = match form {
        CovarianceUpdate::Simple => prior.cov - gain * (c * prior.cov),
        CovarianceUpdate::Joseph => {
            let ikc = Matrix3::identity() - gain * c;
            ikc * prior.cov * ikc.transpose() + gain * gain.transpose() * r
        }
    };
    let loglik = -0.5 * (LN_2PI + s.ln() + innovation * innovation / s);
    (
        DofBelief {
            mean,
            cov: symmetrize(&cov),
        },
        StepLikelihood {
            innovation,
            innovation_cov: s,
            loglik,
            regularized,
        },
    )
}

/// Predict with the LDS, then innovate when an observation is present.
pub fn filter_step(
    belief: &DofBelief,
    matrices: &LdsMatrices,
    u: f64,
    q: &Matrix3<f64>,
    r: f64,
    o: Option<f64>,
) -> (DofBelief, Option<StepLikelihood>) {
    let predicted = predict(belief, &Transition::from_lds(matrices, u, *q));
    match o {
        Some(o) => {
            let (post, lik) = innovate(&predicted, &matrices.c, r, o, CovarianceUpdate::Simple);
            (post, Some(lik))
        }
        None => (predicted, None),
    }
}

/// Output of a forward filtering pass over `T` steps.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub predicted: Vec<DofBelief>,
    pub filtered: Vec<DofBelief>,
    pub likelihoods: Vec<Option<StepLikelihood>>,
}

impl ForwardPass {
    /// Sum of the per-step predictive log-densities, i.e. the log marginal
    /// likelihood of all observations.
    pub fn loglik(&self) -> f64 {
        self.likelihoods.iter().flatten().map(|l| l.loglik).sum()
    }

    pub fn len(&self) -> usize {
        self.filtered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filtered.is_empty()
    }
}

/// Kalman filter over `observations.len()` steps. Step 0 uses `initial` as
/// its prediction; `transitions[t]` moves step `t` to `t + 1`.
pub fn forward_pass(
    initial: &DofBelief,
    transitions: &[Transition],
    c: &RowVector3<f64>,
    r: f64,
    observations: &[Option<f64>],
    form: CovarianceUpdate,
) -> ForwardPass {
    let n = observations.len();
    assert!(
        n == 0 || transitions.len() + 1 >= n,
        "need {} transitions, got {}",
        n.saturating_sub(1),
        transitions.len()
    );
    let mut out = ForwardPass {
        predicted: Vec::with_capacity(n),
        filtered: Vec::with_capacity(n),
        likelihoods: Vec::with_capacity(n),
    };
    let mut prior = *initial;
    for (t, o) in observations.iter().enumerate() {
        if t > 0 {
            prior = predict(&out.filtered[t - 1], &transitions[t - 1]);
        }
        let (post, lik) = match o {
            Some(o) => {
                let (p, l) = innovate(&prior, c, r, *o, form);
                (p, Some(l))
            }
            None => (prior, None),
        };
        out.predicted.push(prior);
        out.filtered.push(post);
        out.likelihoods.push(lik);
    }
    out
}

/// Smoothed posteriors given every observation of a forward pass.
#[derive(Debug, Clone)]
pub struct Smoothed {
    pub beliefs: Vec<DofBelief>,
    /// `cross[t] = Cov(s_{t+1}, s_t | all observations)`.
    pub cross: Vec<Matrix3<f64>>,
}

impl Smoothed {
    /// `E[s_t s_t^T]` under the smoothed posterior.
    pub fn second_moment(&self, t: usize) -> Matrix3<f64> {
        let b = &self.beliefs[t];
        b.cov + b.mean * b.mean.transpose()
    }
}

fn spd_inverse(m: &Matrix3<f64>) -> Matrix3<f64> {
    if let Some(ch) = m.cholesky() {
        return ch.inverse();
    }
    m.pseudo_inverse(1e-14).unwrap_or_else(|_| Matrix3::zeros())
}

/// Rauch-Tung-Striebel backward pass.
pub fn rts_smooth(pass: &ForwardPass, transitions: &[Transition]) -> Smoothed {
    let n = pass.len();
    if n == 0 {
        return Smoothed {
            beliefs: vec![],
            cross: vec![],
        };
    }
    let mut beliefs = pass.filtered.clone();
    let mut cross = vec![Matrix3::zeros(); n - 1];
    for t in (0..n - 1).rev() {
        let f = &pass.filtered[t];
        let p_next = &pass.predicted[t + 1];
        let j = f.cov * transitions[t].a.transpose() * spd_inverse(&p_next.cov);
        let next = beliefs[t + 1];
        let mean = f.mean + j * (next.mean - p_next.mean);
        let cov = f.cov + j * (next.cov - p_next.cov) * j.transpose();
        beliefs[t] = DofBelief {
            mean,
            cov: symmetrize(&cov),
        };
        cross[t] = next.cov * j.transpose();
    }
    Smoothed { beliefs, cross }
}
