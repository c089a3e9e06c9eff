use super::{innovate, predict, CovarianceUpdate, DofBelief};
use crate::error::{DmpError, Result};
use crate::model::{DofPlan, PrimitiveModel, TaskSpec};

/// Beliefs of all DOFs at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub step: usize,
    pub dofs: Vec<DofBelief>,
}

impl BeliefState {
    pub fn positions(&self) -> Vec<f64> {
        self.dofs.iter().map(|b| b.mean[2]).collect()
    }

    pub fn position_stds(&self) -> Vec<f64> {
        self.dofs
            .iter()
            .map(|b| b.position_var().max(0.0).sqrt())
            .collect()
    }
}

/// Innovation statistics of one multi-DOF observation. DOFs are independent,
/// so the joint log-density is the sum over DOFs.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLikelihood {
    pub innovation: Vec<f64>,
    pub innovation_cov: Vec<f64>,
    pub loglik: f64,
    pub regularized: bool,
}

/// Streaming execution of a primitive with sensor feedback.
///
/// Each call to [`Executor::step`] consumes the observation of the next time
/// step: the belief is predicted (except at step 0, which starts from the
/// initial state) and then corrected by the observation when one is present.
#[derive(Debug, Clone)]
pub struct Executor<'a> {
    plans: Vec<DofPlan<'a>>,
    posterior: Option<Vec<DofBelief>>,
    step: usize,
    form: CovarianceUpdate,
}

impl<'a> Executor<'a> {
    pub fn new(model: &'a PrimitiveModel, task: &TaskSpec) -> Result<Self> {
        Ok(Executor {
            plans: model.plans(task)?,
            posterior: None,
            step: 0,
            form: CovarianceUpdate::Simple,
        })
    }

    pub fn with_update(mut self, form: CovarianceUpdate) -> Self {
        self.form = form;
        self
    }

    pub fn n_dofs(&self) -> usize {
        self.plans.len()
    }

    /// Index of the step the next observation belongs to.
    pub fn next_step(&self) -> usize {
        self.step
    }

    /// Predicted (desired) state for the next step. After an observation this
    /// is `A mu_p + B u + A K (o - C mu_p)`: the feedback-modulated plan.
    pub fn desired_next(&self) -> BeliefState {
        let dofs = match &self.posterior {
            None => self.plans.iter().map(DofPlan::initial).collect(),
            Some(post) => post
                .iter()
                .zip(&self.plans)
                .map(|(b, p)| predict(b, &p.transition(self.step - 1)))
                .collect(),
        };
        BeliefState {
            step: self.step,
            dofs,
        }
    }

    pub fn step(
        &mut self,
        observation: Option<&[f64]>,
    ) -> Result<(BeliefState, Option<JointLikelihood>)> {
        if let Some(o) = observation {
            if o.len() != self.n_dofs() {
                return Err(DmpError::DimensionMismatch {
                    expected: self.n_dofs(),
                    got: o.len(),
                });
            }
        }
        let prior = self.desired_next().dofs;
        let (post, lik) = match observation {
            None => (prior, None),
            Some(o) => {
                let mut joint = JointLikelihood {
                    innovation: Vec::with_capacity(o.len()),
                    innovation_cov: Vec::with_capacity(o.len()),
                    loglik: 0.0,
                    regularized: false,
                };
                let post = prior
                    .iter()
                    .zip(&self.plans)
                    .zip(o)
                    .map(|((b, plan), &obs)| {
                        let (post, l) =
                            innovate(b, &plan.matrices.c, plan.obs_noise(), obs, self.form);
                        joint.innovation.push(l.innovation);
                        joint.innovation_cov.push(l.innovation_cov);
                        joint.loglik += l.loglik;
                        joint.regularized |= l.regularized;
                        post
                    })
                    .collect();
                (post, Some(joint))
            }
        };
        let state = BeliefState {
            step: self.step,
            dofs: post.clone(),
        };
        self.posterior = Some(post);
        self.step += 1;
        Ok((state, lik))
    }
}

/// Open-loop propagation of mean and covariance for `n_steps` steps.
pub fn rollout(
    model: &PrimitiveModel,
    task: &TaskSpec,
    n_steps: usize,
) -> Result<Vec<BeliefState>> {
    let mut exec = Executor::new(model, task)?;
    (0..n_steps)
        .map(|_| exec.step(None).map(|(b, _)| b))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    pub beliefs: Vec<BeliefState>,
    pub likelihoods: Vec<Option<JointLikelihood>>,
    /// False when the observation stream ended before `n_steps`.
    pub completed: bool,
}

impl ExecutionTrace {
    pub fn logliks(&self) -> Vec<Option<f64>> {
        self.likelihoods
            .iter()
            .map(|l| l.as_ref().map(|l| l.loglik))
            .collect()
    }
}

/// Runs the filter over an observation stream (`None` marks a missing
/// observation) for up to `n_steps` steps.
pub fn execute_and_monitor<I, O>(
    model: &PrimitiveModel,
    task: &TaskSpec,
    n_steps: usize,
    observations: I,
) -> Result<ExecutionTrace>
where
    I: IntoIterator<Item = Option<O>>,
    O: AsRef<[f64]>,
{
    let mut exec = Executor::new(model, task)?;
    let mut trace = ExecutionTrace {
        beliefs: Vec::with_capacity(n_steps),
        likelihoods: Vec::with_capacity(n_steps),
        completed: false,
    };
    let mut stream = observations.into_iter();
    for _ in 0..n_steps {
        let Some(obs) = stream.next() else {
            return Ok(trace);
        };
        let (b, l) = exec.step(obs.as_ref().map(|o| o.as_ref()))?;
        trace.beliefs.push(b);
        trace.likelihoods.push(l);
    }
    trace.completed = true;
    Ok(trace)
}
