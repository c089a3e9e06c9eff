//! Online failure detection from the per-step predictive log-likelihood.
//!
//! Calibration records the lowest score reached by any training
//! demonstration; an execution fails as soon as its score drops below a
//! multiple of that value.

use serde::{Deserialize, Serialize};

use crate::error::{DmpError, Result};
use crate::imitation::{demo_task, DemoSet};
use crate::kalman::execute_and_monitor;
use crate::model::{Calibration, PrimitiveModel, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Moving average of the per-step log-likelihood over `window` steps.
    #[default]
    PerStep,
    /// Running sum of the per-step log-likelihood.
    Cumulative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    pub threshold_multiplier: f64,
    pub window: usize,
    pub aggregation: Aggregation,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            threshold_multiplier: 2.0,
            window: 1,
            aggregation: Aggregation::PerStep,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(DmpError::arg("monitor window must be at least 1"));
        }
        if !(self.threshold_multiplier >= 1.0) || !self.threshold_multiplier.is_finite() {
            return Err(DmpError::arg(format!(
                "threshold multiplier must be finite and >= 1, got {}",
                self.threshold_multiplier
            )));
        }
        Ok(())
    }

    /// Score trace compared against the threshold. Steps without an
    /// observation carry no score.
    pub fn score(&self, logliks: &[Option<f64>]) -> Vec<Option<f64>> {
        match self.aggregation {
            Aggregation::Cumulative => {
                let mut sum = 0.0;
                logliks
                    .iter()
                    .map(|l| {
                        l.map(|v| {
                            sum += v;
                            sum
                        })
                    })
                    .collect()
            }
            Aggregation::PerStep => {
                let mut recent: std::collections::VecDeque<f64> = Default::default();
                logliks
                    .iter()
                    .map(|l| {
                        l.map(|v| {
                            recent.push_back(v);
                            if recent.len() > self.window {
                                recent.pop_front();
                            }
                            recent.iter().sum::<f64>() / recent.len() as f64
                        })
                    })
                    .collect()
            }
        }
    }
}

/// Threshold from the training minimum: `multiplier * l_min` for negative
/// minima; otherwise `l_min - (multiplier - 1) |l_min|`, with `l_min - 1`
/// standing in for a zero minimum, so the threshold never exceeds `l_min`.
pub fn threshold_from_min(l_min: f64, multiplier: f64) -> f64 {
    if l_min < 0.0 {
        multiplier * l_min
    } else if l_min == 0.0 {
        -(multiplier - 1.0)
    } else {
        l_min - (multiplier - 1.0) * l_min.abs()
    }
}

/// Runs every training demonstration through the filter and derives the
/// failure threshold from the lowest score seen.
pub fn calibrate_threshold(
    model: &PrimitiveModel,
    demos: &DemoSet,
    config: &MonitorConfig,
) -> Result<Calibration> {
    config.validate()?;
    if demos.is_empty() {
        return Err(DmpError::arg(
            "calibration needs at least one demonstration",
        ));
    }
    let mut l_min = f64::INFINITY;
    for demo in &demos.demos {
        let task = demo_task(model, demo);
        let trace = execute_and_monitor(model, &task, demo.len(), demo.samples.iter().map(Some))?;
        for s in config.score(&trace.logliks()).into_iter().flatten() {
            l_min = l_min.min(s);
        }
    }
    if !l_min.is_finite() {
        return Err(DmpError::Fit(
            "calibration produced no finite log-likelihood".into(),
        ));
    }
    Ok(Calibration {
        train_loglik_min: l_min,
        threshold: threshold_from_min(l_min, config.threshold_multiplier),
        config: config.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Nominal,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub per_step_loglik: Vec<Option<f64>>,
    /// Aggregated score the threshold is applied to.
    pub score: Vec<Option<f64>>,
    pub threshold: f64,
    pub verdict: Verdict,
    pub failure_step: Option<usize>,
    pub min_loglik: f64,
    pub completed: bool,
}

impl MonitorReport {
    pub fn from_trace(
        logliks: Vec<Option<f64>>,
        threshold: f64,
        config: &MonitorConfig,
        completed: bool,
    ) -> Self {
        let score = config.score(&logliks);
        let failure_step = score.iter().position(|s| s.is_some_and(|v| v < threshold));
        let min_loglik = score
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        MonitorReport {
            per_step_loglik: logliks,
            score,
            threshold,
            verdict: if failure_step.is_some() {
                Verdict::Failed
            } else {
                Verdict::Nominal
            },
            failure_step,
            min_loglik,
            completed,
        }
    }

    pub fn failed(&self) -> bool {
        self.verdict == Verdict::Failed
    }
}

/// Executes the model against `observations` and classifies the execution.
pub fn classify_execution<O: AsRef<[f64]>>(
    model: &PrimitiveModel,
    task: &TaskSpec,
    observations: &[Option<O>],
) -> Result<MonitorReport> {
    let cal = model
        .calibration
        .as_ref()
        .ok_or_else(|| DmpError::InvalidModel("model has no calibrated threshold".into()))?;
    classify_with_threshold(model, task, observations, cal.threshold, &cal.config)
}

pub fn classify_with_threshold<O: AsRef<[f64]>>(
    model: &PrimitiveModel,
    task: &TaskSpec,
    observations: &[Option<O>],
    threshold: f64,
    config: &MonitorConfig,
) -> Result<MonitorReport> {
    config.validate()?;
    for o in observations.iter().flatten() {
        if o.as_ref().len() != model.n_dofs() {
            return Err(DmpError::DimensionMismatch {
                expected: model.n_dofs(),
                got: o.as_ref().len(),
            });
        }
    }
    let trace = execute_and_monitor(
        model,
        task,
        observations.len(),
        observations.iter().map(|o| o.as_ref().map(|v| v.as_ref())),
    )?;
    Ok(MonitorReport::from_trace(
        trace.logliks(),
        threshold,
        config,
        trace.completed,
    ))
}
