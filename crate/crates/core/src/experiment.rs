//! The letter failure-detection experiment: train one primitive per letter,
//! then classify every held-out demonstration unperturbed and with a hold.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{apply_perturbation, LetterDataset, LetterDemos, PerturbationSpec};
use crate::error::Result;
use crate::imitation::{demo_task, learn_primitive, LearnConfig, TrainingReport};
use crate::model::PrimitiveModel;
use crate::monitor::{classify_with_threshold, threshold_from_min, MonitorReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetterResult {
    pub letter: String,
    pub n_test: usize,
    pub false_positives: usize,
    pub detections: usize,
    pub threshold: f64,
    pub train_loglik_min: f64,
    /// Lowest score of any unperturbed test execution.
    pub nominal_min_loglik: f64,
    /// Highest minimum score among the perturbed executions.
    pub perturbed_max_min_loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub n_letters: usize,
    pub n_test_cases: usize,
    pub false_positives: usize,
    pub detections: usize,
    pub threshold_multiplier: f64,
    pub perturbation: PerturbationSpec,
    pub letters: Vec<LetterResult>,
}

/// Classifies the test demonstrations of one letter with a trained model.
/// `threshold_multiplier` overrides the multiplier stored in the model.
pub fn evaluate_letter(
    model: &PrimitiveModel,
    demos: &LetterDemos,
    perturbation: &PerturbationSpec,
    threshold_multiplier: f64,
) -> Result<(LetterResult, Vec<(MonitorReport, MonitorReport)>)> {
    let cal = model.calibration.as_ref().ok_or_else(|| {
        crate::DmpError::InvalidModel(format!("model `{}` is not calibrated", model.label))
    })?;
    let mut config = cal.config.clone();
    config.threshold_multiplier = threshold_multiplier;
    config.validate()?;
    let threshold = threshold_from_min(cal.train_loglik_min, threshold_multiplier);
    let reports = demos
        .test
        .iter()
        .map(|demo| {
            let task = demo_task(model, demo);
            let obs: Vec<Option<&[f64]>> =
                demo.samples.iter().map(|r| Some(r.as_slice())).collect();
            let nominal = classify_with_threshold(model, &task, &obs, threshold, &config)?;
            let held = apply_perturbation(demo, perturbation)?;
            let obs: Vec<Option<&[f64]>> =
                held.samples.iter().map(|r| Some(r.as_slice())).collect();
            let perturbed = classify_with_threshold(model, &task, &obs, threshold, &config)?;
            Ok((nominal, perturbed))
        })
        .collect::<Result<Vec<_>>>()?;
    let result = LetterResult {
        letter: demos.letter.clone(),
        n_test: demos.test.len(),
        false_positives: reports.iter().filter(|(n, _)| n.failed()).count(),
        detections: reports.iter().filter(|(_, p)| p.failed()).count(),
        threshold,
        train_loglik_min: cal.train_loglik_min,
        nominal_min_loglik: reports
            .iter()
            .map(|(n, _)| n.min_loglik)
            .fold(f64::INFINITY, f64::min),
        perturbed_max_min_loglik: reports
            .iter()
            .map(|(_, p)| p.min_loglik)
            .fold(f64::NEG_INFINITY, f64::max),
    };
    Ok((result, reports))
}

pub fn train_letter(
    demos: &LetterDemos,
    config: &LearnConfig,
) -> Result<(PrimitiveModel, TrainingReport)> {
    learn_primitive(demos.train.clone(), &demos.letter, config)
}

/// Trains every letter (in parallel) and evaluates it.
pub fn run_experiment(
    dataset: &LetterDataset,
    config: &LearnConfig,
    perturbation: &PerturbationSpec,
    threshold_multiplier: f64,
) -> Result<(ExperimentSummary, BTreeMap<String, PrimitiveModel>)> {
    let models = dataset
        .letters
        .par_iter()
        .map(|l| train_letter(l, config).map(|(m, _)| (l.letter.clone(), m)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let summary = evaluate_models(dataset, &models, perturbation, threshold_multiplier)?;
    Ok((summary, models))
}

pub fn evaluate_models(
    dataset: &LetterDataset,
    models: &BTreeMap<String, PrimitiveModel>,
    perturbation: &PerturbationSpec,
    threshold_multiplier: f64,
) -> Result<ExperimentSummary> {
    let letters = dataset
        .letters
        .par_iter()
        .filter(|l| !l.test.is_empty())
        .map(|l| {
            let model = models.get(&l.letter).ok_or_else(|| {
                crate::DmpError::arg(format!("no model for letter `{}`", l.letter))
            })?;
            evaluate_letter(model, l, perturbation, threshold_multiplier).map(|(r, _)| r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentSummary {
        n_letters: letters.len(),
        n_test_cases: letters.iter().map(|l| l.n_test).sum(),
        false_positives: letters.iter().map(|l| l.false_positives).sum(),
        detections: letters.iter().map(|l| l.detections).sum(),
        threshold_multiplier,
        perturbation: *perturbation,
        letters,
    })
}
