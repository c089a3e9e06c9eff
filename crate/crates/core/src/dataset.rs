//! Synthetic handwriting data: 22 single-stroke letters with natural
//! demo-to-demo variation, the hold perturbation that simulates a blocked
//! execution, and the on-disk dataset layout
//! `letters/<letter>/<train|test>/<demo_id>.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DmpError, Result};
use crate::model::Provenance;
use crate::trajectory::read_dir_trajectories;
pub use crate::trajectory::{read_trajectory, write_trajectory, Endpoints, Trajectory};

pub const GENERATOR_VERSION: u32 = 1;
pub const DATASET_DT: f64 = 0.01;
pub const DATASET_DURATION: f64 = 1.0;

/// Spread of the demo-to-demo variation. Positions are in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariationConfig {
    /// Output length of one template unit (the ascender height).
    pub letter_height: f64,
    /// Standard deviation of the per-control-point offsets, in template
    /// units.
    pub control_jitter_std: f64,
    /// Half-width of the uniform per-axis amplitude scaling.
    pub amplitude_jitter: f64,
    /// Half-width of the uniform time-warp slope deviation; samples move by
    /// at most `time_warp / pi` of the duration.
    pub time_warp: f64,
}

impl Default for VariationConfig {
    fn default() -> Self {
        VariationConfig {
            letter_height: 40.0,
            control_jitter_std: 0.0012,
            amplitude_jitter: 0.005,
            time_warp: 0.005,
        }
    }
}

impl VariationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.letter_height > 0.0 && self.letter_height.is_finite()) {
            return Err(DmpError::arg("letter height must be positive"));
        }
        if !(self.control_jitter_std >= 0.0) {
            return Err(DmpError::arg("control jitter must be non-negative"));
        }
        if !(0.0..=0.05).contains(&self.amplitude_jitter) {
            return Err(DmpError::arg("amplitude jitter must lie in [0, 0.05]"));
        }
        if !(0.0..=0.05).contains(&self.time_warp) {
            return Err(DmpError::arg("time warp must lie in [0, 0.05]"));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct TemplateFile {
    version: u32,
    letters: BTreeMap<String, Vec<[f64; 2]>>,
}

fn template_file() -> &'static TemplateFile {
    static FILE: OnceLock<TemplateFile> = OnceLock::new();
    FILE.get_or_init(|| {
        serde_json::from_str(include_str!("../data/letters.json"))
            .expect("bundled letter templates parse")
    })
}

pub fn template_version() -> u32 {
    template_file().version
}

/// Letter names in sorted order.
pub fn letters() -> Vec<&'static str> {
    template_file().letters.keys().map(String::as_str).collect()
}

pub fn template(letter: &str) -> Option<&'static [[f64; 2]]> {
    template_file().letters.get(letter).map(Vec::as_slice)
}

/// Point on a uniform cubic B-spline whose end control points are tripled,
/// so the curve starts and ends on them with zero parametric velocity.
/// `u` runs over `[0, 1]`.
pub fn bspline_point(ctrl: &[[f64; 2]], u: f64) -> [f64; 2] {
    let n = ctrl.len();
    let padded: Vec<[f64; 2]> = std::iter::repeat_n(ctrl[0], 2)
        .chain(ctrl.iter().copied())
        .chain(std::iter::repeat_n(ctrl[n - 1], 2))
        .collect();
    let n_seg = padded.len() - 3;
    let v = u.clamp(0.0, 1.0) * n_seg as f64;
    let seg = (v.floor() as usize).min(n_seg - 1);
    let s = v - seg as f64;
    let s2 = s * s;
    let s3 = s2 * s;
    let b = [
        (1.0 - s).powi(3) / 6.0,
        (3.0 * s3 - 6.0 * s2 + 4.0) / 6.0,
        (-3.0 * s3 + 3.0 * s2 + 3.0 * s + 1.0) / 6.0,
        s3 / 6.0,
    ];
    let mut p = [0.0; 2];
    for (k, bk) in b.iter().enumerate() {
        p[0] += bk * padded[seg + k][0];
        p[1] += bk * padded[seg + k][1];
    }
    p
}

fn min_jerk(s: f64) -> f64 {
    let s3 = s * s * s;
    s3 * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Shape and timing variation of one demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct Variation {
    pub control_offsets: Vec<[f64; 2]>,
    pub scale: [f64; 2],
    pub warp: f64,
}

impl Variation {
    pub fn none(n_ctrl: usize) -> Self {
        Variation {
            control_offsets: vec![[0.0; 2]; n_ctrl],
            scale: [1.0; 2],
            warp: 0.0,
        }
    }

    fn sample(rng: &mut ChaCha8Rng, n_ctrl: usize, cfg: &VariationConfig) -> Self {
        let jitter = Normal::new(0.0, cfg.control_jitter_std).expect("valid std");
        let uniform = |rng: &mut ChaCha8Rng, half: f64| {
            if half > 0.0 {
                rng.random_range(-half..=half)
            } else {
                0.0
            }
        };
        Variation {
            control_offsets: (0..n_ctrl)
                .map(|_| [jitter.sample(rng), jitter.sample(rng)])
                .collect(),
            scale: [
                1.0 + uniform(rng, cfg.amplitude_jitter),
                1.0 + uniform(rng, cfg.amplitude_jitter),
            ],
            warp: uniform(rng, cfg.time_warp),
        }
    }
}

/// Samples one stroke of `letter` at `dt` over `duration` seconds.
pub fn render_letter(
    letter: &str,
    variation: &Variation,
    dt: f64,
    duration: f64,
) -> Result<Vec<Vec<f64>>> {
    let ctrl =
        template(letter).ok_or_else(|| DmpError::arg(format!("unknown letter `{letter}`")))?;
    if variation.control_offsets.len() != ctrl.len() {
        return Err(DmpError::arg("variation does not match the template size"));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in ctrl {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let pts: Vec<[f64; 2]> = ctrl
        .iter()
        .zip(&variation.control_offsets)
        .map(|(p, o)| {
            let mut q = [0.0; 2];
            for k in 0..2 {
                q[k] = center[k] + variation.scale[k] * (p[k] + o[k] - center[k]);
            }
            q
        })
        .collect();
    let n = (duration / dt).round() as usize + 1;
    Ok((0..n)
        .map(|i| {
            let s = i as f64 / (n - 1) as f64;
            let warped =
                s + variation.warp * (std::f64::consts::PI * s).sin() / std::f64::consts::PI;
            let p = bspline_point(&pts, min_jerk(warped.clamp(0.0, 1.0)));
            vec![p[0], p[1]]
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LetterDemos {
    pub letter: String,
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LetterDataset {
    pub seed: u64,
    pub variation: VariationConfig,
    pub letters: Vec<LetterDemos>,
}

impl LetterDataset {
    pub fn n_trajectories(&self) -> usize {
        self.letters
            .iter()
            .map(|l| l.train.len() + l.test.len())
            .sum()
    }

    pub fn letter(&self, name: &str) -> Option<&LetterDemos> {
        self.letters.iter().find(|l| l.letter == name)
    }
}

/// Generates `n_train + n_test` demonstrations per letter. Every demo draws
/// from its own ChaCha stream, so output does not depend on scheduling.
pub fn generate_letter_dataset(seed: u64, n_train: usize, n_test: usize) -> LetterDataset {
    generate_letter_dataset_with(seed, n_train, n_test, &VariationConfig::default())
}

pub fn generate_letter_dataset_with(
    seed: u64,
    n_train: usize,
    n_test: usize,
    variation: &VariationConfig,
) -> LetterDataset {
    let letters = letters()
        .into_par_iter()
        .enumerate()
        .map(|(li, letter)| {
            let n_ctrl = template(letter).expect("listed letter").len();
            let make = |split: &str, k: usize, stream: u64| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                let var = Variation::sample(&mut rng, n_ctrl, variation);
                let mut samples = render_letter(letter, &var, DATASET_DT, DATASET_DURATION)
                    .expect("template renders");
                for row in &mut samples {
                    row.iter_mut().for_each(|v| *v *= variation.letter_height);
                }
                Trajectory::new(
                    DATASET_DT,
                    samples,
                    letter,
                    format!("{letter}_{split}_{k:02}"),
                )
                .expect("rendered trajectory is valid")
            };
            let base = (li as u64) << 32;
            LetterDemos {
                letter: letter.to_string(),
                train: (0..n_train)
                    .map(|k| make("train", k, base + k as u64))
                    .collect(),
                test: (0..n_test)
                    .map(|k| make("test", k, base + (1 << 16) + k as u64))
                    .collect(),
            }
        })
        .collect();
    LetterDataset {
        seed,
        variation: *variation,
        letters,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    None,
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub onset_fraction: f64,
    pub duration_fraction: f64,
}

impl PerturbationSpec {
    pub fn hold(onset_fraction: f64, duration_fraction: f64) -> Self {
        PerturbationSpec {
            kind: PerturbationKind::Hold,
            onset_fraction,
            duration_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == PerturbationKind::None {
            return Ok(());
        }
        if !(self.onset_fraction > 0.0 && self.onset_fraction < 1.0) {
            return Err(DmpError::arg(format!(
                "onset fraction {} outside (0, 1)",
                self.onset_fraction
            )));
        }
        if !(self.duration_fraction >= 0.0 && self.duration_fraction <= 1.0) {
            return Err(DmpError::arg(format!(
                "duration fraction {} outside [0, 1]",
                self.duration_fraction
            )));
        }
        if self.onset_fraction + self.duration_fraction > 1.0 + 1e-12 {
            return Err(DmpError::arg("onset + duration exceeds the trajectory"));
        }
        Ok(())
    }
}

/// Applies a perturbation to the observed positions. A hold freezes the
/// position at its onset value for the given span; the rest is untouched.
/// The intended endpoints of the unperturbed trajectory are recorded in
/// `task`.
pub fn apply_perturbation(traj: &Trajectory, spec: &PerturbationSpec) -> Result<Trajectory> {
    spec.validate()?;
    let mut out = traj.clone();
    if spec.kind == PerturbationKind::None {
        return Ok(out);
    }
    let last = traj.len() - 1;
    let onset = (spec.onset_fraction * last as f64).round() as usize;
    let span = (spec.duration_fraction * last as f64).round() as usize;
    if span == 0 {
        return Ok(out);
    }
    out.task = Some(traj.endpoints());
    out.velocities = None;
    out.accelerations = None;
    let held = traj.samples[onset].clone();
    for row in &mut out.samples[onset..=(onset + span).min(last)] {
        row.clone_from(&held);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub generator_version: u32,
    pub template_version: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub variation: VariationConfig,
    pub dt: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub letters: Vec<String>,
}

pub fn letter_dir(root: &Path, letter: &str, split: &str) -> PathBuf {
    root.join("letters").join(letter).join(split)
}

pub fn write_dataset(
    root: &Path,
    ds: &LetterDataset,
    config_hash: Option<&str>,
) -> Result<DatasetManifest> {
    let provenance = Provenance {
        seed: Some(ds.seed),
        config_hash: config_hash.map(str::to_string),
    };
    for l in &ds.letters {
        for (split, demos) in [("train", &l.train), ("test", &l.test)] {
            let dir = letter_dir(root, &l.letter, split);
            fs::create_dir_all(&dir).map_err(|e| DmpError::io(&dir, e))?;
            for d in demos {
                write_trajectory(&dir.join(format!("{}.csv", d.demo_id)), d, &provenance)?;
            }
        }
    }
    let manifest = DatasetManifest {
        format_version: crate::trajectory::TRAJECTORY_FORMAT_VERSION,
        generator_version: GENERATOR_VERSION,
        template_version: template_version(),
        seed: ds.seed,
        config_hash: config_hash.map(str::to_string),
        variation: ds.variation,
        dt: DATASET_DT,
        n_train: ds.letters.first().map_or(0, |l| l.train.len()),
        n_test: ds.letters.first().map_or(0, |l| l.test.len()),
        letters: ds.letters.iter().map(|l| l.letter.clone()).collect(),
    };
    let path = root.join("dataset.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .map_err(|e| DmpError::io(&path, e))?;
    Ok(manifest)
}

/// Reads every letter directory under `root/letters`, sorted by letter.
/// Missing `train`/`test` directories read as empty.
pub fn read_dataset(root: &Path) -> Result<LetterDataset> {
    let letters_root = root.join("letters");
    let mut names: Vec<String> = fs::read_dir(&letters_root)
        .map_err(|e| DmpError::io(&letters_root, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let read_split = |letter: &str, split: &str| -> Result<Vec<Trajectory>> {
        let dir = letter_dir(root, letter, split);
        if dir.is_dir() {
            read_dir_trajectories(&dir)
        } else {
            Ok(Vec::new())
        }
    };
    let letters = names
        .iter()
        .map(|name| {
            Ok(LetterDemos {
                letter: name.clone(),
                train: read_split(name, "train")?,
                test: read_split(name, "test")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = fs::read_to_string(root.join("dataset.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<DatasetManifest>(&t).ok());
    Ok(LetterDataset {
        seed: manifest.as_ref().map_or(0, |m| m.seed),
        variation: manifest.map_or_else(VariationConfig::default, |m| m.variation),
        letters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_two_letters() {
        assert_eq!(letters().len(), 22);
    }

    #[test]
    fn spline_hits_end_points() {
        for l in letters() {
            let c = template(l).unwrap();
            let a = bspline_point(c, 0.0);
            let b = bspline_point(c, 1.0);
            for k in 0..2 {
                assert!((a[k] - c[0][k]).abs() < 1e-12);
                assert!((b[k] - c[c.len() - 1][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn templates_have_net_displacement_on_both_axes() {
        for l in letters() {
            let c = template(l).unwrap();
            let (s, g) = (c[0], c[c.len() - 1]);
            for k in 0..2 {
                assert!((g[k] - s[k]).abs() >= 0.149, "letter {l} axis {k}");
            }
        }
    }

    #[test]
    fn rendered_stroke_starts_and_ends_at_rest() {
        let s = render_letter(
            "a",
            &Variation::none(template("a").unwrap().len()),
            0.01,
            1.0,
        )
        .unwrap();
        assert_eq!(s.len(), 101);
        for (a, b) in [(&s[0], &s[1]), (&s[99], &s[100])] {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-4));
        }
    }

    #[test]
    fn hold_definition() {
        let samples = (0..101).map(|i| vec![i as f64, -(i as f64)]).collect();
        let t = Trajectory::new(0.01, samples, "x", "x0").unwrap();
        let h = apply_perturbation(&t, &PerturbationSpec::hold(0.5, 0.5)).unwrap();
        assert_eq!(&h.samples[..50], &t.samples[..50]);
        assert!(h.samples[50..].iter().all(|r| r == &vec![50.0, -50.0]));
        assert_eq!(h.endpoints().goal, vec![100.0, -100.0]);
        let tiny = apply_perturbation(&t, &PerturbationSpec::hold(0.5, 1e-4)).unwrap();
        assert_eq!(tiny.samples, t.samples);
        let again = apply_perturbation(&h, &PerturbationSpec::hold(0.5, 0.5)).unwrap();
        assert_eq!(again, h);
        assert!(apply_perturbation(&t, &PerturbationSpec::hold(0.7, 0.5)).is_err());
        assert!(apply_perturbation(&t, &PerturbationSpec::hold(0.0, 0.5)).is_err());
    }

    #[test]
    fn partial_hold_leaves_tail() {
        let samples = (0..11).map(|i| vec![i as f64]).collect();
        let t = Trajectory::new(0.1, samples, "x", "x0").unwrap();
        let h = apply_perturbation(&t, &PerturbationSpec::hold(0.2, 0.3)).unwrap();
        let xs: Vec<f64> = h.samples.iter().map(|r| r[0]).collect();
        assert_eq!(
            xs,
            vec![0.0, 1.0, 2.0, 2.0, 2.0, 2.0, 6.0, 7.0, 8.0, 9.0, 10.0]
        );
    }
}
