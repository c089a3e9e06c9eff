//! Uniformly sampled multi-DOF trajectories and their on-disk format: a CSV
//! file with header `t,x,y[,...]` plus a JSON sidecar holding metadata.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DmpError, Result};
use crate::model::Provenance;

pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;

/// Intended start and goal of an execution, when they differ from the
/// recorded endpoints (e.g. a blocked movement never reaches its goal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoints {
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    /// `T` rows of `D` positions.
    pub samples: Vec<Vec<f64>>,
    pub velocities: Option<Vec<Vec<f64>>>,
    pub accelerations: Option<Vec<Vec<f64>>>,
    pub label: String,
    pub demo_id: String,
    pub task: Option<Endpoints>,
}

impl Trajectory {
    pub fn new(
        dt: f64,
        samples: Vec<Vec<f64>>,
        label: impl Into<String>,
        demo_id: impl Into<String>,
    ) -> Result<Self> {
        let traj = Trajectory {
            dt,
            samples,
            velocities: None,
            accelerations: None,
            label: label.into(),
            demo_id: demo_id.into(),
            task: None,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DmpError::arg(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.samples.len() < 3 {
            return Err(DmpError::arg(format!(
                "trajectory needs at least 3 samples, got {}",
                self.samples.len()
            )));
        }
        let d = self.n_dofs();
        if d == 0 {
            return Err(DmpError::arg("trajectory has no degrees of freedom"));
        }
        for (i, row) in self.samples.iter().enumerate() {
            if row.len() != d {
                return Err(DmpError::arg(format!(
                    "row {i} has {} values, expected {d}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(DmpError::arg(format!(
                    "row {i} contains a non-finite value"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_dofs(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn duration(&self) -> f64 {
        (self.len().saturating_sub(1)) as f64 * self.dt
    }

    /// Positions of one DOF over time.
    pub fn dof(&self, d: usize) -> Vec<f64> {
        self.samples.iter().map(|row| row[d]).collect()
    }

    /// Intended endpoints, falling back to the first and last samples.
    pub fn endpoints(&self) -> Endpoints {
        self.task.clone().unwrap_or_else(|| Endpoints {
            start: self.samples[0].clone(),
            goal: self.samples[self.len() - 1].clone(),
        })
    }

    /// Linear interpolation of the positions at time `t`, clamped to the
    /// recorded interval.
    pub fn position_at(&self, t: f64) -> Vec<f64> {
        let last = self.len() - 1;
        let u = (t / self.dt).clamp(0.0, last as f64);
        let i = (u.floor() as usize).min(last);
        if i == last {
            return self.samples[last].clone();
        }
        let frac = u - i as f64;
        self.samples[i]
            .iter()
            .zip(&self.samples[i + 1])
            .map(|(a, b)| a + frac * (b - a))
            .collect()
    }

    /// Time-rescales to `duration` and resamples to `n` uniform samples.
    /// Derivative channels are dropped.
    pub fn resampled(&self, duration: f64, n: usize) -> Result<Trajectory> {
        if n < 3 {
            return Err(DmpError::arg("resampling needs at least 3 samples"));
        }
        let dt = duration / (n - 1) as f64;
        if n == self.len() && dt == self.dt {
            let mut same = self.clone();
            same.velocities = None;
            same.accelerations = None;
            return Ok(same);
        }
        let scale = self.duration() / duration;
        let samples = (0..n)
            .map(|k| self.position_at(k as f64 * dt * scale))
            .collect();
        Ok(Trajectory {
            dt,
            samples,
            velocities: None,
            accelerations: None,
            label: self.label.clone(),
            demo_id: self.demo_id.clone(),
            task: self.task.clone(),
        })
    }
}

/// Metadata stored next to each trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub label: String,
    pub demo_id: String,
    pub dt: f64,
    pub n_samples: usize,
    pub n_dofs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Endpoints>,
}

fn dof_name(d: usize) -> String {
    match d {
        0 => "x".into(),
        1 => "y".into(),
        2 => "z".into(),
        _ => format!("q{d}"),
    }
}

pub fn csv_header(n_dofs: usize) -> String {
    std::iter::once("t".to_string())
        .chain((0..n_dofs).map(dof_name))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn to_csv_string(traj: &Trajectory) -> String {
    let mut out = csv_header(traj.n_dofs());
    out.push('\n');
    for (i, row) in traj.samples.iter().enumerate() {
        out.push_str(&format!("{}", i as f64 * traj.dt));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Writes `<path>` (CSV) and its sidecar.
pub fn write_trajectory(path: &Path, traj: &Trajectory, provenance: &Provenance) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| DmpError::io(dir, e))?;
    }
    fs::write(path, to_csv_string(traj)).map_err(|e| DmpError::io(path, e))?;
    let meta = Sidecar {
        format_version: TRAJECTORY_FORMAT_VERSION,
        label: traj.label.clone(),
        demo_id: traj.demo_id.clone(),
        dt: traj.dt,
        n_samples: traj.len(),
        n_dofs: traj.n_dofs(),
        seed: provenance.seed,
        config_hash: provenance.config_hash.clone(),
        task: traj.task.clone(),
    };
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(&meta)? + "\n")
        .map_err(|e| DmpError::io(&side, e))?;
    Ok(())
}

/// Parses the CSV body. `dt` is taken from the time column, which must be
/// uniform.
pub fn parse_csv(text: &str, path_label: &str) -> Result<Trajectory> {
    let perr = |row: usize, column: usize, message: String| DmpError::Parse {
        path: path_label.to_string(),
        row,
        column,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| perr(1, 1, e.to_string()))?
        .clone();
    if header.len() < 2 || &header[0] != "t" {
        return Err(perr(
            1,
            1,
            "header must start with `t` followed by at least one DOF column".into(),
        ));
    }
    let n_dofs = header.len() - 1;
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| perr(row, 1, e.to_string()))?;
        if rec.len() != n_dofs + 1 {
            return Err(perr(
                row,
                rec.len().min(n_dofs + 1),
                format!("expected {} columns, found {}", n_dofs + 1, rec.len()),
            ));
        }
        let mut vals = Vec::with_capacity(n_dofs + 1);
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| perr(row, j + 1, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(perr(row, j + 1, "non-finite value".into()));
            }
            vals.push(v);
        }
        times.push(vals[0]);
        samples.push(vals[1..].to_vec());
    }
    if samples.len() < 3 {
        return Err(perr(
            samples.len() + 1,
            1,
            format!("need at least 3 samples, found {}", samples.len()),
        ));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(perr(3, 1, "time column must be increasing".into()));
    }
    for (i, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.max(1.0) {
            return Err(perr(
                i + 3,
                1,
                "time column is not uniformly sampled".into(),
            ));
        }
    }
    Ok(Trajectory {
        dt,
        samples,
        velocities: None,
        accelerations: None,
        label: String::new(),
        demo_id: String::new(),
        task: None,
    })
}

/// Reads a trajectory CSV and, when present, its sidecar.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path).map_err(|e| DmpError::io(path, e))?;
    let mut traj = parse_csv(&text, &path.display().to_string())?;
    let side = sidecar_path(path);
    if side.exists() {
        let meta_text = fs::read_to_string(&side).map_err(|e| DmpError::io(&side, e))?;
        let meta: Sidecar = serde_json::from_str(&meta_text)?;
        traj.label = meta.label;
        traj.demo_id = meta.demo_id;
        traj.dt = meta.dt;
        traj.task = meta.task;
    } else {
        traj.demo_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(traj)
}

/// All `*.csv` files of a directory, sorted by name.
pub fn list_csv(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| DmpError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn read_dir_trajectories(dir: &Path) -> Result<Vec<Trajectory>> {
    list_csv(dir)?.iter().map(|p| read_trajectory(p)).collect()
}
