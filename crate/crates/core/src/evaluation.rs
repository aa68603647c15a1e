//! Mean percentage error, checkpoint and out-of-distribution evaluation, and
//! the diffusion-versus-CMA-ES comparison.
//!
//! MPE is `100/K · Σ_k |g_k − t_k| / t_k`: absolute relative error, so errors
//! of opposite sign never cancel.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cmaes::{optimize, CmaesConfig, SeedResult};
use crate::diffusion::{list_checkpoints, TrainedModel};
use crate::error::{EvalError, Result};
use crate::geometry::{decode, GeometryFile, GeometryVector, GridSpec};
use crate::scattering::{dscs, dscs_batch, AngleGrid, DscsProfile, Illumination};

/// Number of polar points in exported full-angle curves (θ = iπ/180).
pub const FULL_ANGLE_POINTS: usize = 181;

pub fn mpe(generated: &[f64], target: &[f64]) -> Result<f64, EvalError> {
    if generated.len() != target.len() {
        return Err(EvalError::LengthMismatch {
            generated: generated.len(),
            target: target.len(),
        });
    }
    if target.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(index) = target.iter().position(|t| t.is_nan() || *t <= 0.0) {
        return Err(EvalError::ZeroTarget { index });
    }
    let sum: f64 = generated.iter().zip(target).map(|(g, t)| (g - t).abs() / t).sum();
    Ok(100.0 * sum / target.len() as f64)
}

/// Summary statistics; `std` is the population standard deviation and the
/// quartiles use linear interpolation between order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Result<Summary, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (q1, q3) = (quantile(&sorted, 0.25), quantile(&sorted, 0.75));
    Ok(Summary {
        mean,
        median: quantile(&sorted, 0.5),
        std,
        q1,
        q3,
        iqr: q3 - q1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpeReport {
    pub vectors: Vec<Vec<f64>>,
    pub mpe: Vec<f64>,
    pub summary: Summary,
    pub best_index: usize,
    pub best_vector: Vec<f64>,
}

impl MpeReport {
    pub fn new(vectors: Vec<Vec<f64>>, mpe: Vec<f64>) -> Result<Self, EvalError> {
        if vectors.len() != mpe.len() {
            return Err(EvalError::LengthMismatch {
                generated: vectors.len(),
                target: mpe.len(),
            });
        }
        let summary = summarize(&mpe)?;
        let best_index = mpe
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("non-empty");
        Ok(Self {
            best_vector: vectors[best_index].clone(),
            vectors,
            mpe,
            summary,
            best_index,
        })
    }

    pub fn best_mpe(&self) -> f64 {
        self.mpe[self.best_index]
    }
}

/// Solves every design and scores it against the target.
pub fn score_designs(designs: &[GeometryVector], target: &DscsProfile, ill: &Illumination) -> Result<MpeReport> {
    let mut mpes = Vec::with_capacity(designs.len());
    for profile in dscs_batch(designs, ill, &target.angles) {
        mpes.push(mpe(&profile?.values, &target.values)?);
    }
    Ok(MpeReport::new(
        designs.iter().map(|d| d.values().to_vec()).collect(),
        mpes,
    )?)
}

/// SHA-256 over the little-endian bytes of the polar angles followed by the values.
pub fn target_hash(target: &DscsProfile) -> String {
    let mut h = Sha256::new();
    for v in target.angles.polar_angles.iter().chain(&target.values) {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DscsTargetFile {
    dscs: Vec<f64>,
    #[serde(default)]
    polar_angles: Option<Vec<f64>>,
}

/// A target given either directly as DSCS values or as a geometry whose DSCS is the target.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    Dscs {
        values: Vec<f64>,
        polar_angles: Option<Vec<f64>>,
    },
    Geometry(GeometryVector),
}

impl TargetSpec {
    /// Accepts `{"dscs": [...], "polar_angles"?: [...]}` or a geometry file.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| EvalError::Target(e.to_string()))?;
        if value.get("dscs").is_some() {
            let f: DscsTargetFile = serde_json::from_value(value).map_err(|e| EvalError::Target(e.to_string()))?;
            if f.dscs.is_empty() || f.dscs.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(EvalError::Target("DSCS values must be finite and positive".into()));
            }
            if f.polar_angles.as_ref().is_some_and(|a| a.len() != f.dscs.len()) {
                return Err(EvalError::Target("polar_angles and dscs lengths differ".into()));
            }
            Ok(Self::Dscs {
                values: f.dscs,
                polar_angles: f.polar_angles,
            })
        } else {
            let f: GeometryFile = serde_json::from_value(value).map_err(|e| EvalError::Target(e.to_string()))?;
            f.into_vector()
                .map(Self::Geometry)
                .map_err(|e| EvalError::Target(e.to_string()))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?)?)
    }

    /// Target profile on `angles`; geometry targets are solved under `ill`.
    pub fn resolve(&self, grid: &GridSpec, angles: &AngleGrid, ill: &Illumination) -> Result<DscsProfile> {
        match self {
            Self::Dscs { values, polar_angles } => {
                if values.len() != angles.len() {
                    return Err(EvalError::Target(format!(
                        "target has {} values, model uses {} angles",
                        values.len(),
                        angles.len()
                    ))
                    .into());
                }
                if let Some(pa) = polar_angles {
                    if pa.iter().zip(&angles.polar_angles).any(|(a, b)| (a - b).abs() > 1e-12) {
                        return Err(EvalError::Target("target polar angles differ from the model's".into()).into());
                    }
                }
                Ok(DscsProfile::new(values.clone(), angles.clone())?)
            }
            Self::Geometry(v) => {
                if v.grid() != grid {
                    return Err(EvalError::Target("target geometry grid differs from the model's".into()).into());
                }
                Ok(dscs(&decode(v), ill, angles)?)
            }
        }
    }

    pub fn geometry(&self) -> Option<&GeometryVector> {
        match self {
            Self::Geometry(v) => Some(v),
            Self::Dscs { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub step: u64,
    pub report: MpeReport,
}

/// Samples `n` designs per checkpoint (same seed for every checkpoint) and scores them.
pub fn checkpoint_eval(
    checkpoints: &[PathBuf],
    target: &TargetSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<CheckpointRow>> {
    if checkpoints.is_empty() {
        return Err(EvalError::Empty.into());
    }
    let mut rows = Vec::with_capacity(checkpoints.len());
    for path in checkpoints {
        let model = TrainedModel::load(path)?;
        let profile = target.resolve(&model.meta.grid, &model.meta.angles, &model.meta.illumination)?;
        let designs = model.sample(&profile.values, n, seed)?;
        rows.push(CheckpointRow {
            step: model.meta.step,
            report: score_designs(&designs, &profile, &model.meta.illumination)?,
        });
    }
    Ok(rows)
}

/// All checkpoints of a training directory in step order.
pub fn checkpoints_in(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(list_checkpoints(dir)?.into_iter().map(|(_, p)| p).collect())
}

/// `step,mean,median,std`.
pub fn checkpoint_csv(rows: &[CheckpointRow]) -> String {
    let mut out = String::from("step,mean,median,std\n");
    for r in rows {
        let s = &r.report.summary;
        out += &format!("{},{},{},{}\n", r.step, s.mean, s.median, s.std);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullAngleCurves {
    pub polar_angles: Vec<f64>,
    pub best: Vec<f64>,
    /// Present when the target came from a geometry.
    pub target: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub checkpoint_step: u64,
    pub seed: u64,
    pub target: DscsProfile,
    pub target_hash: String,
    pub target_geometry: Option<GeometryFile>,
    pub report: MpeReport,
    pub best_geometry: GeometryFile,
    pub best_dscs: Vec<f64>,
    pub full_angle: FullAngleCurves,
    pub wall_clock_s: f64,
    pub per_design_wall_clock_s: f64,
}

fn full_angle_curve(v: &GeometryVector, ill: &Illumination, azimuth: usize) -> Result<Vec<f64>> {
    let grid = AngleGrid::full_range(FULL_ANGLE_POINTS, azimuth);
    Ok(dscs(&decode(v), ill, &grid)?.values)
}

/// Samples `n` candidates for one target and scores them. Wall-clock covers
/// sampling plus solving and excludes training.
pub fn ood_eval(model: &TrainedModel, target: &TargetSpec, n: usize, seed: u64) -> Result<OodReport> {
    let ill = &model.meta.illumination;
    let profile = target.resolve(&model.meta.grid, &model.meta.angles, ill)?;
    let started = Instant::now();
    let designs = model.sample(&profile.values, n, seed)?;
    let report = score_designs(&designs, &profile, ill)?;
    let wall = started.elapsed().as_secs_f64();
    let best = &designs[report.best_index];
    let best_dscs = dscs(&decode(best), ill, &profile.angles)?.values;
    let azimuth = profile.angles.azimuth_samples;
    let full_angle = FullAngleCurves {
        polar_angles: AngleGrid::full_range(FULL_ANGLE_POINTS, azimuth).polar_angles,
        best: full_angle_curve(best, ill, azimuth)?,
        target: target
            .geometry()
            .map(|g| full_angle_curve(g, ill, azimuth))
            .transpose()?,
    };
    Ok(OodReport {
        checkpoint_step: model.meta.step,
        seed,
        target_hash: target_hash(&profile),
        target: profile,
        target_geometry: target.geometry().map(GeometryFile::from_vector),
        best_geometry: GeometryFile::from_vector(best),
        best_dscs,
        report,
        full_angle,
        wall_clock_s: wall,
        per_design_wall_clock_s: wall / n as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub best_mpe: f64,
    pub solver_calls: u64,
    pub wall_clock_s: f64,
    pub per_design_s: f64,
    pub train_s: Option<f64>,
    pub seed: u64,
    pub target_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub diffusion: ComparisonRow,
    pub cmaes: ComparisonRow,
    pub ood: OodReport,
    pub cmaes_runs: Vec<SeedResult>,
}

/// Runs best-of-`n` diffusion sampling and multi-seed CMA-ES on one target.
///
/// Diffusion solver calls count the training dataset (a one-time cost) plus
/// the `n` evaluations; CMA-ES counts every objective evaluation.
pub fn compare(
    model: &TrainedModel,
    target: &TargetSpec,
    n: usize,
    seed: u64,
    cmaes: &CmaesConfig,
    train_s: Option<f64>,
) -> Result<Comparison> {
    let ood = ood_eval(model, target, n, seed)?;
    let started = Instant::now();
    let runs = optimize(&ood.target, &model.meta.grid, &model.meta.illumination, cmaes)?;
    let cmaes_wall = started.elapsed().as_secs_f64();
    let best_run = runs
        .iter()
        .min_by(|a, b| a.best_value.total_cmp(&b.best_value))
        .expect("at least one seed");
    let diffusion = ComparisonRow {
        method: "diffusion".into(),
        best_mpe: ood.report.best_mpe(),
        solver_calls: (model.meta.dataset_size + n) as u64,
        wall_clock_s: ood.wall_clock_s,
        per_design_s: ood.per_design_wall_clock_s,
        train_s,
        seed,
        target_hash: ood.target_hash.clone(),
    };
    let cmaes_row = ComparisonRow {
        method: "cmaes".into(),
        best_mpe: best_run.best_value,
        solver_calls: runs.iter().map(|r| r.evals).sum(),
        wall_clock_s: cmaes_wall,
        per_design_s: cmaes_wall / runs.len() as f64,
        train_s: None,
        seed: best_run.seed,
        target_hash: target_hash(&ood.target),
    };
    Ok(Comparison {
        diffusion,
        cmaes: cmaes_row,
        ood,
        cmaes_runs: runs,
    })
}

/// `method,best_mpe,solver_calls,wall_clock_s,per_design_s,train_s,seed,target_hash`.
pub fn comparison_csv(c: &Comparison) -> String {
    let mut out = String::from("method,best_mpe,solver_calls,wall_clock_s,per_design_s,train_s,seed,target_hash\n");
    for r in [&c.diffusion, &c.cmaes] {
        out += &format!(
            "{},{},{},{},{},{},{},{}\n",
            r.method,
            r.best_mpe,
            r.solver_calls,
            r.wall_clock_s,
            r.per_design_s,
            r.train_s.map(|t| t.to_string()).unwrap_or_default(),
            r.seed,
            r.target_hash
        );
    }
    out
}
