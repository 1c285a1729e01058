//! Registration error metric and the evaluation protocols: viewpoint sweeps
//! over a held-out instance and the pose-noise study.

use std::fmt;
use std::path::Path;

use nalgebra::{Translation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpd::{cpd_nonrigid, CpdConfig};
use crate::error::{Error, Result};
use crate::geometry::{voxel_downsample, CameraView, Point, PointCloud, Pose};
use crate::io::write_atomic;
use crate::oracle::OracleSpec;
use crate::pipeline::{derive_seed, Model, Registrar};
use crate::spatial::KdTree;

/// Mean over `t` of the squared distance to the nearest point of `c`
/// (squared meters). Not symmetric.
///
/// Panics if either set is empty.
pub fn registration_error(t: &[Point], c: &[Point]) -> f64 {
    assert!(!t.is_empty(), "registration error of an empty set");
    let tree = KdTree::build(c);
    t.iter().map(|p| tree.nearest(p).1).sum::<f64>() / t.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    OraclePipeline,
    RawCpdBaseline,
    CanonicalBaseline,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::OraclePipeline => "oracle-pipeline",
            Condition::RawCpdBaseline => "raw-cpd-baseline",
            Condition::CanonicalBaseline => "canonical-baseline",
        })
    }
}

/// Aggregate over the successful views of one instance under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub instance: String,
    pub condition: Condition,
    pub n_views: usize,
    pub n_failed: usize,
    pub mean: f64,
    /// Population standard deviation of `per_view`.
    pub std: f64,
    pub per_view: Vec<f64>,
    /// More than 5% of the views failed.
    pub flagged: bool,
}

impl EvalRow {
    pub fn from_errors(instance: &str, condition: Condition, per_view: Vec<f64>, n_failed: usize) -> Self {
        let n = per_view.len();
        let mean = if n == 0 { f64::NAN } else { per_view.iter().sum::<f64>() / n as f64 };
        let std = if n == 0 {
            f64::NAN
        } else {
            (per_view.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
        };
        Self {
            instance: instance.to_string(),
            condition,
            n_views: n,
            n_failed,
            mean,
            std,
            flagged: n_failed * 20 > n + n_failed,
            per_view,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, instance: &str, condition: Condition) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.instance == instance && r.condition == condition)
    }

    /// CSV with columns `instance,condition,n_views,mean,std`. `factor`
    /// multiplies the error columns (1e6 gives the micro-unit display).
    pub fn to_csv(&self, factor: f64) -> String {
        let mut out = String::from("instance,condition,n_views,mean,std\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{:e},{:e}\n", r.instance, r.condition, r.n_views, r.mean * factor, r.std * factor));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    pub fn write(&self, stem: &Path, factor: f64) -> Result<()> {
        write_atomic(&stem.with_extension("csv"), self.to_csv(factor).as_bytes())?;
        write_atomic(&stem.with_extension("json"), self.to_json().as_bytes())
    }
}

/// A held-out instance: renderable model, the cloud used for scoring and for
/// the ground-truth registration (both in the object frame), and its pose.
#[derive(Debug, Clone)]
pub struct Subject {
    pub name: String,
    pub model: Model,
    pub cloud: PointCloud,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub cpd: CpdConfig,
    /// Also score CPD on the partial view cloud (slow).
    pub cpd_baseline: bool,
    /// Voxel leaf for the partial view cloud of the CPD baseline.
    pub baseline_leaf: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cpd: CpdConfig::default(),
            cpd_baseline: true,
            baseline_leaf: 0.1,
            seed: 0,
        }
    }
}

struct ViewScores {
    pipeline: f64,
    canonical: f64,
    cpd: Option<f64>,
}

fn score_view(
    registrar: &Registrar,
    subject: &Subject,
    scoring: &[Point],
    view: &CameraView,
    believed: &Pose,
    oracle: &OracleSpec,
    truth: Option<&crate::imaging::RbfCoefficients>,
    config: &EvalConfig,
    seed: u64,
) -> Result<ViewScores> {
    let observed = subject.model.render(&subject.pose, view, &registrar.config().splat, derive_seed(seed, &[0]))?;
    let outcome = registrar.register_view(&observed, view, believed, oracle, truth, seed)?;
    let placed: Vec<Point> = registrar.space().canonical().points().iter().map(|p| believed * p).collect();
    let cpd = if config.cpd_baseline {
        let partial = PointCloud::new(observed.foreground().map(|(_, p)| p).collect())?;
        let partial = voxel_downsample(&partial, config.baseline_leaf)?;
        let fit = cpd_nonrigid(&partial, &PointCloud::new(placed.clone())?, &config.cpd)?;
        Some(registration_error(scoring, fit.transformed()?.points()))
    } else {
        None
    };
    Ok(ViewScores {
        pipeline: registration_error(scoring, &outcome.reconstruction),
        canonical: registration_error(scoring, &placed),
        cpd,
    })
}

fn run(
    registrar: &Registrar,
    subject: &Subject,
    tasks: &[(usize, Pose, u64)],
    views: &[CameraView],
    oracle: &OracleSpec,
    config: &EvalConfig,
) -> Result<Vec<EvalRow>> {
    let truth = if oracle.needs_target() {
        let fit = cpd_nonrigid(&subject.cloud, registrar.space().canonical(), &config.cpd)?;
        Some(registrar.ground_truth(&fit.field)?)
    } else {
        None
    };
    let scoring: Vec<Point> = subject.cloud.points().iter().map(|p| subject.pose * p).collect();
    let results: Vec<Result<ViewScores>> = tasks
        .par_iter()
        .map(|(v, believed, seed)| score_view(registrar, subject, &scoring, &views[*v], believed, oracle, truth.as_ref(), config, *seed))
        .collect();

    let mut pipeline = Vec::new();
    let mut canonical = Vec::new();
    let mut cpd = Vec::new();
    let mut failed = 0;
    for (r, (v, _, _)) in results.into_iter().zip(tasks) {
        match r {
            Ok(s) => {
                pipeline.push(s.pipeline);
                canonical.push(s.canonical);
                cpd.extend(s.cpd);
            }
            Err(e) => {
                log::warn!("{}: view {v} failed: {e}", subject.name);
                failed += 1;
            }
        }
    }
    if pipeline.is_empty() {
        return Err(Error::InvalidInput(format!("{}: every view failed", subject.name)));
    }
    let mut rows = vec![
        EvalRow::from_errors(&subject.name, Condition::OraclePipeline, pipeline, failed),
        EvalRow::from_errors(&subject.name, Condition::CanonicalBaseline, canonical, failed),
    ];
    if config.cpd_baseline {
        rows.push(EvalRow::from_errors(&subject.name, Condition::RawCpdBaseline, cpd, failed));
    }
    Ok(rows)
}

/// Registers `subject` from every view with the believed pose equal to the
/// true one, scoring the pipeline, the undeformed canonical model and
/// (optionally) CPD on the partial view cloud.
pub fn evaluate_instance(registrar: &Registrar, subject: &Subject, views: &[CameraView], oracle: &OracleSpec, config: &EvalConfig) -> Result<Vec<EvalRow>> {
    let tasks: Vec<(usize, Pose, u64)> = (0..views.len())
        .map(|v| (v, subject.pose, derive_seed(config.seed, &[v as u64])))
        .collect();
    run(registrar, subject, &tasks, views, oracle, config)
}

/// Like [`evaluate_instance`], but for each of `draws` repetitions every
/// view's believed pose is the true pose shifted by a translation drawn
/// uniformly from `[-noise_range, noise_range]^3`. The canonical model is
/// rendered and the reconstruction placed at the believed pose. With
/// `noise_range = 0` all draws would coincide, so a single one is run.
pub fn pose_noise_experiment(
    registrar: &Registrar,
    subject: &Subject,
    views: &[CameraView],
    oracle: &OracleSpec,
    config: &EvalConfig,
    noise_range: f64,
    draws: usize,
) -> Result<Vec<EvalRow>> {
    if !(noise_range >= 0.0 && noise_range.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise range must be nonnegative, got {noise_range}")));
    }
    if draws == 0 {
        return Err(Error::InvalidConfig("at least one noise draw is needed".into()));
    }
    if noise_range == 0.0 {
        return evaluate_instance(registrar, subject, views, oracle, config);
    }
    let mut tasks = Vec::with_capacity(draws * views.len());
    for d in 0..draws {
        for v in 0..views.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x706f_7365, d as u64, v as u64]));
            let t = Vector3::from_fn(|_, _| rng.random_range(-noise_range..=noise_range));
            tasks.push((v, Translation3::from(t) * subject.pose, derive_seed(config.seed, &[v as u64])));
        }
    }
    run(registrar, subject, &tasks, views, oracle, config)
}
