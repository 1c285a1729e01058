//! Acceptance criteria. Runs as a plain binary so that every criterion
//! prints a PASS/FAIL line; exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use morphfield::completion::{Completer, SparseDeltas};
use morphfield::cpd::{cpd_nonrigid, CpdConfig};
use morphfield::dataset::{category_sample_count, generate_dataset, read_manifest, CategorySpec, DatasetConfig};
use morphfield::evaluation::{evaluate_instance, pose_noise_experiment, registration_error, Condition, EvalConfig, Subject};
use morphfield::geometry::{flatten_rows, Intrinsics};
use morphfield::imaging::{rasterize_target, PositionImage, SplatConfig};
use morphfield::oracle::OracleSpec;
use morphfield::pipeline::{Model, PipelineConfig, Registrar};
use morphfield::shape_space::{build_shape_space, LatentVector, ShapeSpace};
use morphfield::synthetic::{SyntheticCategory, SyntheticConfig};
use morphfield::{apply_deformation, expand_kernel, gaussian_kernel, viewpoint_sphere, KernelParams, Point, PointCloud, Pose};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SELF_REG_W_MAX: f64 = 1e-6;
const SELF_REG_ERROR_MAX: f64 = 1e-10;
const SELF_REG_TIME: Duration = Duration::from_secs(1);
const RECOVERY_FIELD_INF_NORM: f64 = 0.1;
const RECOVERY_RATIO_MAX: f64 = 0.05;
const RECOVERY_TIME: Duration = Duration::from_secs(10);
const SPACE_RESIDUAL_MAX: f64 = 1e-8;
const FULL_VIS_LATENT_ERROR_MAX: f64 = 1e-6;
const HALF_OCCLUSION_REL_ERROR_MAX: f64 = 0.05;
const END_TO_END_VIEWS: usize = 20;
const SYNTHETIC_AMPLITUDE: f64 = 0.3;
const SYNTHETIC_LEAF: f64 = 0.3;
const BASELINE_LEAF: f64 = 0.15;
const POSE_NOISE_RANGE: f64 = 0.05;
const POSE_NOISE_DRAWS: usize = 5;
const KERNEL_TOL: f64 = 1e-15;
const RBF_LINEAR_TOL: f64 = 1e-6;
const SUITE_TIME: Duration = Duration::from_secs(60);

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_cloud(n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect(),
    )
    .unwrap()
}

fn sphere_cloud(n: usize) -> PointCloud {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    PointCloud::new(
        (0..n)
            .map(|k| {
                let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let t = golden * k as f64;
                Point::new(r * t.cos(), r * t.sin(), z)
            })
            .collect(),
    )
    .unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_cloud(100, &mut rng);
    let start = Instant::now();
    let r = cpd_nonrigid(&x, &x, &CpdConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let w = r.field.weights().amax();
    let e = registration_error(x.points(), r.transformed().unwrap().points());
    check(
        w < SELF_REG_W_MAX && e < SELF_REG_ERROR_MAX && elapsed < SELF_REG_TIME,
        format!("|W|inf = {w:.2e}, E = {e:.2e}, {elapsed:.2?}"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y = sphere_cloud(200);
    let params = KernelParams::new(2.0).unwrap();
    let mut w = DMatrix::from_fn(200, 3, |_, _| rng.random_range(-1.0..1.0));
    w *= RECOVERY_FIELD_INF_NORM / w.amax();
    let g = gaussian_kernel(y.points(), y.points(), params).unwrap();
    let d = &g * &w;
    let x = PointCloud::new(
        y.points()
            .iter()
            .enumerate()
            .map(|(i, p)| p + Vector3::new(d[(i, 0)], d[(i, 1)], d[(i, 2)]))
            .collect(),
    )
    .unwrap();
    let before = registration_error(x.points(), y.points());
    let start = Instant::now();
    let r = cpd_nonrigid(&x, &y, &CpdConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let after = registration_error(x.points(), r.transformed().unwrap().points());
    let ratio = after / before;
    check(
        ratio <= RECOVERY_RATIO_MAX && elapsed < RECOVERY_TIME,
        format!("E before {before:.3e}, after {after:.3e}, ratio {ratio:.4}, {} iterations, {elapsed:.2?}", r.iterations),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c = random_cloud(30, &mut rng);
    let rand_w = |rng: &mut ChaCha8Rng| DMatrix::from_fn(30, 3, |_, _| rng.random_range(-0.1..0.1));
    let base = rand_w(&mut rng);
    let modes = [rand_w(&mut rng), rand_w(&mut rng)];
    let fields: Vec<DMatrix<f64>> = (0..6)
        .map(|_| &base + &modes[0] * rng.random_range(-1.0..1.0) + &modes[1] * rng.random_range(-1.0..1.0))
        .collect();
    let s = ShapeSpace::from_fields(c, KernelParams::new(2.0).unwrap(), &fields, 2).map_err(|e| e.to_string())?;
    let worst = fields
        .iter()
        .map(|f| {
            let w = flatten_rows(f);
            let x = s.basis().transpose() * (&w - s.mean());
            (s.basis() * x + s.mean() - &w).norm() / w.norm()
        })
        .fold(0.0, f64::max);
    check(worst < SPACE_RESIDUAL_MAX, format!("worst relative residual {worst:.2e}"))
}

/// Jittered grid with a kernel narrow relative to the spacing, so the
/// completion system is well conditioned.
fn conditioned_space(seed: u64, l: usize) -> ShapeSpace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    for x in 0..6 {
        for y in 0..5 {
            for z in 0..4 {
                pts.push(Point::new(
                    x as f64 * 0.5 + rng.random_range(-0.05..0.05),
                    y as f64 * 0.5 + rng.random_range(-0.05..0.05),
                    z as f64 * 0.5 + rng.random_range(-0.05..0.05),
                ));
            }
        }
    }
    let n = pts.len();
    let basis = DMatrix::from_fn(3 * n, l, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    let mean = DVector::from_fn(3 * n, |_, _| rng.random_range(-0.02..0.02));
    ShapeSpace::from_parts(PointCloud::new(pts).unwrap(), KernelParams::new(0.4).unwrap(), mean, basis).unwrap()
}

fn criterion_4() -> Outcome {
    let s = conditioned_space(4, 5);
    let c = Completer::new(&s).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = LatentVector(DVector::from_fn(5, |_, _| rng.random_range(-0.1..0.1)));
    let deltas = c.deltas_of_latent(&x0).map_err(|e| e.to_string())?;
    let n = deltas.nrows();
    let full = c.fit(&SparseDeltas::full(deltas.clone()).unwrap(), 0.0).map_err(|e| e.to_string())?;
    let full_err = (&full.latent.0 - &x0.0).norm();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.truncate(n / 2);
    let half = c.fit(&SparseDeltas::subset(&deltas, idx).unwrap(), 0.0).map_err(|e| e.to_string())?;
    let rel = (&half.latent.0 - &x0.0).norm() / x0.0.norm();
    check(
        full_err < FULL_VIS_LATENT_ERROR_MAX && rel < HALF_OCCLUSION_REL_ERROR_MAX,
        format!("full visibility |x*-x0| = {full_err:.2e}; 50% occlusion relative error {rel:.2e}"),
    )
}

/// Synthetic category with a shape space built by CPD from its training
/// instances, plus a held-out instance from the same family.
struct Setup {
    category: SyntheticCategory,
    space: ShapeSpace,
    held_out: Subject,
    /// Error of the canonical cloud moved by the held-out instance's exact field.
    floor: f64,
}

fn setup() -> Result<Setup, String> {
    let config = SyntheticConfig {
        amplitude: SYNTHETIC_AMPLITUDE,
        leaf: SYNTHETIC_LEAF,
        seed: 7,
        ..SyntheticConfig::default()
    };
    let category = SyntheticCategory::generate(config, 8).map_err(|e| e.to_string())?;
    let clouds: Vec<PointCloud> = category.instances.iter().map(|i| i.cloud.clone()).collect();
    let (space, _) = build_shape_space(&category.canonical, &clouds, &CpdConfig::default(), 3).map_err(|e| e.to_string())?;
    let held = category.instance(&[0.9, -0.8, 0.7], 999).map_err(|e| e.to_string())?;
    let exact = apply_deformation(category.canonical.points(), &held.field).map_err(|e| e.to_string())?;
    let floor = registration_error(held.cloud.points(), &exact);
    let held_out = Subject {
        name: "held-out".into(),
        model: Model::Mesh(held.mesh),
        cloud: held.cloud,
        pose: Pose::identity(),
    };
    Ok(Setup { category, space, held_out, floor })
}

fn pipeline_config() -> PipelineConfig {
    PipelineConfig {
        zoom: (96, 72),
        splat: SplatConfig::default(),
        ..PipelineConfig::default()
    }
}

fn eval_config(cpd_baseline: bool) -> EvalConfig {
    EvalConfig {
        cpd_baseline,
        baseline_leaf: BASELINE_LEAF,
        ..EvalConfig::default()
    }
}

fn views(count: usize) -> Vec<morphfield::CameraView> {
    viewpoint_sphere(count, 5.0, Intrinsics::with_vertical_fov(160, 120, 45.0)).unwrap()
}

fn criterion_5(s: &Setup) -> Outcome {
    let registrar = Registrar::new(&s.space, Model::Mesh(s.category.canonical_mesh.clone()), pipeline_config()).map_err(|e| e.to_string())?;
    let rows = evaluate_instance(&registrar, &s.held_out, &views(END_TO_END_VIEWS), &OracleSpec::ground_truth(), &eval_config(true))
        .map_err(|e| e.to_string())?;
    let get = |c| rows.iter().find(|r| r.condition == c).unwrap();
    let (p, can, cpd) = (get(Condition::OraclePipeline), get(Condition::CanonicalBaseline), get(Condition::RawCpdBaseline));
    check(
        p.n_views >= END_TO_END_VIEWS && p.mean < can.mean && p.mean < cpd.mean,
        format!(
            "{} views: pipeline {:.3e} (sd {:.1e}) < canonical {:.3e}, raw CPD {:.3e}; exact-field floor {:.3e}",
            p.n_views, p.mean, p.std, can.mean, cpd.mean, s.floor
        ),
    )
}

fn criterion_6(s: &Setup) -> Outcome {
    let expected = [(12, 2664), (15, 3552), (14, 3256), (16, 3848)];
    for (size, count) in expected {
        if category_sample_count(size, 4, 74) != count {
            return Err(format!("({size} - 3) x 4 x 74 != {count}"));
        }
    }
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = DatasetConfig {
        rhos: vec![0.25],
        views: 2,
        intrinsics: Intrinsics::with_vertical_fov(64, 48, 45.0),
        zoom: (32, 24),
        splat: SplatConfig {
            density: 4.0,
            ..SplatConfig::default()
        },
        ..DatasetConfig::default()
    };
    let mut found = Vec::new();
    for (size, _) in expected {
        let k = size - 3;
        let instances: Vec<_> = (0..k)
            .map(|i| {
                let coeffs: Vec<f64> = (0..3).map(|m| ((i * 3 + m) as f64 * 0.37).sin()).collect();
                s.category.instance(&coeffs, 100 + i as u64)
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let spec = CategorySpec::new(
            s.category.canonical_mesh.clone(),
            s.category.canonical.clone(),
            instances.iter().map(|i| i.mesh.clone()).collect(),
            instances.iter().map(|i| i.cloud.clone()).collect(),
            instances.iter().map(|i| i.field.clone()).collect(),
        )
        .map_err(|e| e.to_string())?;
        let out = root.path().join(format!("size{size}"));
        generate_dataset(&spec, &config, &out).map_err(|e| e.to_string())?;
        let records = read_manifest(&out.join("manifest.jsonl")).map_err(|e| e.to_string())?;
        let ok = records.iter().filter(|r| r.skipped.is_none()).count();
        let formula = category_sample_count(size, config.rhos.len(), config.views);
        if ok != formula || records.len() != formula {
            return Err(format!("size {size}: manifest has {ok} samples, formula gives {formula}"));
        }
        found.push(ok);
    }
    check(true, format!("2664/3552/3256/3848 reproduced; miniature manifests {found:?}"))
}

fn criterion_7(s: &Setup) -> Outcome {
    let registrar = Registrar::new(&s.space, Model::Mesh(s.category.canonical_mesh.clone()), pipeline_config()).map_err(|e| e.to_string())?;
    let config = eval_config(false);
    let v = views(END_TO_END_VIEWS);
    let oracle = OracleSpec::ground_truth();
    let clean = pose_noise_experiment(&registrar, &s.held_out, &v, &oracle, &config, 0.0, 1).map_err(|e| e.to_string())?;
    let noisy = pose_noise_experiment(&registrar, &s.held_out, &v, &oracle, &config, POSE_NOISE_RANGE, POSE_NOISE_DRAWS)
        .map_err(|e| e.to_string())?;
    let pick = |rows: &[morphfield::evaluation::EvalRow]| rows.iter().find(|r| r.condition == Condition::OraclePipeline).unwrap().clone();
    let (c, n) = (pick(&clean), pick(&noisy));
    check(
        n.n_views >= END_TO_END_VIEWS * POSE_NOISE_DRAWS && n.mean >= c.mean,
        format!("noise-free {:.3e} over {} views; noisy {:.3e} over {} view-draws", c.mean, c.n_views, n.mean, n.n_views),
    )
}

fn criterion_8(suite_elapsed: Duration) -> Outcome {
    let p = KernelParams::new(2.0).unwrap();
    let g = gaussian_kernel(&[Point::origin()], &[Point::new(2.0, 0.0, 0.0)], p).unwrap();
    let kernel_ok = (g[(0, 0)] - (-0.5f64).exp()).abs() < KERNEL_TOL && (g[(0, 0)] - 0.60653).abs() < 1e-5;
    let e = registration_error(&[Point::new(1.0, 0.0, 0.0)], &[Point::origin()]);
    let e_self = registration_error(&[Point::new(1.0, 2.0, 3.0)], &[Point::new(1.0, 2.0, 3.0)]);
    let metric_ok = e == 1.0 && e_self == 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gm = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
    let w = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
    let flat_err = (flatten_rows(&(&gm * &w)) - expand_kernel(&gm).unwrap() * flatten_rows(&w)).amax();
    let flatten_ok = flat_err < 1e-14;

    let centers = random_cloud(50, &mut rng);
    let queries = random_cloud(30, &mut rng);
    let mut image = PositionImage::empty(30, 1);
    for (i, q) in queries.points().iter().enumerate() {
        image.set(i, 0, *q);
    }
    let d = Vector3::new(0.01, -0.02, 0.03);
    let constant = DMatrix::from_fn(50, 3, |_, j| d[j]);
    let a = Matrix3::new(0.1, 0.2, -0.1, 0.0, 0.05, 0.3, -0.2, 0.1, 0.0);
    let b = Vector3::new(0.01, 0.0, -0.02);
    let linear = DMatrix::from_fn(50, 3, |i, j| (a * centers.points()[i].coords + b)[j]);
    let rc = rasterize_target(&image, centers.points(), &constant).unwrap();
    let rl = rasterize_target(&image, centers.points(), &linear).unwrap();
    let const_err = rc.data().iter().map(|v| (v - d).amax()).fold(0.0, f64::max);
    let lin_err = rl
        .data()
        .iter()
        .zip(queries.points())
        .map(|(v, q)| (v - (a * q.coords + b)).amax())
        .fold(0.0, f64::max);
    let rbf_ok = const_err < RBF_LINEAR_TOL && lin_err < RBF_LINEAR_TOL;
    check(
        kernel_ok && metric_ok && flatten_ok && rbf_ok && suite_elapsed < SUITE_TIME,
        format!(
            "G = {:.5}, E = {e}, flatten {flat_err:.1e}, RBF const {const_err:.1e} / linear {lin_err:.1e}, suite {suite_elapsed:.1?}",
            g[(0, 0)]
        ),
    )
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let r = f();
    (r, start.elapsed())
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(&str, Outcome, Duration)> = Vec::new();
    let mut record = |name, (r, t): (Outcome, Duration)| results.push((name, r, t));
    record("1 CPD self-registration", timed(criterion_1));
    record("2 CPD recovery", timed(criterion_2));
    record("3 shape-space exactness", timed(criterion_3));
    record("4 completion recovery", timed(criterion_4));
    let (setup, setup_time) = timed(setup);
    println!("shared synthetic setup: {setup_time:.1?}");
    match setup {
        Ok(s) => {
            record("5 end-to-end ground-truth pipeline", timed(|| criterion_5(&s)));
            record("6 dataset arithmetic", timed(|| criterion_6(&s)));
            record("7 pose-noise degradation", timed(|| criterion_7(&s)));
        }
        Err(e) => {
            for name in ["5 end-to-end ground-truth pipeline", "6 dataset arithmetic", "7 pose-noise degradation"] {
                record(name, (Err(format!("setup failed: {e}")), Duration::ZERO));
            }
        }
    }
    record("8 unit identities and suite time", timed(|| criterion_8(start.elapsed())));

    let mut failed = 0;
    for (name, r, t) in &results {
        match r {
            Ok(d) => println!("criterion {name}: PASS [{t:.1?}] ({d})"),
            Err(d) => {
                failed += 1;
                println!("criterion {name}: FAIL [{t:.1?}] ({d})");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed, {:.1?}", results.len() - failed, start.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}
