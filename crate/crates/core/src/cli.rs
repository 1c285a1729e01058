//! The `morphfield` command line.
//!
//! Exit codes: 0 on success, 2 for usage and validation errors (every
//! violation is reported), 1 for failures while running.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::completion::{cross_instance_correspondence, reconstruct_mesh, CompletionResult};
use crate::cpd::{cpd_nonrigid, CpdConfig};
use crate::dataset::{generate_dataset, CategorySpec, DatasetConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_instance, pose_noise_experiment, registration_error, EvalConfig, EvalReport, Subject};
use crate::geometry::{apply_deformation, viewpoint_sphere, voxel_downsample, CameraView, Intrinsics, KernelParams, Mesh, Point, PointCloud};
use crate::imaging::SplatConfig;
use crate::io::{read_pose, write_atomic, write_mesh, write_point_cloud, DType};
use crate::oracle::OracleSpec;
use crate::pipeline::{Model, PipelineConfig, Registrar};
use crate::shape_space::{build_shape_space, LatentVector, ShapeSpace};
use crate::synthetic::surface_cloud;

#[derive(Debug, Parser)]
#[command(name = "morphfield", version, about = "Category-level non-rigid registration")]
pub struct Cli {
    /// Worker threads; 1 gives a single-threaded run.
    #[arg(long, global = true, env = "MORPHFIELD_JOBS")]
    pub jobs: Option<usize>,

    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

/// Parsed invocation.
pub type RunConfig = Cli;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register the canonical model to every training instance and build the shape space.
    BuildSpace(BuildSpaceArgs),
    /// Render a training corpus for a category.
    GenDataset(GenDatasetArgs),
    /// Register one view of an observed instance.
    Register(RegisterArgs),
    /// Viewpoint sweep over held-out instances.
    Evaluate(EvaluateArgs),
    /// Viewpoint sweep with translation noise on the believed pose.
    PoseNoiseEval(PoseNoiseArgs),
    /// Point-to-point correspondence between two registered instances.
    CrossRegister(CrossRegisterArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DTypeArg {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct CloudArgs {
    /// Voxel leaf (meters) for turning models into clouds; meshes are surface-sampled first.
    /// Without it the model's vertices are used as they are.
    #[arg(long)]
    pub leaf: Option<f64>,
    /// Surface samples drawn from meshes before downsampling.
    #[arg(long, default_value_t = 20_000)]
    pub surface_samples: usize,
}

#[derive(Debug, Args)]
pub struct CpdArgs {
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 2.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    pub outlier_weight: f64,
    #[arg(long, default_value_t = 150)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
}

impl CpdArgs {
    fn config(&self) -> CpdConfig {
        CpdConfig {
            beta: self.beta,
            lambda: self.lambda,
            outlier_weight: self.outlier_weight,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
        }
    }
}

#[derive(Debug, Args)]
pub struct BuildSpaceArgs {
    #[arg(long)]
    pub canonical: PathBuf,
    /// Directory of training instance PLY files.
    #[arg(long)]
    pub instances: PathBuf,
    #[command(flatten)]
    pub cpd: CpdArgs,
    /// Latent dimension l.
    #[arg(long = "latent", default_value_t = 5)]
    pub latent: usize,
    #[command(flatten)]
    pub cloud: CloudArgs,
    #[arg(long, value_enum, default_value_t = DTypeArg::F64)]
    pub dtype: DTypeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CameraArgs {
    /// Number of viewpoints on the sphere.
    #[arg(long, default_value_t = 74)]
    pub views: usize,
    /// Camera distance from the object origin (meters).
    #[arg(long, default_value_t = 5.0)]
    pub radius: f64,
    /// Render resolution, WIDTHxHEIGHT.
    #[arg(long, default_value = "320x240", value_parser = parse_resolution)]
    pub render_res: (usize, usize),
    /// Vertical field of view in degrees.
    #[arg(long, default_value_t = 45.0)]
    pub fov: f64,
    /// Oracle input / exported resolution, WIDTHxHEIGHT.
    #[arg(long, default_value = "256x192", value_parser = parse_resolution)]
    pub res: (usize, usize),
    /// Splat radius in pixels.
    #[arg(long, default_value_t = 1)]
    pub splat_radius: u32,
    /// Surface samples per expected pixel when rendering meshes.
    #[arg(long, default_value_t = 20.0)]
    pub density: f64,
}

impl CameraArgs {
    fn intrinsics(&self) -> Intrinsics {
        Intrinsics::with_vertical_fov(self.render_res.0 as u32, self.render_res.1 as u32, self.fov)
    }

    fn splat(&self) -> SplatConfig {
        SplatConfig {
            radius: self.splat_radius,
            density: self.density,
            ..SplatConfig::default()
        }
    }

    fn cameras(&self) -> Result<Vec<CameraView>> {
        viewpoint_sphere(self.views, self.radius, self.intrinsics())
    }
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[arg(long)]
    pub space: PathBuf,
    /// Canonical mesh; defaults to `canonical.ply` inside the models directory.
    #[arg(long)]
    pub canonical: Option<PathBuf>,
    /// Directory of training instance meshes.
    #[arg(long)]
    pub models: PathBuf,
    /// Comma-separated interpolation factors.
    #[arg(long, default_value = "0,0.25,0.5,0.75", value_delimiter = ',')]
    pub rhos: Vec<f64>,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[arg(long, default_value_t = 1000.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 2.0)]
    pub lambda: f64,
    #[command(flatten)]
    pub cloud: CloudArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleArg {
    #[value(alias = "ground-truth")]
    Gt,
    Noisy,
    External,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, value_enum, default_value_t = OracleArg::Gt)]
    pub oracle: OracleArg,
    /// Noise standard deviation in meters for the noisy oracle.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    /// Command for the external oracle; it receives the exchange directory as its argument.
    #[arg(long)]
    pub oracle_cmd: Option<String>,
}

impl OracleArgs {
    fn spec(&self) -> OracleSpec {
        match self.oracle {
            OracleArg::Gt => OracleSpec::ground_truth(),
            OracleArg::Noisy => OracleSpec::noisy(self.noise_sigma),
            OracleArg::External => OracleSpec::external(self.oracle_cmd.clone().unwrap_or_default()),
        }
    }
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub space: PathBuf,
    /// Canonical mesh to render and deform; the space's cloud is used otherwise.
    #[arg(long)]
    pub canonical_mesh: Option<PathBuf>,
    /// Observed instance (mesh or cloud) in its object frame.
    #[arg(long)]
    pub observed: PathBuf,
    /// Object pose (`{"rotation": [w, x, y, z], "translation": [x, y, z]}`).
    #[arg(long)]
    pub pose: PathBuf,
    /// Camera file; otherwise view `--view` of the viewpoint sphere.
    #[arg(long)]
    pub camera_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub view: usize,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[command(flatten)]
    pub cpd: CpdArgs,
    #[command(flatten)]
    pub cloud: CloudArgs,
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
    /// Reconstruction (PLY, object frame of the observed model).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the fitted latent as JSON.
    #[arg(long)]
    pub latent_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub canonical_mesh: Option<PathBuf>,
    /// Held-out instance files (repeatable).
    #[arg(long = "instance", required = true)]
    pub instances: Vec<PathBuf>,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[command(flatten)]
    pub cpd: CpdArgs,
    #[command(flatten)]
    pub cloud: CloudArgs,
    /// Skip the CPD-on-partial-view baseline.
    #[arg(long)]
    pub no_cpd_baseline: bool,
    /// Voxel leaf for the partial cloud of the CPD baseline.
    #[arg(long, default_value_t = 0.1)]
    pub baseline_leaf: f64,
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
    /// Multiply errors by 1e6 in the CSV.
    #[arg(long)]
    pub micro: bool,
    /// Output stem; `.csv` and `.json` are appended.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PoseNoiseArgs {
    #[command(flatten)]
    pub eval: EvaluateArgs,
    /// Per-axis translation noise bound in meters.
    #[arg(long, default_value_t = 0.05)]
    pub noise_range: f64,
    #[arg(long, default_value_t = 5)]
    pub draws: usize,
}

#[derive(Debug, Args)]
pub struct CrossRegisterArgs {
    #[arg(long)]
    pub space: PathBuf,
    /// Completion result JSON of instance A (as written by `register --latent-out`).
    #[arg(long)]
    pub latent_a: PathBuf,
    #[arg(long)]
    pub latent_b: PathBuf,
    #[arg(long)]
    pub out_a: PathBuf,
    #[arg(long)]
    pub out_b: PathBuf,
}

fn parse_resolution(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    Ok((w, h))
}

/// PLY files directly inside `dir`, sorted by name.
pub fn list_models(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")))
        .collect();
    out.sort();
    Ok(out)
}

fn positive(out: &mut Vec<String>, name: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        out.push(format!("{name} must be positive, got {v}"));
    }
}

fn file_exists(out: &mut Vec<String>, name: &str, p: &Path) {
    if !p.is_file() {
        out.push(format!("{name}: {} is not a readable file", p.display()));
    }
}

fn check_cpd(out: &mut Vec<String>, cpd: &CpdArgs) {
    out.extend(cpd.config().violations());
}

fn check_cloud(out: &mut Vec<String>, cloud: &CloudArgs) {
    if let Some(leaf) = cloud.leaf {
        positive(out, "leaf", leaf);
    }
    if cloud.surface_samples == 0 {
        out.push("surface samples must be positive".into());
    }
}

fn check_camera(out: &mut Vec<String>, c: &CameraArgs) {
    if c.views == 0 {
        out.push("views must be at least 1".into());
    }
    positive(out, "camera radius", c.radius);
    if !(c.fov > 0.0 && c.fov < 180.0) {
        out.push(format!("field of view must lie in (0, 180) degrees, got {}", c.fov));
    }
    for (name, (w, h)) in [("render resolution", c.render_res), ("resolution", c.res)] {
        if w == 0 || h == 0 {
            out.push(format!("{name} must be positive, got {w}x{h}"));
        }
    }
    positive(out, "splat density", c.density);
}

fn check_evaluate(out: &mut Vec<String>, a: &EvaluateArgs) {
    file_exists(out, "space", &a.space);
    if let Some(p) = &a.canonical_mesh {
        file_exists(out, "canonical mesh", p);
    }
    for p in &a.instances {
        file_exists(out, "instance", p);
    }
    check_camera(out, &a.camera);
    check_cpd(out, &a.cpd);
    check_cloud(out, &a.cloud);
    out.extend(a.oracle.spec().violations());
    positive(out, "baseline leaf", a.baseline_leaf);
    if !(a.ridge >= 0.0) {
        out.push(format!("ridge must be nonnegative, got {}", a.ridge));
    }
}

/// Every violated precondition of the invocation, checked before any work.
pub fn validate_config(config: &RunConfig) -> Vec<String> {
    let mut out = Vec::new();
    if config.jobs == Some(0) {
        out.push("jobs must be at least 1".into());
    }
    match &config.command {
        Command::BuildSpace(a) => {
            file_exists(&mut out, "canonical", &a.canonical);
            if KernelParams::new(a.cpd.beta).is_err() {
                out.push(format!("beta must be positive (KernelParams), got {}", a.cpd.beta));
            }
            out.extend(a.cpd.config().violations().into_iter().filter(|v| !v.starts_with("beta")));
            check_cloud(&mut out, &a.cloud);
            if a.latent == 0 {
                out.push("latent dimension must be at least 1".into());
            }
            match list_models(&a.instances) {
                Ok(files) if files.len() < 2 => out.push(format!("need at least 2 instances, found {}", files.len())),
                Ok(files) if a.latent > files.len() - 1 => out.push(format!(
                    "latent dimension {} exceeds #instances - 1 = {} (l <= #instances - 1)",
                    a.latent,
                    files.len() - 1
                )),
                Ok(_) => {}
                Err(e) => out.push(format!("instances: {e}")),
            }
        }
        Command::GenDataset(a) => {
            file_exists(&mut out, "space", &a.space);
            let canonical = a.canonical.clone().unwrap_or_else(|| a.models.join("canonical.ply"));
            file_exists(&mut out, "canonical", &canonical);
            match list_models(&a.models) {
                Ok(files) if files.iter().all(|f| f == &canonical) => out.push("no instance models found".into()),
                Ok(_) => {}
                Err(e) => out.push(format!("models: {e}")),
            }
            check_camera(&mut out, &a.camera);
            check_cloud(&mut out, &a.cloud);
            positive(&mut out, "lambda", a.lambda);
            out.extend(dataset_config(a, config.seed).violations());
        }
        Command::Register(a) => {
            file_exists(&mut out, "space", &a.space);
            file_exists(&mut out, "observed", &a.observed);
            file_exists(&mut out, "pose", &a.pose);
            if let Some(p) = &a.canonical_mesh {
                file_exists(&mut out, "canonical mesh", p);
            }
            if let Some(p) = &a.camera_file {
                file_exists(&mut out, "camera file", p);
            } else if a.view >= a.camera.views {
                out.push(format!("view {} out of range for {} views", a.view, a.camera.views));
            }
            check_camera(&mut out, &a.camera);
            check_cpd(&mut out, &a.cpd);
            check_cloud(&mut out, &a.cloud);
            out.extend(a.oracle.spec().violations());
            if !(a.ridge >= 0.0) {
                out.push(format!("ridge must be nonnegative, got {}", a.ridge));
            }
        }
        Command::Evaluate(a) => check_evaluate(&mut out, a),
        Command::PoseNoiseEval(a) => {
            check_evaluate(&mut out, &a.eval);
            if !(a.noise_range >= 0.0 && a.noise_range.is_finite()) {
                out.push(format!("noise range must be nonnegative, got {}", a.noise_range));
            }
            if a.draws == 0 {
                out.push("draws must be at least 1".into());
            }
        }
        Command::CrossRegister(a) => {
            file_exists(&mut out, "space", &a.space);
            file_exists(&mut out, "latent A", &a.latent_a);
            file_exists(&mut out, "latent B", &a.latent_b);
        }
    }
    out
}

fn dataset_config(a: &GenDatasetArgs, seed: u64) -> DatasetConfig {
    DatasetConfig {
        rhos: a.rhos.clone(),
        views: a.camera.views,
        camera_radius: a.camera.radius,
        intrinsics: a.camera.intrinsics(),
        zoom: a.camera.res,
        export_scale: a.scale,
        splat: a.camera.splat(),
        seed,
        ..DatasetConfig::default()
    }
}

/// Cloud for registration and scoring, per the `--leaf` rules.
fn to_cloud(model: &Model, cloud: &CloudArgs, seed: u64) -> Result<PointCloud> {
    match (model, cloud.leaf) {
        (Model::Mesh(m), Some(leaf)) => surface_cloud(m, cloud.surface_samples, leaf, seed),
        (Model::Cloud(c), Some(leaf)) => voxel_downsample(c, leaf),
        (m, None) => PointCloud::new(m.points().to_vec()),
    }
}

fn load_mesh(path: &Path) -> Result<Mesh> {
    match Model::load(path)? {
        Model::Mesh(m) => Ok(m),
        Model::Cloud(_) => Err(Error::format(path, "expected a mesh with faces")),
    }
}

fn canonical_model(space: &ShapeSpace, mesh: Option<&Path>) -> Result<Model> {
    match mesh {
        Some(p) => Model::load(p),
        None => Ok(Model::Cloud(space.canonical().clone())),
    }
}

fn run_build_space(a: &BuildSpaceArgs, seed: u64) -> Result<()> {
    let canonical = to_cloud(&Model::load(&a.canonical)?, &a.cloud, seed)?;
    let files = list_models(&a.instances)?;
    let instances = files
        .iter()
        .enumerate()
        .map(|(i, f)| to_cloud(&Model::load(f)?, &a.cloud, crate::pipeline::derive_seed(seed, &[i as u64 + 1])))
        .collect::<Result<Vec<_>>>()?;
    log::info!("registering {} instances to a {}-point canonical cloud", instances.len(), canonical.len());
    let (space, _) = build_shape_space(&canonical, &instances, &a.cpd.config(), a.latent)?;
    let dtype = match a.dtype {
        DTypeArg::F32 => DType::F32,
        DTypeArg::F64 => DType::F64,
    };
    space.save_as(&a.out, dtype)?;
    println!(
        "{}",
        serde_json::json!({"out": a.out, "canonical_points": canonical.len(), "instances": instances.len(), "latent": a.latent})
    );
    Ok(())
}

fn run_gen_dataset(a: &GenDatasetArgs, seed: u64) -> Result<()> {
    let space = ShapeSpace::load(&a.space)?;
    let canonical_path = a.canonical.clone().unwrap_or_else(|| a.models.join("canonical.ply"));
    let canonical_mesh = load_mesh(&canonical_path)?;
    let files: Vec<PathBuf> = list_models(&a.models)?.into_iter().filter(|f| f != &canonical_path).collect();
    let meshes = files.iter().map(|f| load_mesh(f)).collect::<Result<Vec<_>>>()?;
    let clouds = meshes
        .iter()
        .enumerate()
        .map(|(i, m)| to_cloud(&Model::Mesh(m.clone()), &a.cloud, crate::pipeline::derive_seed(seed, &[i as u64 + 1])))
        .collect::<Result<Vec<_>>>()?;
    let cpd = CpdConfig {
        beta: space.beta(),
        lambda: a.lambda,
        ..CpdConfig::default()
    };
    let spec = CategorySpec::register(canonical_mesh, space.canonical().clone(), meshes, clouds, &cpd)?;
    let config = dataset_config(a, seed);
    let summary = generate_dataset(&spec, &config, &a.out)?;
    println!(
        "{}",
        serde_json::json!({"out": a.out, "samples": summary.samples, "skipped": summary.skipped, "instances": summary.instances})
    );
    Ok(())
}

fn run_register(a: &RegisterArgs, seed: u64) -> Result<()> {
    let space = ShapeSpace::load(&a.space)?;
    let canonical_mesh = a.canonical_mesh.as_deref().map(load_mesh).transpose()?;
    let canonical = match &canonical_mesh {
        Some(m) => Model::Mesh(m.clone()),
        None => Model::Cloud(space.canonical().clone()),
    };
    let observed = Model::load(&a.observed)?;
    let pose = read_pose(&a.pose)?;
    let view = match &a.camera_file {
        Some(p) => {
            let text = fs::read(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_slice::<CameraView>(&text).map_err(|e| Error::format(p, e.to_string()))?
        }
        None => a.camera.cameras()?.swap_remove(a.view),
    };
    let config = PipelineConfig {
        zoom: a.camera.res,
        splat: a.camera.splat(),
        ridge: a.ridge,
        ..PipelineConfig::default()
    };
    let registrar = Registrar::new(&space, canonical, config)?;
    let oracle = a.oracle.spec();
    let observed_cloud = to_cloud(&observed, &a.cloud, seed)?;
    let truth = if oracle.needs_target() {
        let fit = cpd_nonrigid(&observed_cloud, space.canonical(), &a.cpd.config())?;
        Some(registrar.ground_truth(&fit.field)?)
    } else {
        None
    };
    let image = observed.render(&pose, &view, &registrar.config().splat, crate::pipeline::derive_seed(seed, &[0]))?;
    let outcome = registrar.register_view(&image, &view, &pose, &oracle, truth.as_ref(), seed)?;
    let field = outcome.completion.field(&space)?;

    let (recon_points, canonical_points): (Vec<Point>, Vec<Point>) = match &canonical_mesh {
        Some(m) => {
            let recon = reconstruct_mesh(&space, &outcome.completion, m)?;
            write_mesh(&a.out, &recon)?;
            (recon.vertices().to_vec(), m.vertices().to_vec())
        }
        None => {
            let recon = apply_deformation(space.canonical().points(), &field)?;
            write_point_cloud(&a.out, &recon)?;
            (recon, space.canonical().points().to_vec())
        }
    };
    if let Some(p) = &a.latent_out {
        write_atomic(p, &serde_json::to_vec_pretty(&outcome.completion).expect("result serializes"))?;
    }
    let target = observed_cloud.points();
    println!(
        "{}",
        serde_json::json!({
            "out": a.out,
            "visible_points": outcome.completion.visible_points,
            "rank_deficient": outcome.completion.rank_deficient,
            "residual": outcome.completion.residual,
            "error": registration_error(target, &recon_points),
            "canonical_baseline_error": registration_error(target, &canonical_points),
        })
    );
    Ok(())
}

fn run_evaluation(a: &EvaluateArgs, seed: u64, noise: Option<(f64, usize)>) -> Result<()> {
    let space = ShapeSpace::load(&a.space)?;
    let canonical = canonical_model(&space, a.canonical_mesh.as_deref())?;
    let config = PipelineConfig {
        zoom: a.camera.res,
        splat: a.camera.splat(),
        ridge: a.ridge,
        ..PipelineConfig::default()
    };
    let registrar = Registrar::new(&space, canonical, config)?;
    let views = a.camera.cameras()?;
    let oracle = a.oracle.spec();
    let eval = EvalConfig {
        cpd: a.cpd.config(),
        cpd_baseline: !a.no_cpd_baseline,
        baseline_leaf: a.baseline_leaf,
        seed,
    };
    let mut report = EvalReport::default();
    for (i, path) in a.instances.iter().enumerate() {
        let model = Model::load(path)?;
        let subject = Subject {
            name: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| i.to_string()),
            cloud: to_cloud(&model, &a.cloud, crate::pipeline::derive_seed(seed, &[i as u64 + 1]))?,
            model,
            pose: crate::geometry::Pose::identity(),
        };
        let rows = match noise {
            Some((range, draws)) => pose_noise_experiment(&registrar, &subject, &views, &oracle, &eval, range, draws)?,
            None => evaluate_instance(&registrar, &subject, &views, &oracle, &eval)?,
        };
        report.rows.extend(rows);
    }
    report.write(&a.out, if a.micro { 1e6 } else { 1.0 })?;
    print!("{}", report.to_csv(if a.micro { 1e6 } else { 1.0 }));
    Ok(())
}

fn run_cross_register(a: &CrossRegisterArgs) -> Result<()> {
    let space = ShapeSpace::load(&a.space)?;
    let read = |p: &Path| -> Result<LatentVector> {
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        let result: CompletionResult = serde_json::from_slice(&bytes).map_err(|e| Error::format(p, e.to_string()))?;
        Ok(result.latent)
    };
    let (ca, cb) = cross_instance_correspondence(&space, &read(&a.latent_a)?, &read(&a.latent_b)?)?;
    write_point_cloud(&a.out_a, ca.points())?;
    write_point_cloud(&a.out_b, cb.points())?;
    let mean = ca.points().iter().zip(cb.points()).map(|(p, q)| (p - q).norm()).sum::<f64>() / ca.len() as f64;
    println!("{}", serde_json::json!({"points": ca.len(), "mean_correspondence_distance": mean}));
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::BuildSpace(a) => run_build_space(a, cli.seed),
        Command::GenDataset(a) => run_gen_dataset(a, cli.seed),
        Command::Register(a) => run_register(a, cli.seed),
        Command::Evaluate(a) => run_evaluation(a, cli.seed, None),
        Command::PoseNoiseEval(a) => run_evaluation(&a.eval, cli.seed, Some((a.noise_range, a.draws))),
        Command::CrossRegister(a) => run_cross_register(a),
    }
}

/// Parses `argv`, validates and runs. Returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();

    let violations = validate_config(&cli);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("error: {v}");
        }
        return 2;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 1;
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            1
        }
    }
}
