//! Training corpus generation: instances morphed toward the canonical shape,
//! rendered from a sphere of viewpoints, with rasterized deformation targets.
//!
//! Layout: `<out>/<instance>/<rho>/<view>/{canon.pos.f32, canon.mask.pgm,
//! obs.pos.f32, obs.mask.pgm, target.f32}` (tensors with `.json` sidecars),
//! `<out>/manifest.jsonl` with one [`SampleRecord`] per line and
//! `<out>/dataset.json` with run-level metadata.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpd::{cpd_nonrigid, CpdConfig};
use crate::error::{Error, Result};
use crate::geometry::{gaussian_kernel, viewpoint_sphere, CameraView, DeformationField, Intrinsics, Mesh, PointCloud, Pose};
use crate::imaging::{render_mesh, zoom, CropBox, LinearRbf, PositionImage, RbfCoefficients, SplatConfig};
use crate::io::{write_atomic, write_pgm, write_tensor, PoseFile};
use crate::pipeline::derive_seed;

/// Default interpolation factors.
pub const DEFAULT_RHOS: [f64; 4] = [0.0, 0.25, 0.5, 0.75];

/// Training samples of a category with `total_models` models, one of which is
/// canonical and two held out for testing.
pub fn category_sample_count(total_models: usize, rhos: usize, views: usize) -> usize {
    total_models.saturating_sub(3) * rhos * views
}

/// Training instances of a category: the canonical model and the fields
/// registering it to each instance. Held-out instances must not be included.
#[derive(Debug, Clone)]
pub struct CategorySpec {
    canonical_mesh: Mesh,
    canonical: PointCloud,
    instance_meshes: Vec<Mesh>,
    instance_clouds: Vec<PointCloud>,
    fields: Vec<DeformationField>,
}

impl CategorySpec {
    pub fn new(
        canonical_mesh: Mesh,
        canonical: PointCloud,
        instance_meshes: Vec<Mesh>,
        instance_clouds: Vec<PointCloud>,
        fields: Vec<DeformationField>,
    ) -> Result<Self> {
        if instance_meshes.len() != instance_clouds.len() || instance_meshes.len() != fields.len() {
            return Err(Error::InvalidInput(format!(
                "{} meshes, {} clouds and {} fields",
                instance_meshes.len(),
                instance_clouds.len(),
                fields.len()
            )));
        }
        if let Some(i) = fields.iter().position(|f| f.anchors() != &canonical) {
            return Err(Error::InvalidField(format!("field {i} is not anchored at the canonical cloud")));
        }
        Ok(Self {
            canonical_mesh,
            canonical,
            instance_meshes,
            instance_clouds,
            fields,
        })
    }

    /// Computes each field by CPD of the canonical cloud onto the instance cloud.
    pub fn register(canonical_mesh: Mesh, canonical: PointCloud, instance_meshes: Vec<Mesh>, instance_clouds: Vec<PointCloud>, cpd: &CpdConfig) -> Result<Self> {
        let fields = instance_clouds
            .par_iter()
            .enumerate()
            .map(|(index, x)| {
                cpd_nonrigid(x, &canonical, cpd).map(|r| r.field).map_err(|e| Error::Instance {
                    index,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(canonical_mesh, canonical, instance_meshes, instance_clouds, fields)
    }

    pub fn canonical_mesh(&self) -> &Mesh {
        &self.canonical_mesh
    }

    pub fn canonical(&self) -> &PointCloud {
        &self.canonical
    }

    pub fn instance_meshes(&self) -> &[Mesh] {
        &self.instance_meshes
    }

    pub fn instance_clouds(&self) -> &[PointCloud] {
        &self.instance_clouds
    }

    pub fn fields(&self) -> &[DeformationField] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("rho must lie in [0, 1], got {rho}")))
    }
}

/// Moves the instance toward the canonical shape: `T + G(T, C) (-rho W)`.
pub fn interpolate_instance(instance: &Mesh, field: &DeformationField, rho: f64) -> Result<Mesh> {
    check_rho(rho)?;
    if rho == 0.0 {
        return Ok(instance.clone());
    }
    let back = field.scaled(-rho);
    let moved = back.displacements(instance.vertices())?;
    let vertices = instance
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, v)| v + nalgebra::Vector3::new(moved[(i, 0)], moved[(i, 1)], moved[(i, 2)]))
        .collect();
    instance.with_vertices(vertices)
}

/// Per-point target deltas `G(C, C) (1 - rho) W` of a morphed instance.
pub fn target_delta(field: &DeformationField, rho: f64) -> Result<DMatrix<f64>> {
    check_rho(rho)?;
    let c = field.anchors().points();
    Ok(gaussian_kernel(c, c, field.params())? * field.weights() * (1.0 - rho))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub rhos: Vec<f64>,
    pub views: usize,
    /// Camera distance from the object origin (meters).
    pub camera_radius: f64,
    /// Render intrinsics; also fixes the source resolution.
    pub intrinsics: Intrinsics,
    /// Exported image resolution (width, height).
    pub zoom: (usize, usize),
    pub export_scale: f64,
    pub splat: SplatConfig,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            rhos: DEFAULT_RHOS.to_vec(),
            views: 74,
            camera_radius: 5.0,
            intrinsics: Intrinsics::with_vertical_fov(320, 240, 45.0),
            zoom: (256, 192),
            export_scale: 1000.0,
            splat: SplatConfig::default(),
            train_fraction: 0.9,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.rhos.is_empty() {
            out.push("at least one rho is needed".into());
        }
        for r in &self.rhos {
            if !(0.0..=1.0).contains(r) {
                out.push(format!("rho {r} outside [0, 1]"));
            }
        }
        if self.views == 0 {
            out.push("view count must be at least 1".into());
        }
        if !(self.camera_radius > 0.0 && self.camera_radius.is_finite()) {
            out.push(format!("camera radius must be positive, got {}", self.camera_radius));
        }
        if self.intrinsics.width == 0 || self.intrinsics.height == 0 {
            out.push("render resolution must be positive".into());
        }
        if self.zoom.0 == 0 || self.zoom.1 == 0 {
            out.push("output resolution must be positive".into());
        }
        if !(self.export_scale > 0.0 && self.export_scale.is_finite()) {
            out.push(format!("export scale must be positive, got {}", self.export_scale));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            out.push(format!("train fraction {} outside [0, 1]", self.train_fraction));
        }
        out
    }

    pub fn sample_count(&self, instances: usize) -> usize {
        instances * self.rhos.len() * self.views
    }

    pub fn cameras(&self) -> Result<Vec<CameraView>> {
        viewpoint_sphere(self.views, self.camera_radius, self.intrinsics)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

/// Paths relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub canonical_render: String,
    pub canonical_mask: String,
    pub observed_render: String,
    pub observed_mask: String,
    pub target: String,
    /// Reserved for renderers producing color images.
    pub canonical_rgb: Option<String>,
    pub observed_rgb: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub instance_index: usize,
    pub rho_index: usize,
    pub rho: f64,
    pub view_index: usize,
    pub files: SampleFiles,
    pub crop: Option<CropBox>,
    pub padded: bool,
    pub camera: CameraView,
    pub pose: PoseFile,
    pub export_scale: f64,
    pub split: Split,
    pub seed: u64,
    /// Reason the sample could not be produced; its files are absent.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub samples: usize,
    pub skipped: usize,
    pub instances: usize,
    pub rhos: Vec<f64>,
    pub views: usize,
    pub resolution: (usize, usize),
    pub export_scale: f64,
    pub config: DatasetConfig,
}

fn sample_dir(instance: usize, rho: f64, view: usize) -> String {
    format!("{instance}/{rho}/{view}")
}

/// Shared per-run state: cameras, canonical renders and target interpolants.
struct Generator<'a> {
    spec: &'a CategorySpec,
    config: &'a DatasetConfig,
    cameras: Vec<CameraView>,
    rbf: LinearRbf,
}

impl<'a> Generator<'a> {
    fn new(spec: &'a CategorySpec, config: &'a DatasetConfig) -> Result<Self> {
        if let Some(v) = config.violations().first() {
            return Err(Error::InvalidConfig(v.clone()));
        }
        Ok(Self {
            spec,
            config,
            cameras: config.cameras()?,
            rbf: LinearRbf::new(spec.canonical.points())?,
        })
    }

    fn canonical_render(&self, view: usize) -> Result<PositionImage> {
        render_mesh(
            &self.spec.canonical_mesh,
            &Pose::identity(),
            &self.cameras[view],
            &self.config.splat,
            derive_seed(self.config.seed, &[0x63616e, view as u64]),
        )
    }

    fn coefficients(&self, instance: usize, rho: f64) -> Result<RbfCoefficients> {
        self.rbf.fit(&target_delta(&self.spec.fields[instance], rho)?)
    }

    fn record(&self, instance: usize, rho_index: usize, view: usize) -> SampleRecord {
        let rho = self.config.rhos[rho_index];
        let seed = derive_seed(self.config.seed, &[instance as u64, rho_index as u64, view as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x73706c6974]));
        let split = if rng.random::<f64>() < self.config.train_fraction {
            Split::Train
        } else {
            Split::Validation
        };
        let dir = sample_dir(instance, rho, view);
        SampleRecord {
            instance_index: instance,
            rho_index,
            rho,
            view_index: view,
            files: SampleFiles {
                canonical_render: format!("{dir}/canon.pos.f32"),
                canonical_mask: format!("{dir}/canon.mask.pgm"),
                observed_render: format!("{dir}/obs.pos.f32"),
                observed_mask: format!("{dir}/obs.mask.pgm"),
                target: format!("{dir}/target.f32"),
                canonical_rgb: None,
                observed_rgb: None,
            },
            crop: None,
            padded: false,
            camera: self.cameras[view].clone(),
            pose: PoseFile::from_pose(&Pose::identity()),
            export_scale: self.config.export_scale,
            split,
            seed,
            skipped: None,
        }
    }

    /// Renders and writes one sample below `root`, filling in the crop.
    fn produce(&self, record: &mut SampleRecord, morphed: &Mesh, canonical: &PositionImage, coeffs: &RbfCoefficients, root: &Path) -> Result<()> {
        let view = &self.cameras[record.view_index];
        let observed = render_mesh(morphed, &Pose::identity(), view, &self.config.splat, record.seed)?;
        let z = zoom(&observed, canonical, self.config.zoom)?;
        let target = self.rbf.rasterize(&z.canonical, coeffs).with_scale(self.config.export_scale);
        let (w, h) = self.config.zoom;
        let path = |rel: &str| root.join(rel);
        let dir = path(&record.files.target);
        let dir = dir.parent().expect("sample files live in a directory");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_tensor(&path(&record.files.canonical_render), &z.canonical.to_tensor())?;
        write_pgm(&path(&record.files.canonical_mask), w, h, &z.canonical_mask.to_bytes())?;
        write_tensor(&path(&record.files.observed_render), &z.observed.to_tensor())?;
        write_pgm(&path(&record.files.observed_mask), w, h, &z.observed_mask.to_bytes())?;
        write_tensor(&path(&record.files.target), &target.to_tensor())?;
        record.crop = Some(z.crop);
        record.padded = z.padded;
        Ok(())
    }
}

/// Renders every (instance, rho, view) sample into `out`, which must not
/// exist. Work happens in `<out>.partial`, renamed on success; a run with
/// more than 0.1% skipped samples fails and leaves the partial directory.
pub fn generate_dataset(spec: &CategorySpec, config: &DatasetConfig, out: &Path) -> Result<DatasetSummary> {
    if out.exists() {
        return Err(Error::InvalidConfig(format!("output {} already exists", out.display())));
    }
    let generator = Generator::new(spec, config)?;
    let partial = partial_dir(out);
    if partial.exists() {
        fs::remove_dir_all(&partial).map_err(|e| Error::io(&partial, e))?;
    }
    fs::create_dir_all(&partial).map_err(|e| Error::io(&partial, e))?;

    let canonical: Vec<Result<PositionImage>> = (0..config.views).into_par_iter().map(|v| generator.canonical_render(v)).collect();
    let pairs: Vec<(usize, usize)> = (0..spec.len()).flat_map(|i| (0..config.rhos.len()).map(move |r| (i, r))).collect();
    let morphs: Vec<Result<(Mesh, RbfCoefficients)>> = pairs
        .par_iter()
        .map(|&(i, r)| {
            let rho = config.rhos[r];
            Ok((interpolate_instance(&spec.instance_meshes[i], &spec.fields[i], rho)?, generator.coefficients(i, rho)?))
        })
        .collect();

    let tasks: Vec<(usize, usize)> = (0..pairs.len()).flat_map(|p| (0..config.views).map(move |v| (p, v))).collect();
    let records: Vec<SampleRecord> = tasks
        .par_iter()
        .map(|&(p, v)| {
            let (i, r) = pairs[p];
            let mut record = generator.record(i, r, v);
            let outcome = match (&morphs[p], &canonical[v]) {
                (Ok((mesh, coeffs)), Ok(can)) => generator.produce(&mut record, mesh, can, coeffs, &partial),
                (Err(e), _) | (_, Err(e)) => Err(Error::InvalidInput(e.to_string())),
            };
            if let Err(e) = outcome {
                log::warn!("skipping instance {i} rho {} view {v}: {e}", config.rhos[r]);
                record.skipped = Some(e.to_string());
            }
            record
        })
        .collect();

    let skipped = records.iter().filter(|r| r.skipped.is_some()).count();
    let mut manifest = String::new();
    for r in &records {
        manifest.push_str(&serde_json::to_string(r).expect("record serializes"));
        manifest.push('\n');
    }
    write_atomic(&partial.join("manifest.jsonl"), manifest.as_bytes())?;
    let summary = DatasetSummary {
        samples: records.len() - skipped,
        skipped,
        instances: spec.len(),
        rhos: config.rhos.clone(),
        views: config.views,
        resolution: config.zoom,
        export_scale: config.export_scale,
        config: config.clone(),
    };
    write_atomic(&partial.join("dataset.json"), &serde_json::to_vec_pretty(&summary).expect("summary serializes"))?;
    if skipped * 1000 > records.len() {
        return Err(Error::InvalidInput(format!(
            "{skipped} of {} samples failed; partial output left in {}",
            records.len(),
            partial.display()
        )));
    }
    fs::rename(&partial, out).map_err(|e| Error::io(out, e))?;
    Ok(summary)
}

fn partial_dir(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1))))
        .collect()
}

/// Re-renders one sample from its record into `root` (same relative paths).
/// With the config and spec of the original run the files are identical.
pub fn regenerate_sample(spec: &CategorySpec, config: &DatasetConfig, record: &SampleRecord, root: &Path) -> Result<()> {
    let generator = Generator::new(spec, config)?;
    if record.instance_index >= spec.len() || record.rho_index >= config.rhos.len() || record.view_index >= config.views {
        return Err(Error::InvalidInput("record indices outside the configured dataset".into()));
    }
    let mut fresh = generator.record(record.instance_index, record.rho_index, record.view_index);
    let mesh = interpolate_instance(&spec.instance_meshes[record.instance_index], &spec.fields[record.instance_index], record.rho)?;
    let coeffs = generator.coefficients(record.instance_index, record.rho)?;
    let canonical = generator.canonical_render(record.view_index)?;
    generator.produce(&mut fresh, &mesh, &canonical, &coeffs, root)
}
