//! Procedural object categories for tests, examples and benchmarks: an
//! ellipsoid canonical mesh and instances warped by random combinations of a
//! few smooth deformation modes.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{apply_deformation, gaussian_kernel, voxel_downsample, DeformationField, KernelParams, Mesh, Point, PointCloud};

/// UV ellipsoid centered at the origin with `rings` latitude bands and
/// `segments` longitude slices.
pub fn ellipsoid_mesh(semi_axes: [f64; 3], rings: usize, segments: usize) -> Result<Mesh> {
    if rings < 2 || segments < 3 {
        return Err(Error::InvalidInput("ellipsoid needs at least 2 rings and 3 segments".into()));
    }
    let [a, b, c] = semi_axes;
    let mut vertices = vec![Point::new(0.0, 0.0, c)];
    for r in 1..rings {
        let theta = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            vertices.push(Point::new(a * theta.sin() * phi.cos(), b * theta.sin() * phi.sin(), c * theta.cos()));
        }
    }
    vertices.push(Point::new(0.0, 0.0, -c));
    let south = vertices.len() - 1;
    let ring = |r: usize, s: usize| 1 + (r - 1) * segments + s % segments;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(1, s), ring(1, s + 1)]);
        faces.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            faces.push([ring(r, s), ring(r + 1, s), ring(r + 1, s + 1)]);
            faces.push([ring(r, s), ring(r + 1, s + 1), ring(r, s + 1)]);
        }
    }
    Mesh::new(vertices, faces, None)
}

/// Surface samples of `mesh` reduced to voxel centroids.
pub fn surface_cloud(mesh: &Mesh, samples: usize, leaf: f64, seed: u64) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    voxel_downsample(&PointCloud::new(mesh.sample_surface(samples, &mut rng))?, leaf)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticConfig {
    pub semi_axes: [f64; 3],
    pub rings: usize,
    pub segments: usize,
    /// Number of deformation modes; instances span an affine space of this dimension.
    pub modes: usize,
    /// Largest displacement of a single mode (meters).
    pub amplitude: f64,
    /// Kernel width of the modes.
    pub beta: f64,
    /// Voxel leaf for the canonical and instance clouds.
    pub leaf: f64,
    pub surface_samples: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            semi_axes: [1.0, 0.8, 1.5],
            rings: 18,
            segments: 28,
            modes: 3,
            amplitude: 0.15,
            beta: 2.0,
            leaf: 0.25,
            surface_samples: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub mesh: Mesh,
    pub cloud: PointCloud,
    pub coefficients: Vec<f64>,
    /// The field that produced the instance, anchored at the canonical cloud.
    pub field: DeformationField,
}

#[derive(Debug, Clone)]
pub struct SyntheticCategory {
    pub config: SyntheticConfig,
    pub canonical_mesh: Mesh,
    pub canonical: PointCloud,
    /// Mode weight matrices (n x 3) anchored at the canonical cloud.
    pub modes: Vec<DMatrix<f64>>,
    pub instances: Vec<SyntheticInstance>,
}

impl SyntheticCategory {
    /// Canonical model, modes and `count` instances with coefficients drawn
    /// uniformly from `[-1, 1]`.
    pub fn generate(config: SyntheticConfig, count: usize) -> Result<Self> {
        let params = KernelParams::new(config.beta)?;
        if config.modes == 0 || !(config.amplitude >= 0.0) {
            return Err(Error::InvalidConfig("synthetic category needs at least one mode and a nonnegative amplitude".into()));
        }
        let canonical_mesh = ellipsoid_mesh(config.semi_axes, config.rings, config.segments)?;
        let canonical = surface_cloud(&canonical_mesh, config.surface_samples, config.leaf, config.seed)?;
        let c = canonical.points();
        let g = gaussian_kernel(c, c, params)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6d6f_6465);
        let modes = (0..config.modes)
            .map(|_| {
                let w = DMatrix::from_fn(c.len(), 3, |_, _| rng.sample::<f64, _>(StandardNormal));
                let d = &g * &w;
                let peak = d.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
                w * (config.amplitude / peak.max(f64::MIN_POSITIVE))
            })
            .collect();
        let mut category = Self {
            config,
            canonical_mesh,
            canonical,
            modes,
            instances: Vec::new(),
        };
        for i in 0..count {
            let coefficients: Vec<f64> = (0..category.modes.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let instance = category.instance(&coefficients, category.config.seed.wrapping_add(1 + i as u64))?;
            category.instances.push(instance);
        }
        Ok(category)
    }

    pub fn params(&self) -> KernelParams {
        KernelParams::new(self.config.beta).expect("validated at generation")
    }

    /// Instance warped by `sum_k coefficients[k] * mode_k`; `seed` drives its
    /// cloud sampling.
    pub fn instance(&self, coefficients: &[f64], seed: u64) -> Result<SyntheticInstance> {
        if coefficients.len() != self.modes.len() {
            return Err(Error::InvalidInput(format!("{} coefficients for {} modes", coefficients.len(), self.modes.len())));
        }
        let mut w = DMatrix::zeros(self.canonical.len(), 3);
        for (a, m) in coefficients.iter().zip(&self.modes) {
            w += m * *a;
        }
        let field = DeformationField::new(self.canonical.clone(), w, self.params())?;
        let mesh = self.canonical_mesh.with_vertices(apply_deformation(self.canonical_mesh.vertices(), &field)?)?;
        let cloud = surface_cloud(&mesh, self.config.surface_samples, self.config.leaf, seed)?;
        Ok(SyntheticInstance {
            mesh,
            cloud,
            coefficients: coefficients.to_vec(),
            field,
        })
    }
}
