//! Point sets, meshes, the Gaussian interaction kernel and kernel warps.
//!
//! Deformation fields are stored as `n x 3` weight matrices anchored at a
//! point cloud. Whenever a field is viewed as a single `3n` vector the
//! flattening is point-major: `(p0.x, p0.y, p0.z, p1.x, ...)`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Point3, Rotation3, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Point3<f64>;

/// Rigid placement of an object model in the world frame.
pub type Pose = Isometry3<f64>;

/// Name of the flattening convention written into file headers.
pub const FLATTENING: &str = "point-major";

fn check_finite(points: &[Point], what: &str) -> Result<()> {
    if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
        return Err(Error::InvalidInput(format!("{what}: point {i} has a non-finite coordinate")));
    }
    Ok(())
}

/// An ordered, non-empty set of 3D points in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("point cloud is empty".into()));
        }
        check_finite(&points, "point cloud")?;
        Ok(Self { points })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.ncols() != 3 {
            return Err(Error::InvalidInput(format!("expected n x 3 matrix, got {} columns", m.ncols())));
        }
        Self::new((0..m.nrows()).map(|i| Point::new(m[(i, 0)], m[(i, 1)], m[(i, 2)])).collect())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Rows are points.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), 3, |i, j| self.points[i][j])
    }

    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose * p).collect(),
        }
    }

    pub fn centroid(&self) -> Point {
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Point::from(sum / self.len() as f64)
    }

    /// Length of the diagonal of the axis-aligned bounding box.
    pub fn diameter(&self) -> f64 {
        bounding_diagonal(&self.points)
    }
}

impl AsRef<[Point]> for PointCloud {
    fn as_ref(&self) -> &[Point] {
        &self.points
    }
}

pub(crate) fn bounding_diagonal(points: &[Point]) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    (hi - lo).norm()
}

/// Triangle mesh with optional per-vertex colors.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point>,
    faces: Vec<[usize; 3]>,
    colors: Option<Vec<[u8; 3]>>,
}

impl Mesh {
    pub fn new(vertices: Vec<Point>, faces: Vec<[usize; 3]>, colors: Option<Vec<[u8; 3]>>) -> Result<Self> {
        let m = vertices.len();
        if m < 3 {
            return Err(Error::InvalidInput(format!("mesh needs at least 3 vertices, got {m}")));
        }
        check_finite(&vertices, "mesh")?;
        for (f, face) in faces.iter().enumerate() {
            if face.iter().any(|&i| i >= m) {
                return Err(Error::InvalidInput(format!("face {f} references a vertex >= {m}")));
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(Error::InvalidInput(format!("face {f} is degenerate: {face:?}")));
            }
        }
        if let Some(c) = &colors {
            if c.len() != m {
                return Err(Error::InvalidInput(format!("{} vertex colors for {m} vertices", c.len())));
            }
        }
        Ok(Self { vertices, faces, colors })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    /// Same topology and colors, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Point>) -> Result<Mesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::InvalidInput(format!(
                "vertex count changed from {} to {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        check_finite(&vertices, "mesh")?;
        Ok(Mesh {
            vertices,
            faces: self.faces.clone(),
            colors: self.colors.clone(),
        })
    }

    pub fn vertex_cloud(&self) -> PointCloud {
        PointCloud {
            points: self.vertices.clone(),
        }
    }

    fn face_area(&self, face: &[usize; 3]) -> f64 {
        let [a, b, c] = face.map(|i| self.vertices[i]);
        (b - a).cross(&(c - a)).norm() * 0.5
    }

    pub fn surface_area(&self) -> f64 {
        self.faces.iter().map(|f| self.face_area(f)).sum()
    }

    /// Area-weighted uniform samples on the surface.
    ///
    /// A mesh without faces (or with zero area) falls back to its vertices.
    pub fn sample_surface<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<Point> {
        let mut cumulative = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for f in &self.faces {
            total += self.face_area(f);
            cumulative.push(total);
        }
        if total <= 0.0 {
            return self.vertices.clone();
        }
        (0..count)
            .map(|_| {
                let r = rng.random::<f64>() * total;
                let idx = cumulative.partition_point(|&c| c <= r).min(self.faces.len() - 1);
                let [a, b, c] = self.faces[idx].map(|i| self.vertices[i]);
                let s = rng.random::<f64>().sqrt();
                let t = rng.random::<f64>();
                Point::from(a.coords * (1.0 - s) + b.coords * (s * (1.0 - t)) + c.coords * (s * t))
            })
            .collect()
    }
}

/// Width of the Gaussian interaction kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    beta: f64,
}

impl KernelParams {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidInput(format!("kernel width beta must be positive, got {beta}")));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Gaussian kernel matrix with rows indexing `queries` and columns indexing
/// `anchors`: `g_ij = exp(-|q_i - a_j|^2 / (2 beta^2))`.
pub fn gaussian_kernel(queries: &[Point], anchors: &[Point], params: KernelParams) -> Result<DMatrix<f64>> {
    if queries.is_empty() || anchors.is_empty() {
        return Err(Error::InvalidInput("kernel of an empty point set".into()));
    }
    check_finite(queries, "kernel queries")?;
    check_finite(anchors, "kernel anchors")?;
    let k = -1.0 / (2.0 * params.beta * params.beta);
    Ok(DMatrix::from_fn(queries.len(), anchors.len(), |i, j| {
        ((queries[i] - anchors[j]).norm_squared() * k).exp()
    }))
}

/// Offset weights `W` (n x 3) attached to `n` anchor points.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    anchors: PointCloud,
    weights: DMatrix<f64>,
    params: KernelParams,
}

impl DeformationField {
    pub fn new(anchors: PointCloud, weights: DMatrix<f64>, params: KernelParams) -> Result<Self> {
        if weights.nrows() != anchors.len() || weights.ncols() != 3 {
            return Err(Error::InvalidField(format!(
                "weights are {}x{} but there are {} anchors",
                weights.nrows(),
                weights.ncols(),
                anchors.len()
            )));
        }
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::InvalidField("non-finite weight".into()));
        }
        Ok(Self {
            anchors,
            weights,
            params,
        })
    }

    pub fn zero(anchors: PointCloud, params: KernelParams) -> Self {
        let n = anchors.len();
        Self {
            anchors,
            weights: DMatrix::zeros(n, 3),
            params,
        }
    }

    pub fn anchors(&self) -> &PointCloud {
        &self.anchors
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn params(&self) -> KernelParams {
        self.params
    }

    pub fn beta(&self) -> f64 {
        self.params.beta
    }

    /// Displacements `G(targets, anchors) W` without adding the targets.
    pub fn displacements(&self, targets: &[Point]) -> Result<DMatrix<f64>> {
        let g = gaussian_kernel(targets, self.anchors.points(), self.params)?;
        Ok(g * &self.weights)
    }

    /// The same anchors with weights scaled by `s`.
    pub fn scaled(&self, s: f64) -> DeformationField {
        DeformationField {
            anchors: self.anchors.clone(),
            weights: &self.weights * s,
            params: self.params,
        }
    }
}

/// `targets + G(targets, anchors) W`, preserving order.
pub fn apply_deformation(targets: &[Point], field: &DeformationField) -> Result<Vec<Point>> {
    let d = field.displacements(targets)?;
    Ok(targets
        .iter()
        .enumerate()
        .map(|(i, p)| Point::new(p.x + d[(i, 0)], p.y + d[(i, 1)], p.z + d[(i, 2)]))
        .collect())
}

/// Point-major flattening of an `n x 3` matrix.
pub fn flatten_rows(m: &DMatrix<f64>) -> DVector<f64> {
    let cols = m.ncols();
    DVector::from_fn(m.nrows() * cols, |k, _| m[(k / cols, k % cols)])
}

/// Inverse of [`flatten_rows`] for three columns.
pub fn unflatten_rows(v: &DVector<f64>) -> DMatrix<f64> {
    assert_eq!(v.len() % 3, 0, "vector length {} is not a multiple of 3", v.len());
    DMatrix::from_fn(v.len() / 3, 3, |i, j| v[3 * i + j])
}

/// Block expansion of an `n x n` kernel to `3n x 3n`: every scalar entry
/// becomes that scalar times the 3x3 identity, so that
/// `flatten(G W) == expand_kernel(G) * flatten(W)`.
pub fn expand_kernel(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if g.nrows() != g.ncols() {
        return Err(Error::InvalidInput(format!("kernel is {}x{}, not square", g.nrows(), g.ncols())));
    }
    let n = g.nrows();
    let mut out = DMatrix::zeros(3 * n, 3 * n);
    for j in 0..n {
        for i in 0..n {
            let v = g[(i, j)];
            for d in 0..3 {
                out[(3 * i + d, 3 * j + d)] = v;
            }
        }
    }
    Ok(out)
}

pub(crate) fn voxel_key(p: &Point, leaf: f64) -> [i64; 3] {
    [
        (p.x / leaf).floor() as i64,
        (p.y / leaf).floor() as i64,
        (p.z / leaf).floor() as i64,
    ]
}

/// Replaces the points of every occupied voxel by their centroid. Output
/// order follows the first occurrence of each voxel in the input.
pub fn voxel_downsample(cloud: &PointCloud, leaf: f64) -> Result<PointCloud> {
    if !(leaf > 0.0 && leaf.is_finite()) {
        return Err(Error::InvalidInput(format!("voxel leaf must be positive, got {leaf}")));
    }
    let mut slots: HashMap<[i64; 3], usize> = HashMap::new();
    let mut sums: Vec<(Vector3<f64>, usize)> = Vec::new();
    for p in cloud.points() {
        let slot = *slots.entry(voxel_key(p, leaf)).or_insert_with(|| {
            sums.push((Vector3::zeros(), 0));
            sums.len() - 1
        });
        sums[slot].0 += p.coords;
        sums[slot].1 += 1;
    }
    PointCloud::new(sums.into_iter().map(|(s, c)| Point::from(s / c as f64)).collect())
}

/// Pinhole intrinsics and output resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal: [f64; 2],
    pub principal: [f64; 2],
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center.
    pub fn with_vertical_fov(width: u32, height: u32, fov_y_degrees: f64) -> Self {
        let f = 0.5 * height as f64 / (0.5 * fov_y_degrees.to_radians()).tan();
        Self {
            focal: [f, f],
            principal: [0.5 * width as f64, 0.5 * height as f64],
            width,
            height,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput(format!("resolution {}x{} is empty", self.width, self.height)));
        }
        if !self.focal.iter().all(|f| *f > 0.0 && f.is_finite()) || !self.principal.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput("focal lengths must be positive and finite".into()));
        }
        Ok(())
    }
}

/// World-to-camera rigid transform plus pinhole intrinsics. The camera looks
/// along its +z axis, image x to the right and y down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "CameraParams", try_from = "CameraParams")]
pub struct CameraView {
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
    intrinsics: Intrinsics,
}

#[derive(Serialize, Deserialize)]
struct CameraParams {
    /// Row-major world-to-camera rotation.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    #[serde(flatten)]
    intrinsics: Intrinsics,
}

impl From<CameraView> for CameraParams {
    fn from(v: CameraView) -> Self {
        let r = v.rotation.matrix();
        CameraParams {
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: v.translation.into(),
            intrinsics: v.intrinsics,
        }
    }
}

impl TryFrom<CameraParams> for CameraView {
    type Error = Error;

    fn try_from(p: CameraParams) -> Result<Self> {
        let r = Matrix3::from_fn(|i, j| p.rotation[i][j]);
        CameraView::new(r, Vector3::from(p.translation), p.intrinsics)
    }
}

impl CameraView {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, intrinsics: Intrinsics) -> Result<Self> {
        intrinsics.validate()?;
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if !(ortho < 1e-9) || rotation.determinant() <= 0.0 {
            return Err(Error::InvalidInput("camera rotation is not a proper rotation".into()));
        }
        if !translation.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidInput("camera translation is not finite".into()));
        }
        Ok(Self {
            rotation: Rotation3::from_matrix_unchecked(rotation),
            translation,
            intrinsics,
        })
    }

    /// Camera at `eye` looking at `target`; image up follows `up` projected
    /// onto the image plane.
    pub fn look_at(eye: Point, target: Point, up: Vector3<f64>, intrinsics: Intrinsics) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidInput("camera eye coincides with its target".into()))?;
        let up_ortho = (up - forward * up.dot(&forward))
            .try_normalize(1e-9)
            .ok_or_else(|| Error::InvalidInput("up vector is parallel to the optical axis".into()))?;
        let y = -up_ortho;
        let x = y.cross(&forward);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), forward.transpose()]);
        let translation = -(rotation * eye.coords);
        Self::new(rotation, translation, intrinsics)
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point {
        Point::from(-(self.rotation.inverse() * self.translation))
    }

    /// Unit optical axis in world coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation.inverse() * Vector3::z()
    }

    pub fn to_camera(&self, p: &Point) -> Vector3<f64> {
        self.rotation * p.coords + self.translation
    }

    /// Continuous image coordinates and depth, or `None` behind the camera.
    pub fn project(&self, p: &Point) -> Option<(Vector2<f64>, f64)> {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((
            Vector2::new(k.focal[0] * c.x / c.z + k.principal[0], k.focal[1] * c.y / c.z + k.principal[1]),
            c.z,
        ))
    }
}

/// `count` cameras at distance `radius` from the origin, looking at it, with
/// directions on a deterministic Fibonacci spiral starting at +z.
pub fn viewpoint_sphere(count: usize, radius: f64, intrinsics: Intrinsics) -> Result<Vec<CameraView>> {
    if count < 1 {
        return Err(Error::InvalidInput("viewpoint count must be at least 1".into()));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidInput(format!("viewpoint radius must be positive, got {radius}")));
    }
    let golden_angle = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|k| {
            let z = if count == 1 { 1.0 } else { 1.0 - 2.0 * k as f64 / (count - 1) as f64 };
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden_angle * k as f64;
            let dir = Vector3::new(r * phi.cos(), r * phi.sin(), z);
            let up = if dir.cross(&Vector3::z()).norm() < 1e-6 { Vector3::x() } else { Vector3::z() };
            CameraView::look_at(Point::from(dir * radius), Point::origin(), up, intrinsics)
        })
        .collect()
}
