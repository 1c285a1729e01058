//! Minimal renderer substitute.
//!
//! Models are rendered as depth-tested point splats into position images
//! (per-pixel world coordinates of the visible surface). Per-point offsets
//! are carried to pixels by a linear radial basis function interpolant with
//! an affine tail, and the zoom operation crops both renders to a common
//! aspect-correct box around the two objects.

use nalgebra::{DMatrix, Dyn, Vector3, LU};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{bounding_diagonal, CameraView, Mesh, Point, Pose};
use crate::io::{DType, Tensor};

/// Per-pixel 3D positions of the visible surface plus a foreground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionImage {
    width: usize,
    height: usize,
    data: Vec<Vector3<f64>>,
    mask: Vec<bool>,
}

impl PositionImage {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![Vector3::zeros(); width * height],
            mask: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[Vector3<f64>] {
        &self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, x: usize, y: usize) -> Option<Point> {
        let i = y * self.width + x;
        self.mask[i].then(|| Point::from(self.data[i]))
    }

    pub fn set(&mut self, x: usize, y: usize, p: Point) {
        let i = y * self.width + x;
        self.data[i] = p.coords;
        self.mask[i] = true;
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// `(pixel index, position)` for every foreground pixel, row-major.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, Point)> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (i, Point::from(self.data[i])))
    }

    /// Foreground positions mapped through `transform`; background stays zero.
    pub fn transformed(&self, transform: &Pose) -> PositionImage {
        let mut out = self.clone();
        for (i, p) in self.foreground() {
            out.data[i] = (transform * p).coords;
        }
        out
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width, 3],
            DType::F32,
            "position",
            self.data.iter().flat_map(|v| [v.x, v.y, v.z]).collect(),
        )
        .expect("shape matches data")
    }

    pub fn from_tensor(tensor: &Tensor, mask: Vec<bool>) -> Result<Self> {
        let (height, width) = image_shape(tensor)?;
        if mask.len() != width * height {
            return Err(Error::InvalidInput("mask resolution differs from the position tensor".into()));
        }
        let data = tensor
            .data
            .chunks_exact(3)
            .zip(&mask)
            .map(|(c, &m)| if m { Vector3::new(c[0], c[1], c[2]) } else { Vector3::zeros() })
            .collect();
        Ok(Self { width, height, data, mask })
    }

    /// 0 for background, 255 for foreground.
    pub fn mask_bytes(&self) -> Vec<u8> {
        self.mask.iter().map(|&m| if m { 255 } else { 0 }).collect()
    }
}

fn image_shape(tensor: &Tensor) -> Result<(usize, usize)> {
    match tensor.header.shape.as_slice() {
        &[h, w, 3] => Ok((h, w)),
        s => Err(Error::InvalidInput(format!("expected an H x W x 3 tensor, got shape {s:?}"))),
    }
}

/// Per-pixel deformation vectors. `data` is in meters; `scale` is the
/// factor applied when the image is exported.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationImage {
    width: usize,
    height: usize,
    data: Vec<Vector3<f64>>,
    mask: Vec<bool>,
    scale: f64,
}

impl DeformationImage {
    pub fn new(width: usize, height: usize, data: Vec<Vector3<f64>>, mask: Vec<bool>, scale: f64) -> Result<Self> {
        if data.len() != width * height || mask.len() != width * height {
            return Err(Error::InvalidInput("deformation image buffers do not match the resolution".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!("export scale must be positive, got {scale}")));
        }
        let mut image = Self {
            width,
            height,
            data,
            mask,
            scale,
        };
        for (d, &m) in image.data.iter_mut().zip(&image.mask) {
            if !m {
                *d = Vector3::zeros();
            }
        }
        Ok(image)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[Vector3<f64>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Vector3<f64>] {
        &mut self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    /// Values multiplied by the export scale.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width, 3],
            DType::F32,
            format!("deformation x{}", self.scale),
            self.data.iter().flat_map(|v| [v.x * self.scale, v.y * self.scale, v.z * self.scale]).collect(),
        )
        .expect("shape matches data")
    }

    /// Inverse of [`to_tensor`](Self::to_tensor): divides by `scale`.
    pub fn from_tensor(tensor: &Tensor, mask: Vec<bool>, scale: f64) -> Result<Self> {
        let (height, width) = image_shape(tensor)?;
        let data = tensor
            .data
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0] / scale, c[1] / scale, c[2] / scale))
            .collect();
        Self::new(width, height, data, mask, scale)
    }
}

/// Grayscale intensities in `[0, 1]`, used for masks fed to the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl MaskImage {
    pub fn from_bools(width: usize, height: usize, mask: &[bool]) -> Self {
        Self {
            width,
            height,
            data: mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Thresholded at one half: 0 or 255.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| if v >= 0.5 { 255 } else { 0 }).collect()
    }
}

/// Depth-tested splatting of points seen by `view`. Every point covers the
/// pixels within `radius` (pixels) of the one it projects into; the smallest
/// camera depth wins and equal depths keep the earlier point.
pub fn splat_position_image(points: &[Point], view: &CameraView, radius: u32) -> Result<PositionImage> {
    let (w, h) = (view.width() as usize, view.height() as usize);
    let mut image = PositionImage::empty(w, h);
    let mut depth = vec![f64::INFINITY; w * h];
    let r = radius as i64;
    for p in points {
        let Some((uv, z)) = view.project(p) else { continue };
        if !(uv.x.is_finite() && uv.y.is_finite()) {
            continue;
        }
        let (px, py) = (uv.x.floor() as i64, uv.y.floor() as i64);
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let (x, y) = (px + dx, py + dy);
                if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                    continue;
                }
                let i = y as usize * w + x as usize;
                if z < depth[i] {
                    depth[i] = z;
                    image.data[i] = p.coords;
                    image.mask[i] = true;
                }
            }
        }
    }
    if image.foreground_count() == 0 {
        return Err(Error::EmptyRender);
    }
    Ok(image)
}

/// Splatting parameters for meshes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplatConfig {
    pub radius: u32,
    /// Splat radius for bare point clouds, which are not densified.
    pub cloud_radius: u32,
    /// Surface samples per pixel of the expected image footprint.
    pub density: f64,
    pub max_samples: usize,
}

impl Default for SplatConfig {
    fn default() -> Self {
        Self {
            radius: 1,
            cloud_radius: 2,
            density: 20.0,
            max_samples: 400_000,
        }
    }
}

impl SplatConfig {
    /// Sample count for `mesh` placed by `pose` and seen by `view`: half the
    /// surface area projected at the distance of the mesh centroid.
    pub fn sample_count(&self, mesh: &Mesh, pose: &Pose, view: &CameraView) -> usize {
        let centroid = pose * mesh.vertex_cloud().centroid();
        let dist = (view.center() - centroid).norm().max(1e-9);
        let f = view.intrinsics().focal;
        let pixels = 0.5 * mesh.surface_area() * f[0] * f[1] / (dist * dist);
        ((self.density * pixels).ceil() as usize).clamp(1, self.max_samples)
    }
}

/// Densely samples `mesh`, places it with `pose` and splats it.
pub fn render_mesh(mesh: &Mesh, pose: &Pose, view: &CameraView, config: &SplatConfig, seed: u64) -> Result<PositionImage> {
    let count = config.sample_count(mesh, pose, view);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Point> = mesh.sample_surface(count, &mut rng).iter().map(|p| pose * p).collect();
    splat_position_image(&points, view, config.radius)
}

/// Linear-kernel RBF interpolant `f(p) = sum_j a_j |p - c_j| + b0 + b . p`
/// with the side conditions `sum_j a_j = 0`, `sum_j a_j c_j = 0`. The system
/// matrix only depends on the centers and is factorized once.
pub struct LinearRbf {
    centers: Vec<Point>,
    lu: LU<f64, Dyn, Dyn>,
}

/// Coefficients of a fitted [`LinearRbf`]: `n` kernel rows then 4 affine rows.
#[derive(Debug, Clone)]
pub struct RbfCoefficients(DMatrix<f64>);

impl LinearRbf {
    pub fn new(centers: &[Point]) -> Result<Self> {
        let n = centers.len();
        if n == 0 {
            return Err(Error::InvalidInput("RBF without centers".into()));
        }
        let mut a = DMatrix::<f64>::zeros(n + 4, n + 4);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = (centers[i] - centers[j]).norm();
            }
            let row = [1.0, centers[i].x, centers[i].y, centers[i].z];
            for (k, v) in row.iter().enumerate() {
                a[(i, n + k)] = *v;
                a[(n + k, i)] = *v;
            }
        }
        let probe = DMatrix::<f64>::identity(n + 4, 1);
        let lu = a.clone().lu();
        if lu.solve(&probe).is_some_and(|x| x.iter().all(|v| v.is_finite())) && lu.is_invertible() {
            return Ok(Self {
                centers: centers.to_vec(),
                lu,
            });
        }
        let bump = 1e-10 * bounding_diagonal(centers).max(f64::MIN_POSITIVE);
        for i in 0..n {
            a[(i, i)] += bump;
        }
        let lu = a.lu();
        if lu.solve(&probe).is_some_and(|x| x.iter().all(|v| v.is_finite())) && lu.is_invertible() {
            Ok(Self {
                centers: centers.to_vec(),
                lu,
            })
        } else {
            Err(Error::Solver {
                iteration: 0,
                reason: "RBF system singular even after regularization (coplanar or duplicated centers?)".into(),
            })
        }
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    /// Fits the interpolant to per-center values (n x 3).
    pub fn fit(&self, values: &DMatrix<f64>) -> Result<RbfCoefficients> {
        let n = self.centers.len();
        if values.nrows() != n || values.ncols() != 3 {
            return Err(Error::InvalidInput(format!(
                "values are {}x{}, expected {n}x3",
                values.nrows(),
                values.ncols()
            )));
        }
        let mut rhs = DMatrix::zeros(n + 4, 3);
        rhs.rows_mut(0, n).copy_from(values);
        let coeffs = self.lu.solve(&rhs).ok_or_else(|| Error::Solver {
            iteration: 0,
            reason: "RBF solve failed".into(),
        })?;
        Ok(RbfCoefficients(coeffs))
    }

    pub fn evaluate(&self, coeffs: &RbfCoefficients, p: &Point) -> Vector3<f64> {
        let c = &coeffs.0;
        let n = self.centers.len();
        let mut out = Vector3::new(c[(n, 0)], c[(n, 1)], c[(n, 2)]);
        for k in 0..3 {
            out += Vector3::new(c[(n + 1 + k, 0)], c[(n + 1 + k, 1)], c[(n + 1 + k, 2)]) * p[k];
        }
        for (j, cj) in self.centers.iter().enumerate() {
            let r = (p - cj).norm();
            out += Vector3::new(c[(j, 0)], c[(j, 1)], c[(j, 2)]) * r;
        }
        out
    }

    /// Interpolated vectors at every foreground pixel of `positions`.
    pub fn rasterize(&self, positions: &PositionImage, coeffs: &RbfCoefficients) -> DeformationImage {
        let data = positions
            .data
            .iter()
            .zip(&positions.mask)
            .map(|(p, &m)| if m { self.evaluate(coeffs, &Point::from(*p)) } else { Vector3::zeros() })
            .collect();
        DeformationImage::new(positions.width, positions.height, data, positions.mask.clone(), 1.0)
            .expect("buffers sized from the position image")
    }
}

/// Interpolates the per-point offsets `delta` (n x 3, rows aligned with
/// `canonical`) to the foreground pixels of `positions`, which must be
/// expressed in the canonical model's frame.
pub fn rasterize_target(positions: &PositionImage, canonical: &[Point], delta: &DMatrix<f64>) -> Result<DeformationImage> {
    let rbf = LinearRbf::new(canonical)?;
    let coeffs = rbf.fit(delta)?;
    Ok(rbf.rasterize(positions, &coeffs))
}

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PixelRect {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl PixelRect {
    pub fn union(&self, other: &PixelRect) -> PixelRect {
        PixelRect {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }
}

pub fn mask_bounds(mask: &[bool], width: usize) -> Option<PixelRect> {
    let mut rect: Option<PixelRect> = None;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (x, y) = (i % width, i / width);
        let r = rect.get_or_insert(PixelRect {
            x_min: x,
            y_min: y,
            x_max: x,
            y_max: y,
        });
        r.x_min = r.x_min.min(x);
        r.x_max = r.x_max.max(x);
        r.y_min = r.y_min.min(y);
        r.y_max = r.y_max.max(y);
    }
    rect
}

/// Continuous source-frame rectangle mapped onto the output image.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CropBox {
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
    pub out_width: usize,
    pub out_height: usize,
}

impl CropBox {
    /// Output pixels per source pixel along x and y.
    pub fn scale_factors(&self) -> [f64; 2] {
        [self.out_width as f64 / self.width, self.out_height as f64 / self.height]
    }

    /// Source coordinates to output coordinates (continuous, pixel corners at integers).
    pub fn to_output(&self, sx: f64, sy: f64) -> (f64, f64) {
        let [kx, ky] = self.scale_factors();
        ((sx - self.x0) * kx, (sy - self.y0) * ky)
    }

    pub fn to_source(&self, ox: f64, oy: f64) -> (f64, f64) {
        let [kx, ky] = self.scale_factors();
        (self.x0 + ox / kx, self.y0 + oy / ky)
    }
}

/// Smallest box with the target aspect ratio containing `union`, centered on
/// it and shifted inside the `frame` when it fits. The flag reports a box
/// larger than the frame, whose outside is padded with background.
pub fn crop_box(union: &PixelRect, frame: (usize, usize), target: (usize, usize)) -> (CropBox, bool) {
    let (uw, uh) = (union.width(), union.height());
    let (tw, th) = target;
    let (mut width, mut height) = (uw as f64, uh as f64);
    match (uw * th).cmp(&(uh * tw)) {
        std::cmp::Ordering::Less => width = uh as f64 * tw as f64 / th as f64,
        std::cmp::Ordering::Greater => height = uw as f64 * th as f64 / tw as f64,
        std::cmp::Ordering::Equal => {}
    }
    let cx = 0.5 * (union.x_min + union.x_max + 1) as f64;
    let cy = 0.5 * (union.y_min + union.y_max + 1) as f64;
    let mut padded = false;
    let mut place = |center: f64, size: f64, limit: usize| {
        let start = center - 0.5 * size;
        if size <= limit as f64 {
            start.clamp(0.0, limit as f64 - size)
        } else {
            padded = true;
            start
        }
    };
    let x0 = place(cx, width, frame.0);
    let y0 = place(cy, height, frame.1);
    (
        CropBox {
            x0,
            y0,
            width,
            height,
            out_width: tw,
            out_height: th,
        },
        padded,
    )
}

/// The four zoomed oracle inputs.
#[derive(Debug, Clone)]
pub struct ZoomResult {
    pub observed: PositionImage,
    /// Bounding-box mask of the observed object.
    pub observed_mask: MaskImage,
    pub canonical: PositionImage,
    pub canonical_mask: MaskImage,
    pub crop: CropBox,
    pub padded: bool,
}

fn resample_nearest(image: &PositionImage, crop: &CropBox) -> PositionImage {
    let mut out = PositionImage::empty(crop.out_width, crop.out_height);
    for oy in 0..crop.out_height {
        for ox in 0..crop.out_width {
            let (sx, sy) = crop.to_source(ox as f64 + 0.5, oy as f64 + 0.5);
            let (x, y) = (sx.floor(), sy.floor());
            if x < 0.0 || y < 0.0 || x >= image.width as f64 || y >= image.height as f64 {
                continue;
            }
            if let Some(p) = image.get(x as usize, y as usize) {
                out.set(ox, oy, p);
            }
        }
    }
    out
}

fn resample_bilinear(src: &MaskImage, crop: &CropBox) -> MaskImage {
    let at = |x: i64, y: i64| -> f32 {
        if x < 0 || y < 0 || x >= src.width as i64 || y >= src.height as i64 {
            0.0
        } else {
            src.data[y as usize * src.width + x as usize]
        }
    };
    let mut data = Vec::with_capacity(crop.out_width * crop.out_height);
    for oy in 0..crop.out_height {
        for ox in 0..crop.out_width {
            let (sx, sy) = crop.to_source(ox as f64 + 0.5, oy as f64 + 0.5);
            let (fx, fy) = (sx - 0.5, sy - 0.5);
            let (x, y) = (fx.floor(), fy.floor());
            let (ax, ay) = ((fx - x) as f32, (fy - y) as f32);
            let (x, y) = (x as i64, y as i64);
            let v = at(x, y) * (1.0 - ax) * (1.0 - ay)
                + at(x + 1, y) * ax * (1.0 - ay)
                + at(x, y + 1) * (1.0 - ax) * ay
                + at(x + 1, y + 1) * ax * ay;
            data.push(v);
        }
    }
    MaskImage {
        width: crop.out_width,
        height: crop.out_height,
        data,
    }
}

/// Crops both renders to the aspect-correct box around their foregrounds and
/// resamples them to `target` (width, height). Position data is resampled
/// nearest-neighbor; masks bilinearly.
pub fn zoom(observed: &PositionImage, canonical: &PositionImage, target: (usize, usize)) -> Result<ZoomResult> {
    if observed.width != canonical.width || observed.height != canonical.height {
        return Err(Error::InvalidInput("observed and canonical renders differ in resolution".into()));
    }
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::InvalidInput("zoom target resolution is empty".into()));
    }
    let obs_box = mask_bounds(&observed.mask, observed.width).ok_or(Error::EmptyRender)?;
    let can_box = mask_bounds(&canonical.mask, canonical.width).ok_or(Error::EmptyRender)?;
    let (crop, padded) = crop_box(&obs_box.union(&can_box), (observed.width, observed.height), target);

    let mut box_mask = vec![false; observed.width * observed.height];
    for y in obs_box.y_min..=obs_box.y_max {
        for x in obs_box.x_min..=obs_box.x_max {
            box_mask[y * observed.width + x] = true;
        }
    }
    Ok(ZoomResult {
        observed: resample_nearest(observed, &crop),
        observed_mask: resample_bilinear(&MaskImage::from_bools(observed.width, observed.height, &box_mask), &crop),
        canonical: resample_nearest(canonical, &crop),
        canonical_mask: resample_bilinear(&MaskImage::from_bools(canonical.width, canonical.height, &canonical.mask), &crop),
        crop,
        padded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Intrinsics;
    use nalgebra::{Matrix3, Vector3};
    use rand::Rng;

    fn front_camera(w: u32, h: u32) -> CameraView {
        let k = Intrinsics {
            focal: [50.0, 50.0],
            principal: [w as f64 / 2.0, h as f64 / 2.0],
            width: w,
            height: h,
        };
        CameraView::new(Matrix3::identity(), Vector3::zeros(), k).unwrap()
    }

    #[test]
    fn center_ray_hits_principal_pixel() {
        let view = front_camera(32, 24);
        let p = Point::new(0.0, 0.0, 3.0);
        let img = splat_position_image(&[p], &view, 0).unwrap();
        assert_eq!(img.foreground_count(), 1);
        assert_eq!(img.get(16, 12), Some(p));
    }

    #[test]
    fn nearest_depth_wins() {
        let view = front_camera(32, 24);
        let near = Point::new(0.0, 0.0, 1.0);
        let far = Point::new(0.0, 0.0, 2.0);
        assert_eq!(splat_position_image(&[far, near], &view, 0).unwrap().get(16, 12), Some(near));
        assert_eq!(splat_position_image(&[near, far], &view, 0).unwrap().get(16, 12), Some(near));
    }

    #[test]
    fn empty_render_is_an_error() {
        let view = front_camera(32, 24);
        assert!(matches!(splat_position_image(&[Point::new(0.0, 0.0, -1.0)], &view, 1), Err(Error::EmptyRender)));
        assert!(matches!(splat_position_image(&[Point::new(100.0, 0.0, 1.0)], &view, 1), Err(Error::EmptyRender)));
    }

    #[test]
    fn foreground_matches_brute_force_projection() {
        let view = front_camera(40, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point> = (0..300)
            .map(|_| Point::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..3.0)))
            .collect();
        for radius in [0u32, 1, 2] {
            let img = splat_position_image(&pts, &view, radius).unwrap();
            let r = radius as f64;
            let mut count = 0;
            for y in 0..30 {
                for x in 0..40 {
                    let covered = pts.iter().any(|p| {
                        if p.z <= 0.0 {
                            return false;
                        }
                        let u = (50.0 * p.x / p.z + 20.0).floor();
                        let v = (50.0 * p.y / p.z + 15.0).floor();
                        (u - x as f64).powi(2) + (v - y as f64).powi(2) <= r * r
                    });
                    count += covered as usize;
                }
            }
            assert_eq!(img.foreground_count(), count, "radius {radius}");
        }
    }

    fn scattered(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn image_at(points: &[Point]) -> PositionImage {
        let mut img = PositionImage::empty(points.len() + 1, 1);
        for (i, p) in points.iter().enumerate() {
            img.set(i, 0, *p);
        }
        img
    }

    #[test]
    fn rbf_reproduces_constant_and_linear_fields() {
        let centers = scattered(40, 1);
        let queries = scattered(25, 2);
        let positions = image_at(&queries);

        let d = Vector3::new(0.01, -0.02, 0.005);
        let constant = DMatrix::from_fn(40, 3, |_, j| d[j]);
        let img = rasterize_target(&positions, &centers, &constant).unwrap();
        for (i, _) in queries.iter().enumerate() {
            assert!((img.data()[i] - d).amax() < 1e-9);
        }
        assert_eq!(img.data()[queries.len()], Vector3::zeros());
        assert!(!img.mask()[queries.len()]);

        let a = Matrix3::new(0.1, -0.2, 0.05, 0.0, 0.3, 0.1, -0.1, 0.02, 0.2);
        let b = Vector3::new(0.01, 0.02, -0.03);
        let linear = DMatrix::from_fn(40, 3, |i, j| (a * centers[i].coords + b)[j]);
        let img = rasterize_target(&positions, &centers, &linear).unwrap();
        for (i, q) in queries.iter().enumerate() {
            assert!((img.data()[i] - (a * q.coords + b)).amax() < 1e-6);
        }
    }

    #[test]
    fn rbf_interpolates_at_centers() {
        let centers = scattered(30, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values = DMatrix::from_fn(30, 3, |_, _| rng.random_range(-0.1..0.1));
        let img = rasterize_target(&image_at(&centers), &centers, &values).unwrap();
        for i in 0..30 {
            for k in 0..3 {
                assert!((img.data()[i][k] - values[(i, k)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rbf_retries_duplicated_centers() {
        let mut centers = scattered(10, 6);
        centers.push(centers[0]);
        assert!(LinearRbf::new(&centers).is_ok());
    }

    #[test]
    fn crop_box_equals_union_at_target_aspect() {
        let union = PixelRect { x_min: 10, y_min: 20, x_max: 73, y_max: 67 };
        let (b, padded) = crop_box(&union, (200, 150), (256, 192));
        assert!(!padded);
        assert_eq!((b.x0, b.y0, b.width, b.height), (10.0, 20.0, 64.0, 48.0));
    }

    #[test]
    fn crop_box_widens_and_shifts_inside() {
        let union = PixelRect { x_min: 0, y_min: 10, x_max: 9, y_max: 39 };
        let (b, padded) = crop_box(&union, (100, 100), (4, 3));
        assert!(!padded);
        assert_eq!((b.width, b.height), (40.0, 30.0));
        assert_eq!((b.x0, b.y0), (0.0, 10.0));
        let (b, padded) = crop_box(&union, (20, 100), (4, 3));
        assert!(padded);
        assert_eq!(b.x0, 5.0 - 20.0);
    }

    #[test]
    fn single_pixels_land_where_the_crop_transform_says() {
        let mut obs = PositionImage::empty(100, 80);
        let mut can = PositionImage::empty(100, 80);
        let a = Point::new(1.0, 2.0, 3.0);
        let b = Point::new(-1.0, 0.5, 2.0);
        obs.set(30, 40, a);
        can.set(45, 44, b);
        let z = zoom(&obs, &can, (32, 24)).unwrap();
        // union is 16 x 5 pixels, widened in height to 16 x 12
        assert_eq!((z.crop.width, z.crop.height), (16.0, 12.0));
        assert_eq!((z.crop.x0, z.crop.y0), (30.0, 36.5));
        for (img, (sx, sy), p) in [(&z.observed, (30.5, 40.5), a), (&z.canonical, (45.5, 44.5), b)] {
            let (ox, oy) = z.crop.to_output(sx, sy);
            assert_eq!(img.get(ox.floor() as usize, oy.floor() as usize), Some(p));
        }
        assert_eq!(z.observed.foreground_count(), 4);
        assert_eq!(z.crop.scale_factors(), [2.0, 2.0]);
    }

    #[test]
    fn inverse_crop_maps_output_centers_into_box() {
        let union = PixelRect { x_min: 3, y_min: 7, x_max: 40, y_max: 19 };
        let (b, _) = crop_box(&union, (64, 48), (32, 24));
        for oy in 0..24 {
            for ox in 0..32 {
                let (sx, sy) = b.to_source(ox as f64 + 0.5, oy as f64 + 0.5);
                assert!(sx > b.x0 && sx < b.x0 + b.width && sy > b.y0 && sy < b.y0 + b.height);
                let (rx, ry) = b.to_output(sx, sy);
                assert!((rx - ox as f64 - 0.5).abs() < 1e-9 && (ry - oy as f64 - 0.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zoom_rejects_empty_foreground() {
        let mut obs = PositionImage::empty(10, 10);
        obs.set(1, 1, Point::origin());
        let can = PositionImage::empty(10, 10);
        assert!(matches!(zoom(&obs, &can, (4, 3)), Err(Error::EmptyRender)));
    }

    #[test]
    fn splat_is_deterministic() {
        let view = front_camera(40, 30);
        let pts = scattered(500, 7).into_iter().map(|p| p + Vector3::new(0.0, 0.0, 3.0)).collect::<Vec<_>>();
        assert_eq!(splat_position_image(&pts, &view, 1).unwrap(), splat_position_image(&pts, &view, 1).unwrap());
    }
}
