//! Inference of the full deformation field from the deformations of the
//! visible canonical points.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_deformation, flatten_rows, gaussian_kernel, unflatten_rows, DeformationField, Mesh, Point, PointCloud};
use crate::imaging::{DeformationImage, PositionImage};
use crate::linalg::thin_svd;
use crate::shape_space::{LatentVector, ShapeSpace};
use crate::spatial::KdTree;

/// Per-point deltas of the canonical cloud with the set of points that
/// received at least one measurement. Rows outside `visible` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDeltas {
    deltas: DMatrix<f64>,
    visible: Vec<usize>,
}

impl SparseDeltas {
    pub fn new(deltas: DMatrix<f64>, mut visible: Vec<usize>) -> Result<Self> {
        if deltas.ncols() != 3 {
            return Err(Error::InvalidInput(format!("deltas have {} columns, expected 3", deltas.ncols())));
        }
        visible.sort_unstable();
        visible.dedup();
        if visible.is_empty() {
            return Err(Error::NoVisiblePoints);
        }
        if let Some(&i) = visible.last().filter(|&&i| i >= deltas.nrows()) {
            return Err(Error::InvalidInput(format!("visible index {i} out of range for {} points", deltas.nrows())));
        }
        let mut mask = vec![false; deltas.nrows()];
        for &i in &visible {
            mask[i] = true;
        }
        let mut deltas = deltas;
        for (i, seen) in mask.iter().enumerate() {
            if !seen {
                deltas.row_mut(i).fill(0.0);
            }
        }
        if deltas.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite delta".into()));
        }
        Ok(Self { deltas, visible })
    }

    /// Every row visible.
    pub fn full(deltas: DMatrix<f64>) -> Result<Self> {
        let n = deltas.nrows();
        Self::new(deltas, (0..n).collect())
    }

    /// Keeps the listed rows of `deltas` and zeroes the rest.
    pub fn subset(deltas: &DMatrix<f64>, visible: Vec<usize>) -> Result<Self> {
        Self::new(deltas.clone(), visible)
    }

    pub fn deltas(&self) -> &DMatrix<f64> {
        &self.deltas
    }

    pub fn visible(&self) -> &[usize] {
        &self.visible
    }

    pub fn len(&self) -> usize {
        self.deltas.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.nrows() == 0
    }
}

/// Fitted latent, its field and the least-squares residual over the
/// visible rows (squared meters).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionResult {
    pub latent: LatentVector,
    #[serde(skip)]
    pub field: Option<DeformationField>,
    pub residual: f64,
    /// The visible rows did not determine every latent direction.
    pub rank_deficient: bool,
    pub visible_points: usize,
}

impl CompletionResult {
    /// The field, rebuilt from the latent when it was not kept (after deserialization).
    pub fn field(&self, space: &ShapeSpace) -> Result<DeformationField> {
        match &self.field {
            Some(f) => Ok(f.clone()),
            None => space.latent_to_field(&self.latent),
        }
    }
}

/// Pixel-to-point assignment: each foreground pixel of `positions` (in the
/// canonical model's frame) goes to its nearest canonical point, and each
/// point that received pixels takes the mean of their deformation vectors.
pub fn pixels_to_sparse_deltas(deformation: &DeformationImage, positions: &PositionImage, index: &KdTree) -> Result<SparseDeltas> {
    if deformation.width() != positions.width() || deformation.height() != positions.height() {
        return Err(Error::InvalidInput("deformation and position images differ in resolution".into()));
    }
    let n = index.len();
    let mut sums = DMatrix::<f64>::zeros(n, 3);
    let mut counts = vec![0usize; n];
    for (pixel, p) in positions.foreground() {
        let (i, _) = index.nearest(&p);
        let d = deformation.data()[pixel];
        for k in 0..3 {
            sums[(i, k)] += d[k];
        }
        counts[i] += 1;
    }
    let visible: Vec<usize> = (0..n).filter(|&i| counts[i] > 0).collect();
    if visible.is_empty() {
        return Err(Error::NoVisiblePoints);
    }
    for &i in &visible {
        let c = counts[i] as f64;
        for k in 0..3 {
            sums[(i, k)] /= c;
        }
    }
    SparseDeltas::new(sums, visible)
}

/// Precomputed pieces of the completion problem for one shape space:
/// `G L` and `G w_bar` in flattened form, and a spatial index over the
/// canonical cloud. Immutable and shareable across threads.
pub struct Completer<'a> {
    space: &'a ShapeSpace,
    kernel: DMatrix<f64>,
    kernel_basis: DMatrix<f64>,
    kernel_mean: DVector<f64>,
    index: KdTree,
}

impl<'a> Completer<'a> {
    pub fn new(space: &'a ShapeSpace) -> Result<Self> {
        let c = space.canonical().points();
        let kernel = gaussian_kernel(c, c, space.params())?;
        let l = space.latent_dim();
        let mut kernel_basis = DMatrix::zeros(3 * c.len(), l);
        for k in 0..l {
            let col = unflatten_rows(&space.basis().column(k).into_owned());
            kernel_basis.set_column(k, &flatten_rows(&(&kernel * col)));
        }
        let kernel_mean = flatten_rows(&(&kernel * unflatten_rows(space.mean())));
        Ok(Self {
            space,
            kernel,
            kernel_basis,
            kernel_mean,
            index: KdTree::build(c),
        })
    }

    pub fn space(&self) -> &ShapeSpace {
        self.space
    }

    /// `G(C, C)`.
    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn index(&self) -> &KdTree {
        &self.index
    }

    /// Per-point deltas `G(C, C) W` of a field anchored at the canonical cloud.
    pub fn deltas_of(&self, field: &DeformationField) -> Result<DMatrix<f64>> {
        if field.anchors() != self.space.canonical() {
            return Err(Error::InvalidField("field is not anchored at the canonical cloud".into()));
        }
        Ok(&self.kernel * field.weights())
    }

    /// Deltas produced by latent coordinates `x`.
    pub fn deltas_of_latent(&self, x: &LatentVector) -> Result<DMatrix<f64>> {
        self.space.latent_to_field(x).and_then(|f| self.deltas_of(&f))
    }

    fn system(&self, sparse: &SparseDeltas) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let n = self.space.canonical().len();
        if sparse.len() != n {
            return Err(Error::InvalidInput(format!("{} deltas for {n} canonical points", sparse.len())));
        }
        let l = self.space.latent_dim();
        let rows = 3 * sparse.visible().len();
        let mut a = DMatrix::zeros(rows, l);
        let mut b = DVector::zeros(rows);
        for (r, &i) in sparse.visible().iter().enumerate() {
            for k in 0..3 {
                a.row_mut(3 * r + k).copy_from(&self.kernel_basis.row(3 * i + k));
                b[3 * r + k] = sparse.deltas()[(i, k)] - self.kernel_mean[3 * i + k];
            }
        }
        Ok((a, b))
    }

    /// `|A x - B|^2` over the visible rows.
    pub fn residual(&self, sparse: &SparseDeltas, x: &LatentVector) -> Result<f64> {
        let (a, b) = self.system(sparse)?;
        if x.dim() != a.ncols() {
            return Err(Error::InvalidInput("latent dimension mismatch".into()));
        }
        Ok((a * &x.0 - b).norm_squared())
    }

    /// Minimal-norm solution of `min |A x - B|^2 + ridge |x|^2`.
    pub fn fit(&self, sparse: &SparseDeltas, ridge: f64) -> Result<CompletionResult> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidConfig(format!("ridge must be nonnegative, got {ridge}")));
        }
        let (a, b) = self.system(sparse)?;
        let l = a.ncols();
        let (sa, sb) = if ridge > 0.0 {
            let mut sa = DMatrix::zeros(a.nrows() + l, l);
            sa.rows_mut(0, a.nrows()).copy_from(&a);
            sa.rows_mut(a.nrows(), l).fill_diagonal(ridge.sqrt());
            let mut sb = DVector::zeros(b.len() + l);
            sb.rows_mut(0, b.len()).copy_from(&b);
            (sa, sb)
        } else {
            (a.clone(), b.clone())
        };
        let svd = thin_svd(&sa);
        let sigma_max = svd.sigma.max();
        let eps = sa.nrows().max(l) as f64 * f64::EPSILON * sigma_max;
        let rank = svd.rank(eps);
        let x = svd.solve(&sb, eps);
        let residual = (&a * &x - &b).norm_squared();
        let latent = LatentVector(x);
        let field = self.space.latent_to_field(&latent)?;
        Ok(CompletionResult {
            latent,
            field: Some(field),
            residual,
            rank_deficient: rank < l,
            visible_points: sparse.visible().len(),
        })
    }
}

/// One-shot [`Completer::fit`].
pub fn fit_latent(space: &ShapeSpace, sparse: &SparseDeltas, ridge: f64) -> Result<CompletionResult> {
    Completer::new(space)?.fit(sparse, ridge)
}

/// Warps the canonical mesh by the completed field; faces are kept.
pub fn reconstruct_mesh(space: &ShapeSpace, result: &CompletionResult, canonical_mesh: &Mesh) -> Result<Mesh> {
    let field = result.field(space)?;
    canonical_mesh.with_vertices(apply_deformation(canonical_mesh.vertices(), &field)?)
}

/// Deforms the canonical cloud by two latents. Point `i` of both outputs
/// derives from canonical point `i`.
pub fn cross_instance_correspondence(space: &ShapeSpace, xa: &LatentVector, xb: &LatentVector) -> Result<(PointCloud, PointCloud)> {
    let c = space.canonical().points();
    let warp = |x: &LatentVector| -> Result<PointCloud> {
        let field = space.latent_to_field(x)?;
        PointCloud::new(apply_deformation(c, &field)?)
    };
    Ok((warp(xa)?, warp(xb)?))
}

/// Canonical points moved by per-point deltas.
pub fn displaced(points: &[Point], deltas: &DMatrix<f64>) -> Vec<Point> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| p + nalgebra::Vector3::new(deltas[(i, 0)], deltas[(i, 1)], deltas[(i, 2)]))
        .collect()
}
