//! Low-dimensional affine model of a category's deformation fields.
//!
//! Each training instance is registered against the canonical cloud `C`,
//! giving weights `W_i` (n x 3). Flattened point-major to `w_i` (3n), their
//! mean `w_bar` and leading principal directions `L` (3n x l) define the
//! map from a latent vector `x` to the field `w = L x + w_bar`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpd::{cpd_nonrigid, CpdConfig};
use crate::error::{Error, Result};
use crate::geometry::{flatten_rows, unflatten_rows, DeformationField, KernelParams, Point, PointCloud, FLATTENING};
use crate::io::{decode_values, encode_values, write_atomic, DType};
use crate::linalg::thin_svd;

pub const MAGIC: &str = "MFSS1";

/// Coordinates in a shape space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", from = "Vec<f64>")]
pub struct LatentVector(pub DVector<f64>);

impl From<LatentVector> for Vec<f64> {
    fn from(x: LatentVector) -> Self {
        x.0.as_slice().to_vec()
    }
}

impl From<Vec<f64>> for LatentVector {
    fn from(v: Vec<f64>) -> Self {
        LatentVector(DVector::from_vec(v))
    }
}

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("latent vector has a non-finite entry".into()));
        }
        Ok(Self(DVector::from_vec(values)))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpace {
    canonical: PointCloud,
    params: KernelParams,
    mean: DVector<f64>,
    basis: DMatrix<f64>,
}

impl ShapeSpace {
    /// Assembles a space from its parts; `basis` columns must be orthonormal.
    pub fn from_parts(canonical: PointCloud, params: KernelParams, mean: DVector<f64>, basis: DMatrix<f64>) -> Result<Self> {
        let rows = 3 * canonical.len();
        if mean.len() != rows || basis.nrows() != rows {
            return Err(Error::InvalidInput(format!(
                "mean has {} and basis {} rows, expected 3n = {rows}",
                mean.len(),
                basis.nrows()
            )));
        }
        if basis.ncols() < 1 {
            return Err(Error::InvalidInput("shape space needs at least one latent dimension".into()));
        }
        let gram_err = (basis.transpose() * &basis - DMatrix::identity(basis.ncols(), basis.ncols())).amax();
        if !(gram_err < 1e-6) {
            return Err(Error::InvalidInput(format!("basis is not orthonormal (|L^T L - I| = {gram_err:e})")));
        }
        Ok(Self {
            canonical,
            params,
            mean,
            basis,
        })
    }

    /// PCA of already computed per-instance weights (each n x 3).
    pub fn from_fields(canonical: PointCloud, params: KernelParams, fields: &[DMatrix<f64>], latent_dim: usize) -> Result<Self> {
        let n = canonical.len();
        check_latent_dim(latent_dim, fields.len(), n)?;
        for (i, f) in fields.iter().enumerate() {
            if f.nrows() != n || f.ncols() != 3 {
                return Err(Error::InvalidInput(format!("field {i} is {}x{}, expected {n}x3", f.nrows(), f.ncols())));
            }
        }
        let k = fields.len();
        let flat: Vec<DVector<f64>> = fields.iter().map(flatten_rows).collect();
        let mean = flat.iter().fold(DVector::zeros(3 * n), |acc, w| acc + w) / k as f64;
        let centered = DMatrix::from_fn(3 * n, k, |r, c| flat[c][r] - mean[r]);
        let basis = principal_directions(centered, latent_dim);
        Self::from_parts(canonical, params, mean, basis)
    }

    pub fn canonical(&self) -> &PointCloud {
        &self.canonical
    }

    pub fn params(&self) -> KernelParams {
        self.params
    }

    pub fn beta(&self) -> f64 {
        self.params.beta()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn latent_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `w = L x + w_bar`, reshaped to a field anchored at the canonical cloud.
    pub fn latent_to_field(&self, x: &LatentVector) -> Result<DeformationField> {
        if x.dim() != self.latent_dim() {
            return Err(Error::InvalidInput(format!(
                "latent vector has {} entries, space has {}",
                x.dim(),
                self.latent_dim()
            )));
        }
        let w = &self.basis * &x.0 + &self.mean;
        DeformationField::new(self.canonical.clone(), unflatten_rows(&w), self.params)
    }

    /// Least-squares latent coordinates of a field: `L^T (w - w_bar)`.
    pub fn project_field(&self, field: &DeformationField) -> Result<LatentVector> {
        if field.anchors() != &self.canonical {
            return Err(Error::InvalidInput("field is not anchored at the canonical cloud".into()));
        }
        let w = flatten_rows(field.weights());
        Ok(LatentVector(self.basis.transpose() * (w - &self.mean)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_as(path, DType::F64)
    }

    /// `F32` halves the file size but drops the bitwise round trip.
    pub fn save_as(&self, path: &Path, dtype: DType) -> Result<()> {
        write_atomic(path, &self.to_bytes(dtype))
    }

    pub fn to_bytes(&self, dtype: DType) -> Vec<u8> {
        let header = SpaceHeader {
            magic: MAGIC.into(),
            n: self.canonical.len(),
            l: self.latent_dim(),
            beta: self.beta(),
            flattening: FLATTENING.into(),
            dtype,
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        let canonical: Vec<f64> = self.canonical.points().iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        let basis: Vec<f64> = (0..self.basis.nrows())
            .flat_map(|r| (0..self.basis.ncols()).map(move |c| (r, c)))
            .map(|(r, c)| self.basis[(r, c)])
            .collect();
        out.extend(encode_values(&canonical, dtype));
        out.extend(encode_values(self.mean.as_slice(), dtype));
        out.extend(encode_values(&basis, dtype));
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::format(path, reason))
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| "truncated: no header line".to_string())?;
        let header: SpaceHeader =
            serde_json::from_slice(&bytes[..split]).map_err(|e| format!("unreadable header: {e}"))?;
        if header.magic != MAGIC {
            return Err(format!("unsupported version '{}', expected '{MAGIC}'", header.magic));
        }
        if header.flattening != FLATTENING {
            return Err(format!("unsupported flattening '{}', expected '{FLATTENING}'", header.flattening));
        }
        let (n, l) = (header.n, header.l);
        let payload = &bytes[split + 1..];
        let values = 3 * n + 3 * n + 3 * n * l;
        let needed = values * header.dtype.size();
        if payload.len() != needed {
            return Err(format!(
                "header declares n = {n}, l = {l} ({needed} payload bytes) but the payload has {} bytes",
                payload.len()
            ));
        }
        let data = decode_values(payload, header.dtype);
        let canonical = PointCloud::new(data[..3 * n].chunks_exact(3).map(|c| Point::new(c[0], c[1], c[2])).collect())
            .map_err(|e| e.to_string())?;
        let mean = DVector::from_column_slice(&data[3 * n..6 * n]);
        let basis = DMatrix::from_row_slice(3 * n, l, &data[6 * n..]);
        let params = KernelParams::new(header.beta).map_err(|e| e.to_string())?;
        Self::from_parts(canonical, params, mean, basis).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SpaceHeader {
    magic: String,
    n: usize,
    l: usize,
    beta: f64,
    flattening: String,
    dtype: DType,
}

fn check_latent_dim(latent_dim: usize, instances: usize, n: usize) -> Result<()> {
    if instances < 2 {
        return Err(Error::InvalidConfig(format!("a shape space needs at least 2 instances, got {instances}")));
    }
    if latent_dim < 1 || latent_dim > instances - 1 || latent_dim > 3 * n {
        return Err(Error::InvalidConfig(format!(
            "latent dimension {latent_dim} must satisfy 1 <= l <= min(#instances - 1, 3n) = {}",
            (instances - 1).min(3 * n)
        )));
    }
    Ok(())
}

/// Leading left singular vectors of `centered`, orthonormalized, with each
/// column's largest-magnitude entry made positive.
fn principal_directions(centered: DMatrix<f64>, l: usize) -> DMatrix<f64> {
    let rows = centered.nrows();
    let svd = thin_svd(&centered);
    let mut basis = DMatrix::<f64>::zeros(rows, l);
    let mut filled = 0;
    let mut candidates = (0..svd.sigma.len())
        .filter(|&j| svd.sigma[j] > 0.0)
        .map(|j| svd.u.column(j).into_owned())
        .chain((0..rows).map(|r| DVector::from_fn(rows, |i, _| if i == r { 1.0 } else { 0.0 })));
    while filled < l {
        let mut v = candidates.next().expect("enough candidate directions");
        for _ in 0..2 {
            for c in 0..filled {
                let proj = basis.column(c).dot(&v);
                v.axpy(-proj, &basis.column(c).into_owned(), 1.0);
            }
        }
        let norm = v.norm();
        if norm < 1e-8 {
            continue;
        }
        v /= norm;
        let pivot = v.iter().enumerate().fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[pivot] < 0.0 {
            v = -v;
        }
        basis.set_column(filled, &v);
        filled += 1;
    }
    basis
}

/// Registers every instance against `canonical` and builds an `l`-dimensional
/// space from the resulting fields. Also returns the per-instance fields.
pub fn build_shape_space(
    canonical: &PointCloud,
    instances: &[PointCloud],
    config: &CpdConfig,
    latent_dim: usize,
) -> Result<(ShapeSpace, Vec<DeformationField>)> {
    config.validate()?;
    check_latent_dim(latent_dim, instances.len(), canonical.len())?;
    let fields: Vec<DeformationField> = instances
        .par_iter()
        .enumerate()
        .map(|(index, inst)| {
            cpd_nonrigid(inst, canonical, config)
                .map(|r| r.field)
                .map_err(|e| Error::Instance {
                    index,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    let weights: Vec<DMatrix<f64>> = fields.iter().map(|f| f.weights().clone()).collect();
    let space = ShapeSpace::from_fields(canonical.clone(), KernelParams::new(config.beta)?, &weights, latent_dim)?;
    Ok((space, fields))
}
