//! Non-rigid Coherent Point Drift.
//!
//! The moving set `Y` provides the centroids of an isotropic Gaussian
//! mixture, the fixed set `X` the samples. EM alternates soft
//! correspondences (E-step) with a regularized kernel solve for the
//! displacement weights `W` (M-step); the transformed set is `Y + G W`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{gaussian_kernel, DeformationField, KernelParams, PointCloud};

const DIM: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpdConfig {
    pub beta: f64,
    pub lambda: f64,
    /// Weight of the uniform outlier component, in `[0, 1)`.
    pub outlier_weight: f64,
    pub max_iterations: usize,
    /// Stop once the relative change of sigma^2 falls below this value.
    pub tolerance: f64,
}

impl Default for CpdConfig {
    fn default() -> Self {
        Self {
            beta: 2.0,
            lambda: 2.0,
            outlier_weight: 0.0,
            max_iterations: 150,
            tolerance: 1e-8,
        }
    }
}

impl CpdConfig {
    /// All violated constraints, empty when the config is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            out.push(format!("beta must be > 0 (kernel width), got {}", self.beta));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            out.push(format!("lambda must be > 0, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.outlier_weight) {
            out.push(format!("outlier weight must be in [0, 1), got {}", self.outlier_weight));
        }
        if self.max_iterations < 1 {
            out.push("max iterations must be >= 1".into());
        }
        if !(self.tolerance > 0.0) {
            out.push(format!("tolerance must be > 0, got {}", self.tolerance));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v.join("; ")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct CpdResult {
    /// Anchored at the moving set `Y`.
    pub field: DeformationField,
    pub sigma2: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl CpdResult {
    /// The transformed moving set `Y + G W`.
    pub fn transformed(&self) -> Result<PointCloud> {
        let y = self.field.anchors();
        PointCloud::new(crate::geometry::apply_deformation(y.points(), &self.field)?)
    }
}

fn squared_distances(x: &DMatrix<f64>, t: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(t.nrows(), x.nrows(), |m, n| {
        let dx = x[(n, 0)] - t[(m, 0)];
        let dy = x[(n, 1)] - t[(m, 1)];
        let dz = x[(n, 2)] - t[(m, 2)];
        dx * dx + dy * dy + dz * dz
    })
}

/// Posterior `P` (M x N): entry `(m, n)` is the probability that sample
/// `x_n` was generated by centroid `t_m`.
pub fn e_step(x: &PointCloud, t: &PointCloud, sigma2: f64, outlier_weight: f64) -> Result<DMatrix<f64>> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidInput(format!("sigma^2 must be positive, got {sigma2}")));
    }
    if !(0.0..1.0).contains(&outlier_weight) {
        return Err(Error::InvalidInput(format!("outlier weight must be in [0, 1), got {outlier_weight}")));
    }
    Ok(posterior(&x.to_matrix(), &t.to_matrix(), sigma2, outlier_weight))
}

fn posterior(x: &DMatrix<f64>, t: &DMatrix<f64>, sigma2: f64, outlier_weight: f64) -> DMatrix<f64> {
    let (m, n) = (t.nrows(), x.nrows());
    let c = if outlier_weight > 0.0 {
        (2.0 * std::f64::consts::PI * sigma2).powf(DIM / 2.0) * outlier_weight / (1.0 - outlier_weight) * m as f64
            / n as f64
    } else {
        0.0
    };
    let mut p = squared_distances(x, t);
    let inv = 1.0 / (2.0 * sigma2);
    for mut col in p.column_iter_mut() {
        // shift by the smallest distance so the largest term is exp(0)
        let dmin = col.min();
        let mut sum = 0.0;
        for v in col.iter_mut() {
            *v = (-(*v - dmin) * inv).exp();
            sum += *v;
        }
        let denom = sum + if c > 0.0 { c * (dmin * inv).exp() } else { 0.0 };
        if denom.is_finite() {
            col /= denom;
        } else {
            col.fill(0.0);
        }
    }
    p
}

/// Registers `y` (moving) onto `x` (fixed).
pub fn cpd_nonrigid(x: &PointCloud, y: &PointCloud, config: &CpdConfig) -> Result<CpdResult> {
    config.validate()?;
    let params = KernelParams::new(config.beta)?;
    let xm = x.to_matrix();
    let ym = y.to_matrix();
    let (n, m) = (x.len(), y.len());
    let g = gaussian_kernel(y.points(), y.points(), params)?;

    let mut w = DMatrix::<f64>::zeros(m, 3);
    let mut t = ym.clone();
    let mut sigma2 = squared_distances(&xm, &ym).sum() / (DIM * n as f64 * m as f64);
    let x_sq = DVector::from_fn(n, |i, _| xm.row(i).norm_squared());
    let mut iterations = 0;
    let mut converged = false;

    if sigma2 <= 0.0 {
        // every sample sits on every centroid: nothing to move
        return Ok(CpdResult {
            field: DeformationField::zero(y.clone(), params),
            sigma2: 0.0,
            iterations,
            converged: true,
        });
    }

    while iterations < config.max_iterations {
        iterations += 1;
        let p = posterior(&xm, &t, sigma2, config.outlier_weight);
        let p1 = p.column_sum();
        let pt1 = p.row_sum().transpose();
        let np = p1.sum();
        let px = &p * &xm;

        // dP1 (G + lambda sigma^2 dP1^-1) W = P X - dP1 Y, multiplied through
        // by dP1 so that centroids with zero responsibility stay well-defined
        let mut a = g.clone();
        for (i, mut row) in a.row_iter_mut().enumerate() {
            row *= p1[i];
        }
        for i in 0..m {
            a[(i, i)] += config.lambda * sigma2;
        }
        let mut rhs = px.clone();
        for i in 0..m {
            for d in 0..3 {
                rhs[(i, d)] -= p1[i] * ym[(i, d)];
            }
        }
        let lu = a.lu();
        w = lu.solve(&rhs).ok_or_else(|| Error::Solver {
            iteration: iterations,
            reason: "singular M-step system (duplicated points in the moving set?)".into(),
        })?;
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::Solver {
                iteration: iterations,
                reason: "non-finite weights".into(),
            });
        }
        t = &ym + &g * &w;

        let t_sq: f64 = (0..m).map(|i| p1[i] * t.row(i).norm_squared()).sum();
        let cross = px.component_mul(&t).sum();
        let new_sigma2 = if np > 0.0 {
            (pt1.dot(&x_sq) - 2.0 * cross + t_sq) / (np * DIM)
        } else {
            0.0
        };
        if !(new_sigma2 > 0.0) {
            // exact fit
            sigma2 = 0.0;
            converged = true;
            break;
        }
        let change = (new_sigma2 - sigma2).abs() / sigma2;
        sigma2 = new_sigma2;
        if change < config.tolerance {
            converged = true;
            break;
        }
    }

    Ok(CpdResult {
        field: DeformationField::new(y.clone(), w, params)?,
        sigma2,
        iterations,
        converged,
    })
}
