//! Thin SVD of tall matrices by one-sided Jacobi rotations.
//!
//! nalgebra's bidiagonalization SVD returned factorizations off by ~1e-2 on
//! some exactly rank-deficient inputs, which the shape space and the
//! completion solve both produce routinely.

use nalgebra::{DMatrix, DVector};

const MAX_SWEEPS: usize = 80;

/// `a = u * diag(sigma) * v^T` with `sigma` sorted descending. `u` is
/// `m x k`, `v` is `k x k` where `k = a.ncols()`. Columns of `u` belonging
/// to zero singular values are zero.
pub(crate) struct ThinSvd {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub(crate) fn thin_svd(a: &DMatrix<f64>) -> ThinSvd {
    let (m, k) = a.shape();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(k, k);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (w[(i, p)], w[(i, q)]);
                    w[(i, p)] = c * x - s * y;
                    w[(i, q)] = s * x + c * y;
                }
                for i in 0..k {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..k).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));
    let mut u = DMatrix::zeros(m, k);
    let mut vs = DMatrix::zeros(k, k);
    let mut sigma = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = norms[src];
        if norms[src] > 0.0 {
            u.set_column(dst, &(w.column(src) / norms[src]));
        }
        vs.set_column(dst, &v.column(src));
    }
    ThinSvd { u, sigma, v: vs }
}

impl ThinSvd {
    /// Singular values above `tol` count toward the rank.
    pub fn rank(&self, tol: f64) -> usize {
        self.sigma.iter().filter(|&&s| s > tol).count()
    }

    /// Minimal-norm least-squares solution, treating singular values at or
    /// below `tol` as zero.
    pub fn solve(&self, b: &DVector<f64>, tol: f64) -> DVector<f64> {
        let mut x = DVector::zeros(self.v.nrows());
        for j in 0..self.sigma.len() {
            if self.sigma[j] > tol {
                let coef = self.u.column(j).dot(b) / self.sigma[j];
                x.axpy(coef, &self.v.column(j), 1.0);
            }
        }
        x
    }
}
