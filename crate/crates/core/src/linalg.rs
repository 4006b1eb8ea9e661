//! Dense symmetric eigendecomposition and classical PCA.
//!
//! The eigensolver is a cyclic Jacobi iteration: panels here have at most a
//! few hundred assets, where Jacobi is accurate to near machine precision and
//! needs no external backend. Eigenpairs come back sorted by descending
//! eigenvalue with a deterministic sign convention (largest-magnitude
//! component of each eigenvector is positive).

use ndarray::{Array1, Array2, ArrayView2};
use thiserror::Error;

/// Convergence threshold used by [`pca_fit`]: rotations stop once every
/// off-diagonal magnitude drops below `tol * ||A||_F`.
pub const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("covariance needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("input contains non-finite entries")]
    NonFinite,
    #[error("matrix must be square and symmetric")]
    NotSymmetric,
    #[error("Jacobi eigensolver did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("factor count {k} outside 1..={n}")]
    FactorCountOutOfRange { k: usize, n: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("reference panel has zero Frobenius norm")]
    ZeroNorm,
}

/// Empirical covariance `(1/T) X^T X` of a pre-centered panel.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    pub values: Array2<f64>,
    pub n_samples: usize,
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending, eigenvectors as
/// orthonormal columns.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: Array2<f64>,
}

/// Classical k-factor PCA: top-k eigenvectors of the covariance as loadings.
#[derive(Debug, Clone)]
pub struct PcaModel {
    pub loadings: Array2<f64>,
    pub k: usize,
    pub explained_ratios: Array1<f64>,
    pub total_variance: f64,
}

/// Covariance with the 1/T divisor, symmetrized exactly. Columns are assumed
/// pre-centered; a warning is logged when a column mean exceeds 1e-8.
pub fn covariance(x: ArrayView2<f64>) -> Result<CovMatrix, LinalgError> {
    let t = x.nrows();
    if t < 2 {
        return Err(LinalgError::TooFewSamples(t));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let worst_mean = (0..x.ncols())
        .map(|j| x.column(j).mean().unwrap_or(0.0).abs())
        .fold(0.0_f64, f64::max);
    if worst_mean > 1e-8 {
        log::warn!("covariance input not centered: worst column mean {worst_mean:.3e}");
    }
    let mut cov = x.t().dot(&x) / t as f64;
    let n = cov.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (cov[[i, j]] + cov[[j, i]]);
            cov[[i, j]] = avg;
            cov[[j, i]] = avg;
        }
    }
    Ok(CovMatrix { values: cov, n_samples: t })
}

/// Eigendecomposition of a covariance matrix via cyclic Jacobi rotations.
pub fn eigh(cov: &CovMatrix, tol: f64) -> Result<EigenResult, LinalgError> {
    eigh_symmetric(cov.values.view(), tol)
}

/// Cyclic Jacobi on any symmetric matrix. Sweeps rotate away each
/// off-diagonal entry in turn until all magnitudes fall below
/// `tol * ||A||_F`, capped at 100 sweeps.
pub fn eigh_symmetric(m: ArrayView2<f64>, tol: f64) -> Result<EigenResult, LinalgError> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(LinalgError::NotSymmetric);
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    for i in 0..n {
        for j in i + 1..n {
            if (m[[i, j]] - m[[j, i]]).abs() > 1e-8 * (1.0 + scale) {
                return Err(LinalgError::NotSymmetric);
            }
        }
    }

    let mut a = m.to_owned();
    let mut v = Array2::<f64>::eye(n);
    let frob = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if frob == 0.0 {
        return Ok(sorted_result(a, v));
    }
    let threshold = tol * frob;

    let mut converged = false;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut max_off = 0.0_f64;
        for p in 0..n {
            for q in p + 1..n {
                max_off = max_off.max(a[[p, q]].abs());
            }
        }
        if max_off < threshold {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq.abs() < threshold {
                    continue;
                }
                let tau = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                a[[p, p]] = app - t * apq;
                a[[q, q]] = aqq + t * apq;
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
                for i in 0..n {
                    if i != p && i != q {
                        let aip = a[[i, p]];
                        let aiq = a[[i, q]];
                        a[[i, p]] = c * aip - s * aiq;
                        a[[p, i]] = a[[i, p]];
                        a[[i, q]] = s * aip + c * aiq;
                        a[[q, i]] = a[[i, q]];
                    }
                }
                for i in 0..n {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - s * viq;
                    v[[i, q]] = s * vip + c * viq;
                }
            }
        }
    }
    if !converged {
        let mut max_off = 0.0_f64;
        for p in 0..n {
            for q in p + 1..n {
                max_off = max_off.max(a[[p, q]].abs());
            }
        }
        if max_off >= threshold {
            return Err(LinalgError::NoConvergence(JACOBI_MAX_SWEEPS));
        }
    }
    Ok(sorted_result(a, v))
}

fn sorted_result(a: Array2<f64>, v: Array2<f64>) -> EigenResult {
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]));
    let mut eigenvalues = Array1::zeros(n);
    let mut eigenvectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues[dst] = a[[src, src]];
        // Sign fix: largest-magnitude component positive, first index on ties.
        let mut best = 0;
        for i in 1..n {
            if v[[i, src]].abs() > v[[best, src]].abs() {
                best = i;
            }
        }
        let flip = if v[[best, src]] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            eigenvectors[[i, dst]] = flip * v[[i, src]];
        }
    }
    EigenResult { eigenvalues, eigenvectors }
}

/// Fit a k-factor PCA model on a (pre-centered) panel.
pub fn pca_fit(x: ArrayView2<f64>, k: usize) -> Result<PcaModel, LinalgError> {
    let n = x.ncols();
    if k < 1 || k > n {
        return Err(LinalgError::FactorCountOutOfRange { k, n });
    }
    let cov = covariance(x)?;
    let eig = eigh(&cov, JACOBI_TOL)?;
    pca_from_eigen(&eig, k)
}

/// Top-k projection extracted from an existing eigendecomposition.
pub fn pca_from_eigen(eig: &EigenResult, k: usize) -> Result<PcaModel, LinalgError> {
    let n = eig.eigenvalues.len();
    if k < 1 || k > n {
        return Err(LinalgError::FactorCountOutOfRange { k, n });
    }
    let total: f64 = eig.eigenvalues.sum();
    let ratios = if total > 0.0 {
        eig.eigenvalues.slice(ndarray::s![..k]).mapv(|l| l / total)
    } else {
        Array1::zeros(k)
    };
    Ok(PcaModel {
        loadings: eig.eigenvectors.slice(ndarray::s![.., ..k]).to_owned(),
        k,
        explained_ratios: ratios,
        total_variance: total,
    })
}

/// Factor scores `Z = X U_k`.
pub fn pca_transform(m: &PcaModel, x: ArrayView2<f64>) -> Result<Array2<f64>, LinalgError> {
    if x.ncols() != m.loadings.nrows() {
        return Err(LinalgError::ShapeMismatch {
            expected: format!("{} columns", m.loadings.nrows()),
            got: format!("{} columns", x.ncols()),
        });
    }
    Ok(x.dot(&m.loadings))
}

/// Reconstruction `X_hat = Z U_k^T`.
pub fn pca_reconstruct(m: &PcaModel, z: ArrayView2<f64>) -> Result<Array2<f64>, LinalgError> {
    if z.ncols() != m.k {
        return Err(LinalgError::ShapeMismatch {
            expected: format!("{} columns", m.k),
            got: format!("{} columns", z.ncols()),
        });
    }
    Ok(z.dot(&m.loadings.t()))
}

/// Explained variance `1 - ||X - X_hat||_F^2 / ||X||_F^2` for zero-mean
/// standardized panels.
pub fn r_squared(x: ArrayView2<f64>, xhat: ArrayView2<f64>) -> Result<f64, LinalgError> {
    if x.shape() != xhat.shape() {
        return Err(LinalgError::ShapeMismatch {
            expected: format!("{:?}", x.shape()),
            got: format!("{:?}", xhat.shape()),
        });
    }
    let ss_tot: f64 = x.iter().map(|v| v * v).sum();
    if ss_tot == 0.0 {
        return Err(LinalgError::ZeroNorm);
    }
    let ss_res: f64 = x.iter().zip(xhat.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}
