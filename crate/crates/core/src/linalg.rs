//! Dense least-squares helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

/// Solve a symmetric positive-definite system by Cholesky factorization.
///
/// Returns `None` when the factorization fails or a pivot falls below
/// `rel_pivot * max(diag(a))`, which is how rank deficiency shows up in
/// floating point.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, rel_pivot: f64) -> Option<DVector<f64>> {
    let max_diag = a.diagonal().amax();
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..a.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot > rel_pivot * max_diag) {
        return None;
    }
    let x = chol.solve(b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    /// `p x k` coefficients for `p` design columns and `k` targets.
    pub coefficients: DMatrix<f64>,
    /// `true` when the design was rank-deficient and ridge was used instead.
    pub ridge: bool,
}

/// Ordinary least squares `min ||X B - Y||` by Householder QR, falling back
/// to ridge regression with penalty `ridge_lambda` when `X` is numerically
/// rank-deficient.
pub fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge_lambda: f64) -> LeastSquares {
    let p = x.ncols();
    if x.nrows() >= p {
        let qr = x.clone().qr();
        let r = qr.r();
        let diag_max = r.diagonal().amax();
        let diag_min = r.diagonal().amin();
        if diag_min > 1e-10 * diag_max {
            let qty = qr.q().transpose() * y;
            if let Some(b) = r.solve_upper_triangular(&qty) {
                if b.iter().all(|v| v.is_finite()) {
                    return LeastSquares {
                        coefficients: b,
                        ridge: false,
                    };
                }
            }
        }
    }
    let mut gram = x.transpose() * x;
    for i in 0..p {
        gram[(i, i)] += ridge_lambda;
    }
    let rhs = x.transpose() * y;
    let coefficients = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| gram.lu().solve(&rhs))
        .unwrap_or_else(|| DMatrix::zeros(p, y.ncols()));
    LeastSquares {
        coefficients,
        ridge: true,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderedFit {
    /// One coefficient per design column; dropped columns hold exactly zero.
    pub coefficients: Vec<f64>,
    /// Columns that entered the fit.
    pub kept: Vec<usize>,
}

/// Least squares that admits columns in their given order and drops any
/// column lying (to relative tolerance `rel_tol`) in the span of the columns
/// already admitted. On a full-rank design this is plain OLS; on a
/// rank-deficient one it returns the unique solution supported on the
/// earliest independent columns.
pub fn ordered_least_squares(x: &DMatrix<f64>, y: &DVector<f64>, rel_tol: f64) -> OrderedFit {
    let (rows, cols) = x.shape();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    // r[k] holds the projections of kept column k onto basis[0..=k]
    let mut r: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();

    for j in 0..cols {
        let col = x.column(j).into_owned();
        let scale = col.norm();
        if scale == 0.0 {
            continue;
        }
        let mut v = col.clone();
        let mut proj = vec![0.0; basis.len()];
        // two passes of modified Gram-Schmidt keep the basis orthogonal
        for _ in 0..2 {
            for (k, q) in basis.iter().enumerate() {
                let c = q.dot(&v);
                proj[k] += c;
                v.axpy(-c, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm <= rel_tol * scale {
            continue;
        }
        proj.push(norm);
        basis.push(v / norm);
        r.push(proj);
        kept.push(j);
    }

    let qty: Vec<f64> = basis.iter().map(|q| q.dot(y)).collect();
    let k = kept.len();
    let mut beta = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = qty[i];
        for j in i + 1..k {
            s -= r[j][i] * beta[j];
        }
        beta[i] = s / r[i][i];
    }
    let mut coefficients = vec![0.0; cols];
    for (&j, b) in kept.iter().zip(beta) {
        coefficients[j] = b;
    }
    debug_assert_eq!(rows, y.len());
    OrderedFit { coefficients, kept }
}
