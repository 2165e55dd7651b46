use super::DesignMatrix;
use crate::error::{Error, Result};

/// Relative size below which a column's component orthogonal to the
/// preceding columns counts as zero.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `(X'X)^-1`, computed as `R^-1 R^-T`.
    pub xtx_inv: Vec<Vec<f64>>,
}

/// Least squares by Householder QR on the columns of `dm` (no intercept is
/// added).
pub fn ols_fit(dm: &DesignMatrix) -> Result<LeastSquares> {
    let n = dm.n_rows();
    let k = dm.n_cols();
    if n < k {
        return Err(Error::Data(format!("{n} observations for {k} regressors")));
    }
    let mut a = dm.columns.clone();
    let mut qty = dm.response.clone();
    let mut r_diag = vec![0.0; k];

    for j in 0..k {
        let original_norm = dm.columns[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        let alpha_norm = a[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if original_norm == 0.0 || alpha_norm <= RANK_TOLERANCE * original_norm {
            return Err(Error::RankDeficient(dm.names[j].clone()));
        }
        let alpha = if a[j][j] > 0.0 { -alpha_norm } else { alpha_norm };
        // v = x - alpha e1, stored in a[j][j..]
        let mut v: Vec<f64> = a[j][j..].to_vec();
        v[0] -= alpha;
        let v_norm_sq: f64 = v.iter().map(|x| x * x).sum();
        r_diag[j] = alpha;
        a[j][j] = alpha;
        a[j][j + 1..].iter_mut().for_each(|x| *x = 0.0);
        if v_norm_sq == 0.0 {
            continue;
        }
        let reflect = |col: &mut [f64]| {
            let dot: f64 = col.iter().zip(&v).map(|(c, vi)| c * vi).sum();
            let s = 2.0 * dot / v_norm_sq;
            for (c, vi) in col.iter_mut().zip(&v) {
                *c -= s * vi;
            }
        };
        for col in a.iter_mut().skip(j + 1) {
            reflect(&mut col[j..]);
        }
        reflect(&mut qty[j..]);
    }

    // R is upper triangular: R[i][j] = a[j][i] for i <= j.
    let mut coefficients = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = qty[i];
        for j in i + 1..k {
            s -= a[j][i] * coefficients[j];
        }
        coefficients[i] = s / r_diag[i];
    }

    // R^-1 by back substitution, column by column.
    let mut r_inv = vec![vec![0.0; k]; k];
    for c in 0..k {
        for i in (0..=c).rev() {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for j in i + 1..=c {
                s -= a[j][i] * r_inv[j][c];
            }
            r_inv[i][c] = s / r_diag[i];
        }
    }
    let mut xtx_inv = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = (i.max(j)..k).map(|m| r_inv[i][m] * r_inv[j][m]).sum();
            xtx_inv[i][j] = s;
            xtx_inv[j][i] = s;
        }
    }

    let mut residuals = dm.response.clone();
    for (col, b) in dm.columns.iter().zip(&coefficients) {
        for (r, x) in residuals.iter_mut().zip(col) {
            *r -= b * x;
        }
    }
    Ok(LeastSquares {
        coefficients,
        residuals,
        xtx_inv,
    })
}
