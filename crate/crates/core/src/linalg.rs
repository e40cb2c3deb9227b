//! Small dense complex linear algebra helpers shared by the model code.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Reciprocal condition numbers below this are treated as singular.
pub const RCOND_THRESHOLD: f64 = 1e-12;

fn norm1(m: &CMatrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverts a square matrix by partial-pivoted LU.
///
/// Fails when the 1-norm reciprocal condition number falls below
/// [`RCOND_THRESHOLD`].
pub fn invert(m: &CMatrix) -> Result<CMatrix> {
    assert!(m.is_square(), "invert: matrix must be square");
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let inv = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::SingularMatrix { rcond: 0.0 })?;
    let rcond = 1.0 / (norm1(m) * norm1(&inv));
    if !rcond.is_finite() || rcond < RCOND_THRESHOLD {
        return Err(Error::SingularMatrix {
            rcond: if rcond.is_finite() { rcond } else { 0.0 },
        });
    }
    Ok(inv)
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// Largest deviation from symmetry (`A = Aᵀ`, not Hermitian).
pub fn asymmetry(a: &CMatrix) -> f64 {
    max_abs_diff(a, &a.transpose())
}

pub fn to_complex(m: &DMatrix<i32>) -> CMatrix {
    m.map(|v| Complex64::new(v as f64, 0.0))
}

/// Row-major `[[[re, im], ...], ...]` representation for debug dumps.
pub fn to_nested(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn from_nested(rows: &[Vec<[f64; 2]>]) -> Result<CMatrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Format("ragged matrix".into()));
    }
    Ok(CMatrix::from_fn(n, m, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1])))
}

/// Serializes a matrix as a JSON debug dump.
pub fn dump_json(m: &CMatrix) -> String {
    serde_json::to_string(&to_nested(m)).expect("matrix serialization cannot fail")
}
