//! Dense matrix helpers: scaling-and-squaring exponential, polar projection
//! onto rotations, and small 3×3 utilities.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

/// Matrix exponential by scaling and squaring with a Taylor kernel.
///
/// The argument is scaled so its 1-norm is at most 1/2; 18 Taylor terms then
/// leave a truncation error below 1e-22 before squaring.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.column_iter().map(|c| c.abs().sum()).fold(0.0, f64::max);
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scaled = a / 2f64.powi(squarings as i32);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=18 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Nearest special-orthogonal matrix in Frobenius norm (polar factor with the
/// sign fixed so the determinant is +1).
pub fn nearest_rotation(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let mut u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = &u * &v_t;
    if r.determinant() < 0.0 {
        // singular values come sorted descending; flip the weakest direction
        let last = u.ncols() - 1;
        let col = -u.column(last);
        u.set_column(last, &col);
        r = &u * &v_t;
    }
    r
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

pub fn skew3(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Commutator `[a, b] = ab − ba`.
pub fn bracket(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a * b - b * a
}

/// Row-major flattening of a matrix.
pub fn flatten_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub fn from_row_major(n: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, data)
}

/// Minimum-norm least-squares solution of `a x = b` via SVD. Singular values
/// below `1e-13 · σ_max` are treated as zero.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if a.ncols() == 0 {
        return Some(DVector::zeros(0));
    }
    if a.nrows() == 0 {
        return Some(DVector::zeros(a.ncols()));
    }
    let svd = a.clone().svd(true, true);
    let cutoff = svd.singular_values.max() * 1e-13;
    svd.solve(b, cutoff).ok()
}
