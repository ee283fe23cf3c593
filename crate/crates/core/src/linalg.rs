//! Small dense helpers shared by the numerical modules.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn row_norms(m: ArrayView2<f64>) -> Array1<f64> {
    m.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect()
}

/// Rows scaled to unit norm; zero rows are left at zero.
pub fn normalize_rows_lenient(m: ArrayView2<f64>) -> Array2<f64> {
    let mut out = m.to_owned();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
    out
}

pub fn column_mean(m: ArrayView2<f64>) -> Array1<f64> {
    if m.nrows() == 0 {
        return Array1::zeros(m.ncols());
    }
    m.mean_axis(Axis(0)).expect("non-empty")
}

pub fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Uniform direction on the unit sphere of R^n.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let nv = v.dot(&v).sqrt();
        if nv > 1e-12 {
            return v / nv;
        }
    }
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Array2<f64> {
    let g = nalgebra::DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let s = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        q[(i, j)] * s
    })
}

pub fn vstack(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(0), &[a, b]).expect("matching column counts")
}

pub fn to_dmatrix(m: ArrayView2<f64>) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}
