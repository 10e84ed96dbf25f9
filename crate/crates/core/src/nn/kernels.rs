//! Small dense kernels on row-major arrays. Zero coefficients are skipped,
//! which pays off after ReLU and dropout.

use ndarray::{Array1, Array2, ArrayView1};

fn axpy(y: &mut [f64], a: f64, x: ArrayView1<'_, f64>) {
    match x.as_slice() {
        Some(x) => {
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi += a * xi;
            }
        }
        None => {
            for (yi, xi) in y.iter_mut().zip(x.iter()) {
                *yi += a * xi;
            }
        }
    }
}

/// `v W`.
pub(crate) fn vec_mat(v: ArrayView1<'_, f64>, w: &Array2<f64>) -> Array1<f64> {
    debug_assert_eq!(v.len(), w.nrows());
    let mut out = vec![0.0; w.ncols()];
    for (i, &vi) in v.iter().enumerate() {
        if vi != 0.0 {
            axpy(&mut out, vi, w.row(i));
        }
    }
    Array1::from_vec(out)
}

/// `W v`.
pub(crate) fn mat_vec(w: &Array2<f64>, v: ArrayView1<'_, f64>) -> Array1<f64> {
    debug_assert_eq!(v.len(), w.ncols());
    w.dot(&v)
}

/// `acc += a bᵀ`.
pub(crate) fn add_outer(acc: &mut Array2<f64>, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) {
    debug_assert_eq!((acc.nrows(), acc.ncols()), (a.len(), b.len()));
    let b = b.as_standard_layout();
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            let mut row = acc.row_mut(i);
            match row.as_slice_mut() {
                Some(row) => axpy(row, ai, b.view()),
                None => row.scaled_add(ai, &b),
            }
        }
    }
}
