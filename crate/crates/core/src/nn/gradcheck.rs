//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use super::params::Tensors;
use crate::error::{Error, Result};

/// Gradients smaller than this are compared in absolute rather than
/// relative terms; central differences cannot resolve them at double
/// precision.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.tensors.iter().map(|t| t.checked).sum()
    }
}

/// Evenly spaced coordinates, all of them when the tensor is small.
fn sample_indices(len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        (0..len).collect()
    } else {
        (0..count).map(|i| i * len / count).collect()
    }
}

/// Compares `analytic` against central differences of `loss` around
/// `params`, probing at least `min_coords` coordinates per tensor.
pub fn grad_check<P, F>(mut loss: F, params: &P, analytic: &P, eps: f64, min_coords: usize) -> Result<GradCheckReport>
where
    P: Tensors,
    F: FnMut(&P) -> f64,
{
    let base = loss(params);
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("loss at base point is {base}")));
    }
    let names: Vec<(String, usize)> = params.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|(_, t)| t.iter().copied().collect()).collect();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        tensors: Vec::new(),
    };
    for (ti, (name, len)) in names.into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        let idx = sample_indices(len, min_coords);
        for &i in &idx {
            let original = nth(&mut probe, ti, i, None);
            nth(&mut probe, ti, i, Some(original + eps));
            let plus = loss(&probe);
            nth(&mut probe, ti, i, Some(original - eps));
            let minus = loss(&probe);
            nth(&mut probe, ti, i, Some(original));
            if !(plus.is_finite() && minus.is_finite()) {
                return Err(Error::NonFinite(format!("loss while probing {name}[{i}]")));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(grads[ti][i], numeric));
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.tensors.push(TensorCheck {
            name,
            checked: idx.len(),
            max_rel_error: worst,
        });
    }
    Ok(report)
}

/// Reads (and optionally overwrites) coordinate `i` of tensor `ti`, in
/// logical row-major order.
fn nth<P: Tensors>(p: &mut P, ti: usize, i: usize, set: Option<f64>) -> f64 {
    let mut tensors = p.tensors_mut();
    let t = &mut tensors[ti].1;
    let slot = t.iter_mut().nth(i).expect("coordinate in range");
    let old = *slot;
    if let Some(v) = set {
        *slot = v;
    }
    old
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Encoder;
    use ndarray::Array2;

    #[test]
    fn quadratic_toy() {
        let p = Encoder {
            w1: Array2::from_shape_fn((3, 4), |(i, j)| i as f64 - j as f64 * 0.5),
            w2: Array2::from_shape_fn((4, 4), |(i, j)| (i * j) as f64 * 0.1 + 0.2),
        };
        let coef = |i: usize| 1.0 + i as f64;
        let loss = |e: &Encoder| {
            e.w1.iter().enumerate().map(|(i, v)| coef(i) * v * v).sum::<f64>() + e.w2.iter().map(|v| v * v * v / 3.0).sum::<f64>()
        };
        let mut g = p.clone();
        for (i, v) in g.w1.iter_mut().enumerate() {
            *v *= 2.0 * coef(i);
        }
        g.w2.mapv_inplace(|v| v * v);
        let r = grad_check(loss, &p, &g, 1e-5, 200).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked(), 12 + 16);
    }

    #[test]
    fn detects_wrong_gradient() {
        let p = Encoder {
            w1: Array2::from_elem((2, 2), 1.0),
            w2: Array2::from_elem((2, 2), 1.0),
        };
        let loss = |e: &Encoder| e.w1.iter().chain(e.w2.iter()).map(|v| v * v).sum::<f64>();
        let wrong = p.clone();
        let r = grad_check(loss, &p, &wrong, 1e-5, 10).unwrap();
        assert!(r.max_rel_error > 0.4);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let p = Encoder::zeros(1, 1);
        assert!(grad_check(|_: &Encoder| f64::NAN, &p, &p, 1e-5, 1).is_err());
    }

    #[test]
    fn subsample_is_deterministic_and_distinct() {
        let idx = sample_indices(8192, 200);
        assert_eq!(idx.len(), 200);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_indices(5, 200), vec![0, 1, 2, 3, 4]);
    }
}
