//! Two-layer graph convolution over an ego subgraph with a cached trace for
//! reverse-mode differentiation.
//!
//! Only the center row of the second layer is read out, so the first layer
//! is evaluated just on the rows the center's normalized adjacency row
//! touches (the center and its direct neighbors). The output is identical to
//! computing the full `Â relu(Â X W1) W2` and taking the center row.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng as _;

use super::kernels::{add_outer, mat_vec, vec_mat};
use super::params::Encoder;
use crate::error::{Error, Result};
use crate::graph::EgoSubgraph;
use crate::rng::Rng;

/// `(D + I)^-1/2 (A + I) (D + I)^-1/2` for a symmetric 0/1 (or masked)
/// adjacency with zero diagonal.
pub fn normalize_adjacency(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let inv_sqrt: Array1<f64> = a.sum_axis(Axis(1)).mapv(|d| (d + 1.0).sqrt().recip());
    let mut out = a.clone();
    out.diag_mut().fill(1.0);
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    out
}

/// Weight-independent part of an encoder forward pass, computed once per
/// (possibly masked) ego subgraph.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedEgo {
    /// Local rows with a nonzero entry in the center's normalized row.
    pub rows: Vec<usize>,
    /// The corresponding normalized adjacency weights.
    pub weights: Array1<f64>,
    /// `(Â X)` restricted to `rows`.
    pub propagated: Array2<f64>,
}

impl PreparedEgo {
    pub fn new(adjacency: &Array2<f64>, features: &Array2<f64>, center: usize) -> Self {
        let neighbors: Vec<Vec<(usize, f64)>> = adjacency
            .rows()
            .into_iter()
            .map(|row| row.iter().enumerate().filter(|(_, &a)| a != 0.0).map(|(j, &a)| (j, a)).collect())
            .collect();
        Self::from_neighbors(&neighbors, features, center)
    }

    /// Same as [`PreparedEgo::new`] from per-node `(neighbor, weight)` lists
    /// sorted by neighbor index, without self-loops.
    pub fn from_neighbors(neighbors: &[Vec<(usize, f64)>], features: &Array2<f64>, center: usize) -> Self {
        let degrees: Vec<f64> = neighbors.iter().map(|list| list.iter().map(|&(_, a)| a).sum()).collect();
        Self::from_parts(&degrees, |i| neighbors[i].iter().copied(), features, center)
    }

    /// Builds the input from weighted degrees and a neighbor enumerator that
    /// yields `(neighbor, weight)` in ascending neighbor order without
    /// self-loops. Only the center and its neighbors are enumerated.
    pub fn from_parts<F, I>(degrees: &[f64], neighbors: F, features: &Array2<f64>, center: usize) -> Self
    where
        F: Fn(usize) -> I,
        I: Iterator<Item = (usize, f64)>,
    {
        let inv_sqrt = |i: usize| (degrees[i] + 1.0).sqrt().recip();
        // Row `i` of Â in ascending column order, self-loop included.
        let row = |i: usize| -> Vec<(usize, f64)> {
            let scale = inv_sqrt(i);
            let mut out = Vec::with_capacity(16);
            let mut own = Some((i, 1.0));
            for (j, a) in neighbors(i) {
                if j > i {
                    out.extend(own.take());
                }
                out.push((j, a));
            }
            out.extend(own);
            for e in &mut out {
                e.1 = e.1 * scale * inv_sqrt(e.0);
            }
            out
        };
        let (rows, weights): (Vec<usize>, Vec<f64>) = row(center).into_iter().unzip();
        let mut propagated = Array2::zeros((rows.len(), features.ncols()));
        for (k, &r) in rows.iter().enumerate() {
            let mut out = propagated.row_mut(k);
            for (j, w) in row(r) {
                out.scaled_add(w, &features.row(j));
            }
        }
        Self {
            rows,
            weights: Array1::from_vec(weights),
            propagated,
        }
    }

    pub fn from_ego(ego: &EgoSubgraph) -> Self {
        Self::new(&ego.adjacency, &ego.features, ego.center)
    }

    pub fn feature_dim(&self) -> usize {
        self.propagated.ncols()
    }
}

/// Everything needed to replay and differentiate one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace<'a> {
    pub input: &'a PreparedEgo,
    /// First-layer pre-activations on `input.rows`.
    pub pre_activation: Array2<f64>,
    /// Inverted-dropout multipliers (`0` or `1 / (1 - rate)`), if dropout ran.
    pub dropout: Option<Array2<f64>>,
    /// `weights^T · dropout(relu(pre_activation))`.
    pub pooled: Array1<f64>,
    pub output: Array1<f64>,
}

fn check_dims(enc: &Encoder, input: &PreparedEgo) -> Result<()> {
    if enc.w1.nrows() != input.feature_dim() {
        return Err(Error::Shape(format!(
            "encoder expects {} features, ego has {}",
            enc.w1.nrows(),
            input.feature_dim()
        )));
    }
    Ok(())
}

fn forward_with<'a>(enc: &Encoder, input: &'a PreparedEgo, dropout: Option<Array2<f64>>) -> EncoderTrace<'a> {
    let pre_activation = input.propagated.dot(&enc.w1);
    let mut hidden = pre_activation.mapv(|v| v.max(0.0));
    if let Some(mask) = &dropout {
        hidden *= mask;
    }
    let pooled = vec_mat(input.weights.view(), &hidden);
    let output = vec_mat(pooled.view(), &enc.w2);
    EncoderTrace {
        input,
        pre_activation,
        dropout,
        pooled,
        output,
    }
}

/// Forward pass returning the center embedding and its trace. Dropout on the
/// first hidden layer applies only in train mode with a positive rate.
pub fn encode<'a>(
    enc: &Encoder,
    input: &'a PreparedEgo,
    dropout_rate: f64,
    train_mode: bool,
    rng: &mut Rng,
) -> Result<EncoderTrace<'a>> {
    check_dims(enc, input)?;
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::Config(format!("dropout rate {dropout_rate} outside [0, 1)")));
    }
    let dropout = (train_mode && dropout_rate > 0.0).then(|| {
        let keep = 1.0 - dropout_rate;
        let scale = keep.recip();
        // A unit is kept when a uniform 32-bit draw falls below keep * 2^32.
        let threshold = (keep * 4_294_967_296.0) as u64;
        Array2::from_shape_simple_fn((input.rows.len(), enc.w1.ncols()), || {
            if u64::from(rng.random::<u32>()) < threshold {
                scale
            } else {
                0.0
            }
        })
    });
    Ok(forward_with(enc, input, dropout))
}

impl EncoderTrace<'_> {
    /// Re-runs the forward pass with the recorded dropout multipliers.
    pub fn replay(&self, enc: &Encoder) -> Array1<f64> {
        forward_with(enc, self.input, self.dropout.clone()).output
    }

    /// Accumulates `d output / d weights` contracted with `upstream` into `grad`.
    pub fn backward(&self, enc: &Encoder, upstream: &Array1<f64>, grad: &mut Encoder) {
        add_outer(&mut grad.w2, self.pooled.view(), upstream.view());
        let d_pooled = mat_vec(&enc.w2, upstream.view());
        self.backward_pooled(d_pooled.view(), grad);
    }

    /// First-layer part of [`EncoderTrace::backward`]: accumulates the `w1`
    /// gradient given the gradient with respect to `pooled`.
    pub fn backward_pooled(&self, d_pooled: ArrayView1<'_, f64>, grad: &mut Encoder) {
        let mut d_rows = Array2::zeros(self.pre_activation.raw_dim());
        for (r, (mut row, &weight)) in d_rows.rows_mut().into_iter().zip(&self.input.weights).enumerate() {
            row.scaled_add(weight, &d_pooled);
            if let Some(mask) = &self.dropout {
                row *= &mask.row(r);
            }
            row.zip_mut_with(&self.pre_activation.row(r), |g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        general_mat_mul(1.0, &self.input.propagated.t(), &d_rows, 1.0, &mut grad.w1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use ndarray::array;
    use rand::SeedableRng;

    fn rand_matrix(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    fn random_symmetric(n: usize, p: f64, seed: u64) -> Array2<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    a[[i, j]] = 1.0;
                    a[[j, i]] = 1.0;
                }
            }
        }
        a
    }

    #[test]
    fn single_node_normalizes_to_one() {
        assert_eq!(normalize_adjacency(&array![[0.0]]), array![[1.0]]);
    }

    #[test]
    fn edge_normalizes_to_halves() {
        let n = normalize_adjacency(&array![[0.0, 1.0], [1.0, 0.0]]);
        for v in n.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn normalization_matches_dense_oracle() {
        let a = random_symmetric(15, 0.3, 2);
        let n = a.nrows();
        let mut a_tilde = a.clone() + Array2::<f64>::eye(n);
        let deg: Vec<f64> = (0..n).map(|i| a_tilde.row(i).sum()).collect();
        let mut d_inv = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            d_inv[[i, i]] = 1.0 / deg[i].sqrt();
        }
        a_tilde = d_inv.dot(&a_tilde).dot(&d_inv);
        let got = normalize_adjacency(&a);
        for (x, y) in got.iter().zip(a_tilde.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn center_readout_equals_full_forward() {
        let a = random_symmetric(12, 0.25, 5);
        let x = rand_matrix(12, 6, 6);
        let enc = Encoder {
            w1: rand_matrix(6, 8, 7),
            w2: rand_matrix(8, 8, 8),
        };
        let a_hat = normalize_adjacency(&a);
        let full = a_hat.dot(&a_hat.dot(&x).dot(&enc.w1).mapv(|v| v.max(0.0))).dot(&enc.w2);
        for center in 0..12 {
            let prepared = PreparedEgo::new(&a, &x, center);
            let trace = encode(&enc, &prepared, 0.0, false, &mut stream(0, Purpose::Dropout, &[])).unwrap();
            for (g, f) in trace.output.iter().zip(full.row(center)) {
                assert!((g - f).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_zero_embedding() {
        let prepared = PreparedEgo::new(&array![[0.0, 1.0], [1.0, 0.0]], &rand_matrix(2, 3, 1), 0);
        let trace = encode(&Encoder::zeros(3, 4), &prepared, 0.5, true, &mut stream(0, Purpose::Dropout, &[])).unwrap();
        assert!(trace.output.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_node_hand_oracle() {
        // Â = [1]; h = relu(x W1) W2
        let x = array![[1.0, -2.0]];
        let enc = Encoder {
            w1: array![[1.0, 0.5], [1.0, -1.0]],
            w2: array![[2.0, 0.0], [1.0, 1.0]],
        };
        // x W1 = [-1, 2.5] -> relu [0, 2.5] -> W2 -> [2.5, 2.5]
        let prepared = PreparedEgo::new(&array![[0.0]], &x, 0);
        let out = encode(&enc, &prepared, 0.0, false, &mut stream(0, Purpose::Dropout, &[])).unwrap().output;
        assert_eq!(out, array![2.5, 2.5]);
    }

    #[test]
    fn zero_rate_dropout_is_bit_identical_to_eval() {
        let a = random_symmetric(9, 0.4, 1);
        let prepared = PreparedEgo::new(&a, &rand_matrix(9, 4, 2), 0);
        let enc = Encoder {
            w1: rand_matrix(4, 6, 3),
            w2: rand_matrix(6, 6, 4),
        };
        let train = encode(&enc, &prepared, 0.0, true, &mut stream(1, Purpose::Dropout, &[])).unwrap();
        let eval = encode(&enc, &prepared, 0.0, false, &mut stream(2, Purpose::Dropout, &[])).unwrap();
        assert_eq!(train.output, eval.output);
    }

    #[test]
    fn replay_reproduces_output() {
        let a = random_symmetric(10, 0.4, 3);
        let prepared = PreparedEgo::new(&a, &rand_matrix(10, 4, 2), 0);
        let enc = Encoder {
            w1: rand_matrix(4, 6, 3),
            w2: rand_matrix(6, 6, 4),
        };
        let trace = encode(&enc, &prepared, 0.5, true, &mut stream(1, Purpose::Dropout, &[])).unwrap();
        assert!(trace.dropout.is_some());
        assert_eq!(trace.replay(&enc), trace.output);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let prepared = PreparedEgo::new(&array![[0.0]], &array![[1.0, 2.0]], 0);
        assert!(encode(&Encoder::zeros(3, 4), &prepared, 0.0, false, &mut stream(0, Purpose::Dropout, &[])).is_err());
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let a = random_symmetric(6, 0.5, 3);
        let prepared = PreparedEgo::new(&a, &rand_matrix(6, 3, 2), 0);
        let enc = Encoder {
            w1: rand_matrix(3, 4, 3),
            w2: rand_matrix(4, 4, 4),
        };
        let trace = encode(&enc, &prepared, 0.5, true, &mut stream(1, Purpose::Dropout, &[])).unwrap();
        let mut g = Encoder::zeros(3, 4);
        trace.backward(&enc, &Array1::zeros(4), &mut g);
        assert!(g.w1.iter().chain(g.w2.iter()).all(|&v| v == 0.0));
    }
}
