//! Trainable parameter groups.
//!
//! `theta` holds the online encoder, the classifier and the predictor; `phi`
//! holds the target encoder. The two groups never share storage.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{stream, Purpose};

/// Uniform access to the named tensors of a parameter group, in a fixed order.
pub trait Tensors: Clone {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)>;
    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)>;

    /// `self += alpha * other`, tensor by tensor.
    fn scaled_add(&mut self, alpha: f64, other: &Self) {
        let src = other.tensors();
        for ((_, mut dst), (_, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.scaled_add(alpha, &s);
        }
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter().map(|v| v.abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }

    /// Order-sensitive hash of the exact bit patterns.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, t) in self.tensors() {
            for v in t.iter() {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

fn prefixed<'a, T>(prefix: &str, items: Vec<(String, T)>) -> impl Iterator<Item = (String, T)> + 'a
where
    T: 'a,
{
    let prefix = prefix.to_string();
    items.into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

/// Affine map `y = x W + b` with `W` of shape `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }
}

impl Tensors for Linear {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        vec![
            ("weight".into(), self.weight.view().into_dyn()),
            ("bias".into(), self.bias.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        vec![
            ("weight".into(), self.weight.view_mut().into_dyn()),
            ("bias".into(), self.bias.view_mut().into_dyn()),
        ]
    }
}

/// Two-layer graph convolution weights (no biases).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
}

impl Encoder {
    pub fn zeros(d: usize, h: usize) -> Self {
        Self {
            w1: Array2::zeros((d, h)),
            w2: Array2::zeros((h, h)),
        }
    }
}

impl Tensors for Encoder {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        vec![
            ("w1".into(), self.w1.view().into_dyn()),
            ("w2".into(), self.w2.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        vec![
            ("w1".into(), self.w1.view_mut().into_dyn()),
            ("w2".into(), self.w2.view_mut().into_dyn()),
        ]
    }
}

/// Two-layer MLP `relu(h W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub hidden: Linear,
    pub out: Linear,
}

impl Tensors for Predictor {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        prefixed("hidden", self.hidden.tensors())
            .chain(prefixed("out", self.out.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        prefixed("hidden", self.hidden.tensors_mut())
            .chain(prefixed("out", self.out.tensors_mut()))
            .collect()
    }
}

/// The fine-tuned group: online encoder, classifier and predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub encoder: Encoder,
    pub classifier: Linear,
    pub predictor: Predictor,
}

impl Tensors for Theta {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        prefixed("encoder", self.encoder.tensors())
            .chain(prefixed("classifier", self.classifier.tensors()))
            .chain(prefixed("predictor", self.predictor.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        prefixed("encoder", self.encoder.tensors_mut())
            .chain(prefixed("classifier", self.classifier.tensors_mut()))
            .chain(prefixed("predictor", self.predictor.tensors_mut()))
            .collect()
    }
}

/// Layer sizes: input features, encoder width, predictor hidden width, ways.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d: usize,
    pub h: usize,
    pub h1: usize,
    pub n_way: usize,
}

impl Dims {
    pub fn new(d: usize, n_way: usize) -> Self {
        Self { d, h: 64, h1: 128, n_way }
    }
}

/// Both parameter groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub theta: Theta,
    pub phi: Encoder,
}

impl Tensors for ParamSet {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        prefixed("theta", self.theta.tensors())
            .chain(prefixed("phi", self.phi.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        prefixed("theta", self.theta.tensors_mut())
            .chain(prefixed("phi", self.phi.tensors_mut()))
            .collect()
    }
}

impl ParamSet {
    pub fn zeros(dims: Dims) -> Self {
        let Dims { d, h, h1, n_way } = dims;
        Self {
            theta: Theta {
                encoder: Encoder::zeros(d, h),
                classifier: Linear::zeros(h, n_way),
                predictor: Predictor {
                    hidden: Linear::zeros(h, h1),
                    out: Linear::zeros(h1, h),
                },
            },
            phi: Encoder::zeros(d, h),
        }
    }

    /// Glorot-uniform weights, zero biases.
    ///
    /// # Panics
    /// If any dimension is zero.
    pub fn init(dims: Dims, seed: u64) -> Self {
        assert!(
            dims.d > 0 && dims.h > 0 && dims.h1 > 0 && dims.n_way > 0,
            "dimensions must be positive: {dims:?}"
        );
        let mut p = Self::zeros(dims);
        for (i, (name, mut t)) in p.tensors_mut().into_iter().enumerate() {
            if name.ends_with("bias") {
                continue;
            }
            let (fan_in, fan_out) = (t.shape()[0], t.shape()[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = stream(seed, Purpose::Init, &[i as u64]);
            t.mapv_inplace(|_| rng.random_range(-limit..=limit));
        }
        p
    }

    pub fn dims(&self) -> Dims {
        Dims {
            d: self.theta.encoder.w1.nrows(),
            h: self.theta.encoder.w1.ncols(),
            h1: self.theta.predictor.hidden.weight.ncols(),
            n_way: self.theta.classifier.weight.ncols(),
        }
    }
}
