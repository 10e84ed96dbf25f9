//! Classifier and predictor heads on top of a node embedding.

use ndarray::Array1;

use super::kernels::{add_outer, mat_vec, vec_mat};
use super::params::{Linear, Predictor};

/// Unnormalized class scores `h W + b`.
pub fn classify(classifier: &Linear, h: &Array1<f64>) -> Array1<f64> {
    vec_mat(h.view(), &classifier.weight) + &classifier.bias
}

/// Accumulates classifier gradients for upstream `d_scores` and returns the
/// gradient with respect to `h`.
pub fn classify_backward(classifier: &Linear, h: &Array1<f64>, d_scores: &Array1<f64>, grad: &mut Linear) -> Array1<f64> {
    add_outer(&mut grad.weight, h.view(), d_scores.view());
    grad.bias += d_scores;
    mat_vec(&classifier.weight, d_scores.view())
}

#[derive(Debug, Clone)]
pub struct PredictorTrace {
    pub input: Array1<f64>,
    pub pre_activation: Array1<f64>,
    pub hidden: Array1<f64>,
    pub output: Array1<f64>,
}

/// `relu(h W1 + b1) W2 + b2`.
pub fn predict_head(pred: &Predictor, h: &Array1<f64>) -> PredictorTrace {
    let pre_activation = vec_mat(h.view(), &pred.hidden.weight) + &pred.hidden.bias;
    let hidden = pre_activation.mapv(|v| v.max(0.0));
    let output = vec_mat(hidden.view(), &pred.out.weight) + &pred.out.bias;
    PredictorTrace {
        input: h.clone(),
        pre_activation,
        hidden,
        output,
    }
}

impl PredictorTrace {
    pub fn backward(&self, pred: &Predictor, d_out: &Array1<f64>, grad: &mut Predictor) -> Array1<f64> {
        add_outer(&mut grad.out.weight, self.hidden.view(), d_out.view());
        grad.out.bias += d_out;
        let mut d_hidden = mat_vec(&pred.out.weight, d_out.view());
        d_hidden.zip_mut_with(&self.pre_activation, |g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        add_outer(&mut grad.hidden.weight, self.input.view(), d_hidden.view());
        grad.hidden.bias += &d_hidden;
        mat_vec(&pred.hidden.weight, d_hidden.view())
    }
}
