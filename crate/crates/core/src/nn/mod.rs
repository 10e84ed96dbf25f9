//! Dense kernels: graph-convolution encoders, heads, losses and their
//! hand-derived gradients.

mod checkpoint;
mod encoder;
mod gradcheck;
mod heads;
mod kernels;
mod loss;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use encoder::{encode, normalize_adjacency, EncoderTrace, PreparedEgo};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, TensorCheck, REL_ERR_FLOOR};
pub use heads::{classify, classify_backward, predict_head, PredictorTrace};
pub use loss::{cosine_loss, normalized_mse, softmax, softmax_cross_entropy, CosineLoss, COSINE_EPS};
pub use params::{Dims, Encoder, Linear, ParamSet, Predictor, Tensors, Theta};
