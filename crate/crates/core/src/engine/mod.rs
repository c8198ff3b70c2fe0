//! Minimal differentiable network engine: forward scoring, reverse-mode
//! gradients with respect to inputs and parameters, exact final-layer
//! Hessians, input-Hessian-vector products, training, and checkpoints.

mod checkpoint;
mod hessian;
mod layer;
mod loss;
mod model;
mod train;

pub use checkpoint::{load_model, save_model};
pub use hessian::{hessian_final_layer, Cholesky, Matrix};
pub use layer::{ActivationKind, Layer};
pub(crate) use layer::{conv_forward, conv_input_vjp, dense_input_vjp};
pub use loss::{argmax, cross_entropy, dloss_dscores, log_sum_exp, softmax};
pub use model::{ActivationMode, ForwardCache, LayerGrads, Model};
pub use train::{train, Optimizer, TrainConfig};
