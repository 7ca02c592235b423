//! Minimal from-scratch CNN framework: the layers, losses, and optimizer the
//! two nest-mapping networks need, with finite-difference gradient
//! verification and deterministic training.

pub mod adam;
pub mod check;
pub mod input;
pub mod layers;
pub mod loss;
pub mod net;
pub mod serialize;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use check::{analytic_gradients, gradient_check, numeric_gradient, relative_error, sample_indices};
pub use input::InputPipeline;
pub use layers::Layer;
pub use loss::{bce_loss, evaluate_loss, mse_loss, LossKind};
pub use net::{detection_network, nest_cnn, size_network, Head, NetProfile, Network};
pub use serialize::{load_model, save_model, Model};
pub use tensor::Tensor;
pub use train::{curves_to_csv, predict_set, train, EpochStats, TrainConfig, TrainSet};
