//! Small feed-forward engine: forward/backward passes, training, and
//! gradient verification for 1-D convolutional classifiers.

pub mod backward;
pub mod forward;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod real;
pub mod spec;
pub mod train;

pub use backward::{backward, cross_entropy, loss_and_grad, Gradients, LossGrad};
pub use forward::{argmax, forward, forward_from, predict, softmax, ForwardTrace, Mode};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use optim::{Optimizer, OptimizerKind, OptimizerSettings};
pub use params::{LayerParams, Parameters};
pub use real::Real;
pub use spec::{LayerSpec, ModelSpec, Shape};
pub use train::{train, History, LabeledSet, PassRecord, TrainConfig};
