//! A small neural-network engine: causal dilated convolution, batch
//! normalization, LSTM, dense and concatenation layers wired as a DAG,
//! trained with MSE and Adam.

pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;
pub mod train;

pub use gradcheck::{grad_check, grad_check_inputs, GradCheckReport};
pub use graph::{weight_key, Gradients, GraphSpec, InputSpec, NamedTensors, NetworkModel, NodeSpec, Tape};
pub use io::{load_weights, save_weights, WEIGHTS_MAGIC};
pub use layers::{Activation, LayerSpec};
pub use loss::mse_loss;
pub use optim::{adam_step, AdamState, StepOutcome};
pub use tensor::Tensor;
pub use train::{evaluate, train, EpochRecord, History, TrainConfig, TrainData};
