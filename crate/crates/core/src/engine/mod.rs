//! Network construction, traced forward evaluation, backpropagation and
//! SGD training for dense, convolutional and recurrent layers.

pub mod architecture;
pub mod backprop;
pub mod forward;
pub mod gradcheck;
pub mod network;
pub mod serialize;
pub mod train;

pub use architecture::{
    Activation, ArchitectureKind, ArchitectureSpec, InputGeometry, LayerSpec, Task,
};
pub use backprop::{accuracy, mean_squared_error, Gradients, Loss, Targets};
pub use forward::{argmax_rows, ForwardTrace, LayerTrace};
pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};
pub use network::{LayerParams, Network};
pub use serialize::{export_network, import_network, network_from_json, network_to_json};
pub use train::{evaluate, train, MetricKind, TrainConfig, TrainReport};
