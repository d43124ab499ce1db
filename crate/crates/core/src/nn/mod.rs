//! Neural network stack over share tensors: layers, loss, optimizers,
//! initialization, model definitions, and the training loop.

pub mod init;
pub mod layers;
pub mod loss;
pub mod models;
pub mod optim;
pub mod tensor;
pub mod train;

pub use models::ModelKind;
pub use tensor::ShareTensor;
