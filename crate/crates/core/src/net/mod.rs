//! The unrolled pixel-classification network: parameters, forward and
//! backward passes, optimizer, training loop, and checkpoint files.

mod checkpoint;
mod layers;
mod model;
mod optim;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use model::{data_consistency_step, forward, loss, loss_and_gradients, ForwardMode, Sample};
pub use optim::RAdam;
pub use params::{init_params, ArchSpec, Conv, NetworkParameters, Tensor};
pub use train::{
    split_indices, train, train_from, train_with_validation, Checkpoint, EpochLoss, Optimizer, TrainingConfig, TrainingExample,
};

