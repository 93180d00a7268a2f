//! Fully convolutional encoder–decoder that maps a localized mean-PV window
//! to the covariance patch around its centre.

mod layers;
mod net;
mod predict;
mod train;


pub use layers::{Act, Real};
pub use net::{
    backward, forward, forward_traced, loss_and_grad, mse_loss, Adam, Block, BlockKind, NetConfig, NetParams,
    Trace,
};
pub use predict::{predict_records, predict_windows, NetPatches, NetSource, TransferPatches, TransferSource};
pub use train::{
    batch_tensors, evaluate, train, Checkpoint, EpochLoss, PatchDataset, PatchRecord, Standardization,
    TrainConfig, TrainOutcome,
};
