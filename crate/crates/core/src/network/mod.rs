//! The assembled network: per-level wiring, loss, training and checkpoints.

mod ablation;
mod checkpoint;
mod loss;
mod model;
mod train;

pub use ablation::{AblationSpec, CmfmMode, PeaMode, VARIANTS};
pub use checkpoint::{CheckpointError, MAGIC, VERSION};
pub use loss::{loss, loss_graph, LossWeights, Targets};
pub use model::{Model, SideVars};
pub use train::{accumulate_example, train, DataOrder, Example, TrainOptions};
