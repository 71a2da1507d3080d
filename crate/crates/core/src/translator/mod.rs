//! Cycle-consistent WLI <-> NBI translation.

pub mod config;
pub mod loss;
pub mod model;
pub mod pool;
pub mod train;
pub mod translate;

pub use config::{lr_at_epoch, TranslatorConfig};
pub use loss::{adversarial_loss, cycle_loss, discriminator_loss, total_loss, CycleBatch, DiscOutputs, LossBreakdown};
pub use model::{all_param_grads, discriminator_objective, CycleGan, Objective, NET_DX, NET_DY, NET_F, NET_G};
pub use pool::ImagePool;
pub use train::{
    load_checkpoint, save_checkpoint, train, train_step, HistoryRow, ImageSource, StepReport, TrainState,
    TranslatorCheckpoint,
};
pub use translate::{snbi_id, Translator};
