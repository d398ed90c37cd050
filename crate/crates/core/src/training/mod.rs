//! Seq2seq training with gradient accumulation, semi-frozen layer
//! schedules and binary checkpoints.

mod checkpoint;
mod freeze;
mod trainer;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, read_manifest, save_checkpoint, Checkpoint, Manifest,
    TensorEntry, FORMAT_VERSION, MAGIC,
};
pub use freeze::{resolve_freeze, trainable_names, FreezeSchedule, LayerSelector};
pub use trainer::{train, LossRecord, SlotScope, TrainConfig};
