//! The composite Conv-LSTM encoder-decoder.

mod cell;
mod checkpoint;
mod config;
mod model;
mod patch;

pub use cell::{cell_step, cell_step_gates, CellGates, CellParams, CellState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use config::{NetworkConfig, OutputNonlinearity, NETWORK_KEYS};
pub use model::{
    stack_frames, unstack_frames, CompositeOutput, DecodeMode, DecoderParams, LossGrad, Model, ModelParams,
};
pub use patch::{patchify, unpatchify};
