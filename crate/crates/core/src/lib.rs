//! Composite Conv-LSTM encoder-decoder networks for video reconstruction and
//! future-frame prediction, and a regularity-score anomaly detector built on
//! their errors.
//!
//! The crate is self-contained: a small reverse-mode autodiff tape ([`Tape`]),
//! the peephole Conv-LSTM cell and composite model ([`net`]), optimizers and
//! a training loop ([`train`]), a procedural bouncing-shapes video generator
//! with PGM I/O ([`data`]), and the scoring / persistence / region-proposal /
//! evaluation pipeline ([`eval`]).

pub mod conv;
pub mod data;
pub mod error;
pub mod eval;
pub mod interval;
pub mod kv;
pub mod net;
pub mod tape;
pub mod tensor;
pub mod train;

#[doc(hidden)]
pub mod cli;

pub use conv::conv2d_same;
pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{mse, sigmoid, xavier_init, Tensor};
