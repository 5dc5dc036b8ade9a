//! Neural machine translation toolkit combining byte-pair encoding on the
//! data side with a character-level convolutional word encoder on the model
//! side, inside a biLSTM encoder / attention decoder.
//!
//! The crate is organised bottom-up:
//!
//! - [`subword`]: tokenisation, vocabularies, BPE learning/application and corpus statistics.
//! - [`autograd`]: a small reverse-mode differentiation tape over dense tensors.
//! - [`nn`]: the `tok` and `char` encoder configurations, attention decoder and decoding.
//! - [`training`]: Adadelta, batching, checkpoints and dev-accuracy model selection.
//! - [`evaluation`]: corpus BLEU, OOV analysis, POS-class recall and system grids.
//! - [`pipeline`]: config files and the commands behind the `morphnmt` binary.

pub mod autograd;
pub mod error;
pub mod evaluation;
pub mod fsutil;
pub mod nn;
pub mod pipeline;
pub mod subword;
pub mod training;

pub use error::{Error, Result};
