//! Translation model: word-embedding (`tok`) or character-CNN (`char`)
//! source representations feeding a biLSTM encoder, and an LSTM decoder with
//! global dot-product attention and input feeding.

mod config;
mod data;
mod decode;
mod model;

pub use config::{KernelBank, ModelConfig, ModelMode};
pub use data::{build_char_vocab, word_chars, CharMatrix, Example, ParallelBatch, Vocabs, CHAR_CONTINUATION};
pub use decode::Strategy;
pub use model::{DecoderState, Encoded, Seq2Seq, VocabSizes};
