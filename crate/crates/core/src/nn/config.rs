use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source representation: word embeddings or a character CNN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelMode {
    Tok,
    Char,
}

impl FromStr for ModelMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tok" => Ok(ModelMode::Tok),
            "char" => Ok(ModelMode::Char),
            other => Err(Error::Config(format!("unknown model mode {other:?} (expected tok or char)"))),
        }
    }
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelMode::Tok => "tok",
            ModelMode::Char => "char",
        })
    }
}

/// An additional bank of convolution kernels of a given width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelBank {
    pub width: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: ModelMode,
    /// Encoder output / decoder state size; each encoder direction gets half.
    pub hidden_size: usize,
    pub word_emb_size: usize,
    pub char_emb_size: usize,
    pub kernel_width: usize,
    pub num_kernels: usize,
    /// Extra kernel widths beside the main bank; empty by default.
    pub extra_kernels: Vec<KernelBank>,
    pub highway_layers: usize,
    pub max_word_len: usize,
    pub dropout: f64,
    pub beam_size: usize,
    /// Half-width of the uniform parameter initialisation.
    pub init_range: f64,
    /// Initial bias of every highway transform gate.
    pub highway_gate_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: ModelMode::Tok,
            hidden_size: 1024,
            word_emb_size: 512,
            char_emb_size: 25,
            kernel_width: 6,
            num_kernels: 1000,
            extra_kernels: Vec::new(),
            highway_layers: 2,
            max_word_len: 35,
            dropout: 0.2,
            beam_size: 5,
            init_range: 0.1,
            highway_gate_bias: -2.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_size", self.hidden_size),
            ("word_emb_size", self.word_emb_size),
            ("char_emb_size", self.char_emb_size),
            ("kernel_width", self.kernel_width),
            ("num_kernels", self.num_kernels),
            ("max_word_len", self.max_word_len),
            ("beam_size", self.beam_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden_size % 2 != 0 {
            return Err(Error::Config(format!(
                "hidden_size must be even (split across two directions), got {}",
                self.hidden_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        for bank in self.kernel_banks() {
            if bank.width == 0 || bank.count == 0 {
                return Err(Error::Config(format!("kernel bank {bank:?} must have positive extents")));
            }
            if bank.width > self.max_word_len + 2 {
                return Err(Error::Config(format!(
                    "kernel width {} exceeds max_word_len + 2 = {}",
                    bank.width,
                    self.max_word_len + 2
                )));
            }
        }
        if !(self.init_range > 0.0) {
            return Err(Error::Config("init_range must be positive".into()));
        }
        Ok(())
    }

    /// The main bank followed by any extra banks.
    pub fn kernel_banks(&self) -> Vec<KernelBank> {
        let mut banks = vec![KernelBank {
            width: self.kernel_width,
            count: self.num_kernels,
        }];
        banks.extend(self.extra_kernels.iter().copied());
        banks
    }

    /// Size of one character-CNN word vector.
    pub fn char_output_size(&self) -> usize {
        self.kernel_banks().iter().map(|b| b.count).sum()
    }

    /// Widest kernel; shorter words are padded up to it.
    pub fn max_kernel_width(&self) -> usize {
        self.kernel_banks().iter().map(|b| b.width).max().unwrap_or(1)
    }

    /// Size of the vectors entering the encoder LSTM.
    pub fn encoder_input_size(&self) -> usize {
        match self.mode {
            ModelMode::Tok => self.word_emb_size,
            ModelMode::Char => self.char_output_size(),
        }
    }
}
