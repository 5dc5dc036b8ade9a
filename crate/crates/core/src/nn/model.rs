use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, ModelMode};
use super::data::{CharMatrix, ParallelBatch, Vocabs};
use crate::autograd::{Graph, ParamId, ParamSet, Real, Tensor, Var, XentStats};
use crate::error::{Error, Result};
use crate::subword::{PAD, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub src: usize,
    pub tgt: usize,
    /// Character vocabulary size; ignored in `tok` mode.
    pub chars: usize,
}

impl VocabSizes {
    pub fn of(vocabs: &Vocabs) -> Self {
        VocabSizes {
            src: vocabs.src.len(),
            tgt: vocabs.tgt.len(),
            chars: vocabs.chars.as_ref().map_or(0, |c| c.len()),
        }
    }
}

#[derive(Debug, Clone)]
struct LstmIds {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct HighwayIds {
    w_h: ParamId,
    b_h: ParamId,
    w_t: ParamId,
    b_t: ParamId,
}

#[derive(Debug, Clone)]
struct CharCnnIds {
    emb: ParamId,
    banks: Vec<(ParamId, ParamId)>,
    highway: Vec<HighwayIds>,
}

#[derive(Debug, Clone)]
struct Layout {
    src_emb: Option<ParamId>,
    charcnn: Option<CharCnnIds>,
    enc_fwd: LstmIds,
    enc_bwd: LstmIds,
    tgt_emb: ParamId,
    dec: LstmIds,
    attn_out: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// Recurrent decoder state; every tensor is `[batch × hidden]`.
#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    /// Previous attentional state, fed back into the next input.
    pub feed: Var,
}

/// Encoder output for one batch.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `[batch × src_len × hidden]`
    pub states: Var,
    /// `[batch × src_len]`, false at padding.
    pub mask: Vec<bool>,
    pub batch: usize,
    pub src_len: usize,
    pub init: DecoderState,
}

/// Sequence-to-sequence model with parameters of element type `T`.
#[derive(Debug, Clone)]
pub struct Seq2Seq<T: Real> {
    config: ModelConfig,
    sizes: VocabSizes,
    params: ParamSet<T>,
    layout: Layout,
}

struct Init<'a, T: Real> {
    params: &'a mut ParamSet<T>,
    rng: ChaCha8Rng,
    range: f64,
}

impl<T: Real> Init<'_, T> {
    fn uniform(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let t = Tensor::uniform(shape, -self.range, self.range, &mut self.rng);
        self.params.add(name, t)
    }

    fn filled(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.params.add(name, Tensor::filled(shape, T::from_f64(value)))
    }

    fn lstm(&mut self, prefix: &str, input: usize, hidden: usize) -> Result<LstmIds> {
        Ok(LstmIds {
            w_ih: self.uniform(&format!("{prefix}.w_ih"), &[input, 4 * hidden])?,
            w_hh: self.uniform(&format!("{prefix}.w_hh"), &[hidden, 4 * hidden])?,
            bias: self.uniform(&format!("{prefix}.bias"), &[4 * hidden])?,
        })
    }
}

impl<T: Real> Seq2Seq<T> {
    /// Fresh model with parameters uniform in `±init_range` (highway gate
    /// biases set to `highway_gate_bias`), drawn from `seed`.
    pub fn new(config: ModelConfig, sizes: VocabSizes, seed: u64) -> Result<Self> {
        config.validate()?;
        if sizes.src < 4 || sizes.tgt < 4 || (config.mode == ModelMode::Char && sizes.chars < 4) {
            return Err(Error::Config(format!("vocabularies must include the special entries, got {sizes:?}")));
        }
        let mut params = ParamSet::new();
        let mut init = Init {
            params: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            range: config.init_range,
        };
        let hidden = config.hidden_size;
        let half = hidden / 2;

        let (src_emb, charcnn) = match config.mode {
            ModelMode::Tok => (Some(init.uniform("src_emb", &[sizes.src, config.word_emb_size])?), None),
            ModelMode::Char => {
                let emb = init.uniform("char_emb", &[sizes.chars, config.char_emb_size])?;
                let mut banks = Vec::new();
                for (i, bank) in config.kernel_banks().iter().enumerate() {
                    let k = init.uniform(&format!("conv.{i}.kernels"), &[bank.count, bank.width, config.char_emb_size])?;
                    let b = init.uniform(&format!("conv.{i}.bias"), &[bank.count])?;
                    banks.push((k, b));
                }
                let f = config.char_output_size();
                let mut highway = Vec::new();
                for l in 0..config.highway_layers {
                    highway.push(HighwayIds {
                        w_h: init.uniform(&format!("highway.{l}.w_h"), &[f, f])?,
                        b_h: init.uniform(&format!("highway.{l}.b_h"), &[f])?,
                        w_t: init.uniform(&format!("highway.{l}.w_t"), &[f, f])?,
                        b_t: init.filled(&format!("highway.{l}.b_t"), &[f], config.highway_gate_bias)?,
                    });
                }
                (None, Some(CharCnnIds { emb, banks, highway }))
            }
        };
        let input = config.encoder_input_size();
        let enc_fwd = init.lstm("enc.fwd", input, half)?;
        let enc_bwd = init.lstm("enc.bwd", input, half)?;
        let tgt_emb = init.uniform("tgt_emb", &[sizes.tgt, config.word_emb_size])?;
        let dec = init.lstm("dec", config.word_emb_size + hidden, hidden)?;
        let attn_out = init.uniform("attn.w_c", &[2 * hidden, hidden])?;
        let out_w = init.uniform("out.w", &[hidden, sizes.tgt])?;
        let out_b = init.uniform("out.b", &[sizes.tgt])?;

        let layout = Layout {
            src_emb,
            charcnn,
            enc_fwd,
            enc_bwd,
            tgt_emb,
            dec,
            attn_out,
            out_w,
            out_b,
        };
        Ok(Seq2Seq {
            config,
            sizes,
            params,
            layout,
        })
    }

    /// Rebuilds a model around stored parameters, checking every name and shape.
    pub fn from_params(config: ModelConfig, sizes: VocabSizes, params: ParamSet<T>) -> Result<Self> {
        let mut model = Self::new(config, sizes, 0)?;
        if model.params.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                model.params.len(),
                params.len()
            )));
        }
        for ((_, want_name, want), (_, name, got)) in model.params.iter().zip(params.iter()) {
            if want_name != name || want.shape() != got.shape() {
                return Err(Error::Config(format!(
                    "parameter mismatch: expected {want_name} {:?}, found {name} {:?}",
                    want.shape(),
                    got.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn sizes(&self) -> VocabSizes {
        self.sizes
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Same model with parameters converted to another element type.
    pub fn cast<U: Real>(&self) -> Seq2Seq<U> {
        Seq2Seq {
            config: self.config.clone(),
            sizes: self.sizes,
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Mirrors the forward encoder direction's weights into the backward one.
    #[cfg(test)]
    pub(crate) fn mirror_encoder_directions(&mut self) {
        let pairs = [
            (self.layout.enc_fwd.w_ih, self.layout.enc_bwd.w_ih),
            (self.layout.enc_fwd.w_hh, self.layout.enc_bwd.w_hh),
            (self.layout.enc_fwd.bias, self.layout.enc_bwd.bias),
        ];
        for (from, to) in pairs {
            let v = self.params.get(from).clone();
            *self.params.get_mut(to) = v;
        }
    }

    // ---- character CNN ----

    /// Word vectors `[words × F]` for a matrix of character rows.
    pub fn char_reps(&self, g: &mut Graph<'_, T>, chars: &CharMatrix) -> Result<Var> {
        let ids = self
            .layout
            .charcnn
            .as_ref()
            .ok_or_else(|| Error::Config("character encoder used in tok mode".into()))?;
        let words = chars.lengths.len();
        let clamped: Vec<u32> = chars
            .ids
            .iter()
            .map(|&c| if (c as usize) < self.sizes.chars { c } else { UNK })
            .collect();
        let table = g.param(ids.emb);
        let emb = g.embedding(table, &clamped)?;
        let emb = g.reshape(emb, &[words, chars.width, self.config.char_emb_size])?;

        let mut pooled = Vec::with_capacity(ids.banks.len());
        for (bank, &(k, b)) in self.config.kernel_banks().iter().zip(&ids.banks) {
            let (k, b) = (g.param(k), g.param(b));
            let conv = g.conv_temporal(emb, k, b)?;
            let act = g.tanh(conv);
            let valid: Vec<usize> = chars.lengths.iter().map(|&l| l + 1 - bank.width).collect();
            pooled.push(g.max_over_time_masked(act, &valid)?);
        }
        let mut x = if pooled.len() == 1 { pooled[0] } else { g.concat_cols(&pooled)? };
        for layer in 0..ids.highway.len() {
            x = self.highway(g, x, layer)?;
        }
        Ok(x)
    }

    /// Character-CNN vector `[F]` of one word given as character ids.
    /// Trailing PAD symbols are not part of the word and never change the result.
    pub fn charcnn_encode(&self, g: &mut Graph<'_, T>, word_chars: &[u32]) -> Result<Var> {
        let len = word_chars.iter().rposition(|&c| c != PAD).map_or(0, |p| p + 1);
        if len == 0 {
            return Err(Error::Input("charcnn_encode: word has no characters".into()));
        }
        let pad_to = self.config.max_kernel_width();
        let width = len.max(pad_to);
        let mut ids = word_chars[..len].to_vec();
        ids.resize(width, PAD);
        let m = CharMatrix {
            ids,
            width,
            lengths: vec![width],
        };
        let x = self.char_reps(g, &m)?;
        g.reshape(x, &[self.config.char_output_size()])
    }

    /// `y = t ⊙ relu(W_H x + b_H) + (1 − t) ⊙ x` with `t = σ(W_T x + b_T)`,
    /// for `x` of shape `[N × F]`.
    pub fn highway(&self, g: &mut Graph<'_, T>, x: Var, layer: usize) -> Result<Var> {
        let ids = &self
            .layout
            .charcnn
            .as_ref()
            .ok_or_else(|| Error::Config("highway layers exist only in char mode".into()))?
            .highway[layer];
        let (w_h, b_h, w_t, b_t) = (g.param(ids.w_h), g.param(ids.b_h), g.param(ids.w_t), g.param(ids.b_t));
        let h = g.matmul(x, w_h)?;
        let h = g.add_bias(h, b_h)?;
        let h = g.relu(h);
        let t = g.matmul(x, w_t)?;
        let t = g.add_bias(t, b_t)?;
        let t = g.sigmoid(t);
        let carry = g.one_minus(t);
        let transformed = g.mul(t, h)?;
        let kept = g.mul(carry, x)?;
        g.add(transformed, kept)
    }

    // ---- recurrent pieces ----

    fn lstm_cell(&self, g: &mut Graph<'_, T>, ids: &LstmIds, x_proj: Var, h: Var, c: Var, hidden: usize) -> Result<(Var, Var)> {
        let w_hh = g.param(ids.w_hh);
        let rec = g.matmul(h, w_hh)?;
        let gates = g.add(x_proj, rec)?;
        let i = g.slice_cols(gates, 0, hidden)?;
        let f = g.slice_cols(gates, hidden, hidden)?;
        let cand = g.slice_cols(gates, 2 * hidden, hidden)?;
        let o = g.slice_cols(gates, 3 * hidden, hidden)?;
        let (i, f, cand, o) = (g.sigmoid(i), g.sigmoid(f), g.tanh(cand), g.sigmoid(o));
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_new = g.add(keep, write)?;
        let squashed = g.tanh(c_new);
        let h_new = g.mul(o, squashed)?;
        Ok((h_new, c_new))
    }

    /// Input projection `x·W_ih + b` for all positions, as `[B × S × 4h]`.
    fn project(&self, g: &mut Graph<'_, T>, ids: &LstmIds, x: Var, batch: usize, len: usize) -> Result<Var> {
        let (w, b) = (g.param(ids.w_ih), g.param(ids.bias));
        let p = g.matmul(x, w)?;
        let p = g.add_bias(p, b)?;
        let width = g.shape(p)[1];
        g.reshape(p, &[batch, len, width])
    }

    /// Runs one encoder direction. Positions at or beyond a sentence's length
    /// leave its state untouched, so the backward pass starts at the true end.
    fn run_direction(
        &self,
        g: &mut Graph<'_, T>,
        ids: &LstmIds,
        proj: Var,
        lengths: &[usize],
        reverse: bool,
    ) -> Result<(Vec<Var>, Var, Var)> {
        let (batch, len) = (g.shape(proj)[0], g.shape(proj)[1]);
        let hidden = self.config.hidden_size / 2;
        let mut h = g.constant(Tensor::zeros(&[batch, hidden]));
        let mut c = g.constant(Tensor::zeros(&[batch, hidden]));
        let mut outputs = vec![h; len];
        let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
        for t in order {
            let xp = g.select(proj, t)?;
            let (hn, cn) = self.lstm_cell(g, ids, xp, h, c, hidden)?;
            if lengths.iter().all(|&l| t < l) {
                h = hn;
                c = cn;
            } else {
                let keep: Vec<T> = lengths
                    .iter()
                    .flat_map(|&l| std::iter::repeat(if t < l { T::one() } else { T::zero() }).take(hidden))
                    .collect();
                let inv: Vec<T> = keep.iter().map(|&m| T::one() - m).collect();
                let m = g.constant(Tensor::new(&[batch, hidden], keep)?);
                let inv = g.constant(Tensor::new(&[batch, hidden], inv)?);
                h = self.blend(g, m, inv, hn, h)?;
                c = self.blend(g, m, inv, cn, c)?;
            }
            outputs[t] = h;
        }
        Ok((outputs, h, c))
    }

    /// `m ⊙ new + inv ⊙ old` with 0/1 masks; exact in both branches.
    fn blend(&self, g: &mut Graph<'_, T>, m: Var, inv: Var, new: Var, old: Var) -> Result<Var> {
        let a = g.mul(m, new)?;
        let b = g.mul(inv, old)?;
        g.add(a, b)
    }

    /// Bidirectional encoding of a batch into `[B × S × hidden]` states plus
    /// the decoder's initial state (final states of both directions).
    pub fn encode(&self, g: &mut Graph<'_, T>, batch: &ParallelBatch) -> Result<Encoded> {
        let (b, s) = (batch.batch, batch.src_len);
        let x = match self.config.mode {
            ModelMode::Tok => {
                let table = g.param(self.layout.src_emb.expect("tok layout"));
                g.embedding(table, &batch.src_ids)?
            }
            ModelMode::Char => {
                let chars = batch
                    .src_chars
                    .as_ref()
                    .ok_or_else(|| Error::Input("char mode batch without character rows".into()))?;
                self.char_reps(g, chars)?
            }
        };
        let x = g.dropout(x, self.config.dropout)?;
        let proj_f = self.project(g, &self.layout.enc_fwd, x, b, s)?;
        let proj_b = self.project(g, &self.layout.enc_bwd, x, b, s)?;
        let (out_f, hf, cf) = self.run_direction(g, &self.layout.enc_fwd, proj_f, &batch.src_lengths, false)?;
        let (out_b, hb, cb) = self.run_direction(g, &self.layout.enc_bwd, proj_b, &batch.src_lengths, true)?;
        let per_step = out_f
            .iter()
            .zip(&out_b)
            .map(|(&f, &bw)| g.concat_cols(&[f, bw]))
            .collect::<Result<Vec<_>>>()?;
        let states = g.stack(&per_step)?;
        let states = g.dropout(states, self.config.dropout)?;
        let h = g.concat_cols(&[hf, hb])?;
        let c = g.concat_cols(&[cf, cb])?;
        let feed = g.constant(Tensor::zeros(&[b, self.config.hidden_size]));
        Ok(Encoded {
            states,
            mask: batch.src_mask(),
            batch: b,
            src_len: s,
            init: DecoderState { h, c, feed },
        })
    }

    /// Global dot-product attention for decoder states `h` `[B × hidden]`.
    /// Returns (context, weights `[B × S]`, attentional state `tanh(W_c[ctx; h])`).
    pub fn attention_step(&self, g: &mut Graph<'_, T>, h: Var, enc: &Encoded) -> Result<(Var, Var, Var)> {
        let hidden = self.config.hidden_size;
        let (b, s) = (enc.batch, enc.src_len);
        let q = g.reshape(h, &[b, hidden, 1])?;
        let scores = g.bmm(enc.states, q)?;
        let scores = g.reshape(scores, &[b, s])?;
        let weights = g.masked_softmax(scores, &enc.mask)?;
        let w3 = g.reshape(weights, &[b, 1, s])?;
        let ctx = g.bmm(w3, enc.states)?;
        let ctx = g.reshape(ctx, &[b, hidden])?;
        let joined = g.concat_cols(&[ctx, h])?;
        let w_c = g.param(self.layout.attn_out);
        let a = g.matmul(joined, w_c)?;
        let attentional = g.tanh(a);
        Ok((ctx, weights, attentional))
    }

    /// One decoder step from the previous target ids; returns logits
    /// `[B × V_tgt]`, the next state and the attention weights.
    pub fn decoder_step(
        &self,
        g: &mut Graph<'_, T>,
        enc: &Encoded,
        prev: &[u32],
        state: &DecoderState,
    ) -> Result<(Var, DecoderState, Var)> {
        let table = g.param(self.layout.tgt_emb);
        let emb = g.embedding(table, prev)?;
        let emb = g.dropout(emb, self.config.dropout)?;
        let x = g.concat_cols(&[emb, state.feed])?;
        let w_ih = g.param(self.layout.dec.w_ih);
        let bias = g.param(self.layout.dec.bias);
        let proj = g.matmul(x, w_ih)?;
        let proj = g.add_bias(proj, bias)?;
        let (h, c) = self.lstm_cell(g, &self.layout.dec, proj, state.h, state.c, self.config.hidden_size)?;
        let (_, weights, attentional) = self.attention_step(g, h, enc)?;
        let out = g.dropout(attentional, self.config.dropout)?;
        let (w, b) = (g.param(self.layout.out_w), g.param(self.layout.out_b));
        let logits = g.matmul(out, w)?;
        let logits = g.add_bias(logits, b)?;
        Ok((logits, DecoderState { h, c, feed: out }, weights))
    }

    /// Teacher-forced mean cross-entropy over non-PAD target positions, with
    /// word-level prediction counts.
    pub fn teacher_forced(&self, g: &mut Graph<'_, T>, batch: &ParallelBatch) -> Result<(Var, XentStats)> {
        let enc = self.encode(g, batch)?;
        let (b, t) = (batch.batch, batch.tgt_len);
        let mut state = enc.init;
        let mut logits = Vec::with_capacity(t - 1);
        for step in 0..t - 1 {
            let prev: Vec<u32> = (0..b).map(|i| batch.tgt_ids[i * t + step]).collect();
            let (l, next, _) = self.decoder_step(g, &enc, &prev, &state)?;
            logits.push(l);
            state = next;
        }
        let stacked = g.stack(&logits)?;
        let flat = g.reshape(stacked, &[b * (t - 1), self.sizes.tgt])?;
        let targets: Vec<u32> = (0..b)
            .flat_map(|i| batch.tgt_ids[i * t + 1..(i + 1) * t].iter().copied())
            .collect();
        g.softmax_xent(flat, &targets, PAD)
    }
}
