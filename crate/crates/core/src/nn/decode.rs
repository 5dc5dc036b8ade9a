use std::str::FromStr;

use super::data::{Example, ParallelBatch};
use super::model::{DecoderState, Encoded, Seq2Seq};
use crate::autograd::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::subword::{BOS, EOS, PAD, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    /// Beam search with this many hypotheses, scored by length-normalised
    /// sum of log-probabilities.
    Beam(usize),
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "greedy" {
            return Ok(Strategy::Greedy);
        }
        match s.strip_prefix("beam").map(|n| n.trim_start_matches([':', '='])).map(str::parse) {
            Some(Ok(k)) if k > 0 => Ok(Strategy::Beam(k)),
            _ => Err(Error::Config(format!("unknown decoding strategy {s:?} (greedy or beam:<k>)"))),
        }
    }
}

/// Log-softmax of one logits row, with PAD and BOS made unreachable.
fn log_probs<T: Real>(row: &[T]) -> Vec<f64> {
    let max = row.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|x| (x.as_f64() - max).exp()).sum::<f64>().ln() + max;
    let mut lp: Vec<f64> = row.iter().map(|x| x.as_f64() - lse).collect();
    lp[PAD as usize] = f64::NEG_INFINITY;
    lp[BOS as usize] = f64::NEG_INFINITY;
    lp
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

struct Hyp {
    tokens: Vec<u32>,
    score: f64,
}

impl Hyp {
    fn normalized(&self, extra: usize) -> f64 {
        self.score / (self.tokens.len() + extra).max(1) as f64
    }
}

fn gather_rows<T: Real>(g: &mut Graph<'_, T>, v: Var, rows: &[usize]) -> Result<Var> {
    let width = g.shape(v)[1];
    let data = g.value(v);
    let mut out = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        out.extend_from_slice(&data[r * width..(r + 1) * width]);
    }
    let t = Tensor::new(&[rows.len(), width], out)?;
    Ok(g.constant(t))
}

fn replicate<T: Real>(g: &mut Graph<'_, T>, enc: &Encoded, copies: usize) -> Result<Encoded> {
    let shape = g.shape(enc.states).to_vec();
    let one = g.value(enc.states).to_vec();
    let data: Vec<T> = std::iter::repeat(one).take(copies).flatten().collect();
    let states = g.constant(Tensor::new(&[copies, shape[1], shape[2]], data)?);
    Ok(Encoded {
        states,
        mask: enc.mask.iter().copied().cycle().take(copies * enc.src_len).collect(),
        batch: copies,
        src_len: enc.src_len,
        init: enc.init,
    })
}

impl<T: Real> Seq2Seq<T> {
    /// Decodes one source sentence into target ids (without BOS/EOS).
    ///
    /// Decoding stops at EOS or after `2 × source length + 10` steps. An empty
    /// result is replaced by a single UNK.
    pub fn translate_ids(&self, src: &Example, strategy: Strategy) -> Result<Vec<u32>> {
        let batch = ParallelBatch::from_examples(&[src], &[0], self.config().max_kernel_width())?;
        let mut g = Graph::inference(self.params());
        let enc = self.encode(&mut g, &batch)?;
        let max_steps = 2 * batch.src_len + 10;
        let out = match strategy {
            Strategy::Greedy => self.greedy(&mut g, &enc, max_steps)?,
            Strategy::Beam(k) => self.beam(&mut g, &enc, k.max(1), max_steps)?,
        };
        if out.is_empty() {
            log::warn!("empty translation replaced by UNK");
            return Ok(vec![UNK]);
        }
        Ok(out)
    }

    fn greedy(&self, g: &mut Graph<'_, T>, enc: &Encoded, max_steps: usize) -> Result<Vec<u32>> {
        let mut state = enc.init;
        let mut prev = BOS;
        let mut out = Vec::new();
        for _ in 0..max_steps {
            let (logits, next, _) = self.decoder_step(g, enc, &[prev], &state)?;
            let tok = argmax(&log_probs(g.value(logits))) as u32;
            if tok == EOS {
                break;
            }
            out.push(tok);
            prev = tok;
            state = next;
        }
        Ok(out)
    }

    fn beam(&self, g: &mut Graph<'_, T>, enc: &Encoded, k: usize, max_steps: usize) -> Result<Vec<u32>> {
        let vocab = self.sizes().tgt;
        let mut live = vec![Hyp { tokens: Vec::new(), score: 0.0 }];
        let mut state: DecoderState = enc.init;
        let mut finished: Vec<Hyp> = Vec::new();
        let mut views: Vec<Option<Encoded>> = vec![None; k + 1];

        for _ in 0..max_steps {
            let n = live.len();
            if views[n].is_none() {
                views[n] = Some(if n == 1 { enc.clone() } else { replicate(g, enc, n)? });
            }
            let view = views[n].clone().unwrap();
            let prev: Vec<u32> = live.iter().map(|h| *h.tokens.last().unwrap_or(&BOS)).collect();
            let (logits, next, _) = self.decoder_step(g, &view, &prev, &state)?;

            // (score, hyp, token); ties resolve to the lower hyp, then lower token.
            let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(n * 2 * k);
            for (i, hyp) in live.iter().enumerate() {
                let lp = log_probs(&g.value(logits)[i * vocab..(i + 1) * vocab]);
                let mut order: Vec<usize> = (0..vocab).filter(|&j| lp[j].is_finite()).collect();
                order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
                order.truncate(2 * k);
                cands.extend(order.into_iter().map(|j| (hyp.score + lp[j], i, j)));
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

            let mut next_live = Vec::with_capacity(k);
            let mut rows = Vec::with_capacity(k);
            for (score, i, j) in cands {
                if finished.len() >= k || next_live.len() >= k {
                    break;
                }
                let mut tokens = live[i].tokens.clone();
                if j as u32 == EOS {
                    finished.push(Hyp { tokens, score });
                    continue;
                }
                tokens.push(j as u32);
                next_live.push(Hyp { tokens, score });
                rows.push(i);
            }
            if finished.len() >= k || next_live.is_empty() {
                break;
            }
            state = DecoderState {
                h: gather_rows(g, next.h, &rows)?,
                c: gather_rows(g, next.c, &rows)?,
                feed: gather_rows(g, next.feed, &rows)?,
            };
            live = next_live;
        }

        let best_finished = finished
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.normalized(1).total_cmp(&b.normalized(1)).then(ib.cmp(ia)));
        if let Some((_, h)) = best_finished {
            return Ok(h.tokens.clone());
        }
        let best_live = live
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.normalized(0).total_cmp(&b.normalized(0)).then(ib.cmp(ia)));
        Ok(best_live.map(|(_, h)| h.tokens.clone()).unwrap_or_default())
    }
}
