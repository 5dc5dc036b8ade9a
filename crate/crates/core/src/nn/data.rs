use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subword::{build_vocab, VocabLevel, Vocabulary, BOS, CONTINUATION_MARKER, EOS, PAD};

/// Reserved character-vocabulary entry standing for a subword unit's
/// continuation marker; it is appended to the unit's characters in place of
/// the two literal marker characters.
pub const CHAR_CONTINUATION: &str = "@@";

/// Source characters vocabulary. With `subword_units`, a trailing
/// continuation marker is stripped from each token before counting and the
/// reserved [`CHAR_CONTINUATION`] entry is added.
pub fn build_char_vocab<S: AsRef<str>>(corpus: &[Vec<S>], subword_units: bool) -> Result<Vocabulary> {
    let stripped: Vec<Vec<&str>> = corpus
        .iter()
        .map(|line| {
            line.iter()
                .map(|t| {
                    let t = t.as_ref();
                    match t.strip_suffix(CONTINUATION_MARKER) {
                        Some(body) if subword_units && !body.is_empty() => body,
                        _ => t,
                    }
                })
                .collect()
        })
        .collect();
    let mut vocab = build_vocab(&stripped, VocabLevel::Char, None)?;
    if subword_units {
        vocab.push(CHAR_CONTINUATION, 0);
    }
    Ok(vocab)
}

/// Character ids of one source token: begin-of-word, up to `max_word_len`
/// interior characters, end-of-word. When `chars` carries the reserved
/// continuation entry, a trailing marker on `token` becomes that single id
/// (kept as the last interior symbol under truncation).
pub fn word_chars(token: &str, chars: &Vocabulary, max_word_len: usize) -> Vec<u32> {
    let cont = chars.get(CHAR_CONTINUATION);
    let (body, cont) = match (cont, token.strip_suffix(CONTINUATION_MARKER)) {
        (Some(id), Some(body)) if !body.is_empty() => (body, Some(id)),
        _ => (token, None),
    };
    let mut ids = Vec::with_capacity(max_word_len.min(body.len()) + 3);
    ids.push(BOS);
    let room = if cont.is_some() { max_word_len.saturating_sub(1) } else { max_word_len };
    let mut buf = [0u8; 4];
    ids.extend(body.chars().take(room).map(|c| chars.id(c.encode_utf8(&mut buf))));
    ids.extend(cont);
    ids.push(EOS);
    ids
}

/// Source, target and (in `char` mode) source-character vocabularies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabs {
    pub src: Vocabulary,
    pub tgt: Vocabulary,
    pub chars: Option<Vocabulary>,
}

/// One sentence pair as ids; the target is not yet framed with BOS/EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub src: Vec<u32>,
    pub src_chars: Option<Vec<Vec<u32>>>,
    pub tgt: Vec<u32>,
}

impl Vocabs {
    pub fn source_example<S: AsRef<str>>(&self, src: &[S], max_word_len: usize) -> Example {
        Example {
            src: self.src.encode(src),
            src_chars: self
                .chars
                .as_ref()
                .map(|cv| src.iter().map(|t| word_chars(t.as_ref(), cv, max_word_len)).collect()),
            tgt: Vec::new(),
        }
    }

    pub fn example<S: AsRef<str>>(&self, src: &[S], tgt: &[S], max_word_len: usize) -> Example {
        let mut ex = self.source_example(src, max_word_len);
        ex.tgt = self.tgt.encode(tgt);
        ex
    }
}

/// Per-word character id rows of a batch, right-padded with PAD.
#[derive(Debug, Clone, PartialEq)]
pub struct CharMatrix {
    /// `[words × width]`, row-major, words ordered batch-major.
    pub ids: Vec<u32>,
    pub width: usize,
    /// Pooling extent per word: its symbol count, at least the pad width.
    pub lengths: Vec<usize>,
}

/// Padded id matrices for a group of sentence pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelBatch {
    pub batch: usize,
    pub src_len: usize,
    /// `[batch × src_len]`, PAD beyond `src_lengths`.
    pub src_ids: Vec<u32>,
    pub src_chars: Option<CharMatrix>,
    pub src_lengths: Vec<usize>,
    pub tgt_len: usize,
    /// `[batch × tgt_len]` framed as BOS … EOS, PAD beyond `tgt_lengths`.
    pub tgt_ids: Vec<u32>,
    /// Framed lengths (target tokens + 2).
    pub tgt_lengths: Vec<usize>,
    /// Positions of the examples in the corpus they came from.
    pub indices: Vec<usize>,
}

impl ParallelBatch {
    /// Pads `examples` into one batch. `min_char_width` is the narrowest
    /// character row (the widest kernel), so every word has a window.
    pub fn from_examples(examples: &[&Example], indices: &[usize], min_char_width: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        if let Some(pos) = examples.iter().position(|e| e.src.is_empty()) {
            return Err(Error::Input(format!("empty source sentence at batch position {pos}")));
        }
        let batch = examples.len();
        let src_len = examples.iter().map(|e| e.src.len()).max().unwrap();
        let tgt_len = examples.iter().map(|e| e.tgt.len() + 2).max().unwrap();

        let mut src_ids = vec![PAD; batch * src_len];
        let mut tgt_ids = vec![PAD; batch * tgt_len];
        for (b, e) in examples.iter().enumerate() {
            src_ids[b * src_len..b * src_len + e.src.len()].copy_from_slice(&e.src);
            let row = &mut tgt_ids[b * tgt_len..];
            row[0] = BOS;
            row[1..=e.tgt.len()].copy_from_slice(&e.tgt);
            row[e.tgt.len() + 1] = EOS;
        }

        let char_mode = examples[0].src_chars.is_some();
        if examples.iter().any(|e| e.src_chars.is_some() != char_mode) {
            return Err(Error::Input("batch mixes examples with and without characters".into()));
        }
        let src_chars = if char_mode {
            let rows: Vec<&Vec<Vec<u32>>> = examples.iter().map(|e| e.src_chars.as_ref().unwrap()).collect();
            let width = rows
                .iter()
                .flat_map(|r| r.iter().map(Vec::len))
                .max()
                .unwrap_or(0)
                .max(min_char_width);
            let mut ids = vec![PAD; batch * src_len * width];
            let mut lengths = vec![min_char_width; batch * src_len];
            for (b, words) in rows.iter().enumerate() {
                for (s, w) in words.iter().enumerate() {
                    let k = b * src_len + s;
                    ids[k * width..k * width + w.len()].copy_from_slice(w);
                    lengths[k] = w.len().max(min_char_width);
                }
            }
            Some(CharMatrix { ids, width, lengths })
        } else {
            None
        };

        Ok(ParallelBatch {
            batch,
            src_len,
            src_ids,
            src_chars,
            src_lengths: examples.iter().map(|e| e.src.len()).collect(),
            tgt_len,
            tgt_ids,
            tgt_lengths: examples.iter().map(|e| e.tgt.len() + 2).collect(),
            indices: indices.to_vec(),
        })
    }

    /// `true` at real (non-padding) source positions, `[batch × src_len]`.
    pub fn src_mask(&self) -> Vec<bool> {
        (0..self.batch)
            .flat_map(|b| (0..self.src_len).map(move |s| s < self.src_lengths[b]))
            .collect()
    }

    /// Number of predicted target positions (each framed target minus BOS).
    pub fn target_tokens(&self) -> usize {
        self.tgt_lengths.iter().map(|l| l - 1).sum()
    }

    /// Fraction of source and target cells holding PAD.
    pub fn padding_fraction(&self) -> f64 {
        let cells = self.src_ids.len() + self.tgt_ids.len();
        let pads = self.src_ids.iter().chain(&self.tgt_ids).filter(|&&i| i == PAD).count();
        pads as f64 / cells as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subword::UNK;

    fn chars(subword: bool) -> Vocabulary {
        build_char_vocab(&[vec!["ab@@", "c"]], subword).unwrap()
    }

    #[test]
    fn word_chars_wraps_with_boundaries() {
        let cv = chars(false);
        let ids = word_chars("ab", &cv, 35);
        assert_eq!(ids, vec![BOS, cv.id("a"), cv.id("b"), EOS]);
        assert_eq!(word_chars("z", &cv, 35), vec![BOS, UNK, EOS]);
    }

    #[test]
    fn word_chars_truncates_interior() {
        let cv = chars(false);
        let ids = word_chars("abcabc", &cv, 3);
        assert_eq!(ids.len(), 5);
        assert_eq!(ids[3], cv.id("c"));
    }

    #[test]
    fn continuation_marker_is_one_reserved_symbol() {
        let cv = chars(true);
        let cont = cv.id(CHAR_CONTINUATION);
        assert_ne!(cont, UNK);
        assert_eq!(cv.get("@"), None);
        assert_eq!(word_chars("ab@@", &cv, 35), vec![BOS, cv.id("a"), cv.id("b"), cont, EOS]);
        // truncation keeps the marker
        assert_eq!(word_chars("abab@@", &cv, 2), vec![BOS, cv.id("a"), cont, EOS]);
        // without the reserved entry the marker is spelled out
        let plain = chars(false);
        assert_eq!(word_chars("ab@@", &plain, 35).len(), 6);
    }

    #[test]
    fn batch_padding_and_framing() {
        let a = Example { src: vec![5, 6, 7], src_chars: None, tgt: vec![8] };
        let b = Example { src: vec![9], src_chars: None, tgt: vec![] };
        let batch = ParallelBatch::from_examples(&[&a, &b], &[0, 1], 1).unwrap();
        assert_eq!(batch.src_ids, vec![5, 6, 7, 9, PAD, PAD]);
        assert_eq!(batch.tgt_ids, vec![BOS, 8, EOS, BOS, EOS, PAD]);
        assert_eq!(batch.src_lengths, vec![3, 1]);
        assert_eq!(batch.tgt_lengths, vec![3, 2]);
        assert_eq!(batch.target_tokens(), 3);
        assert_eq!(batch.src_mask(), vec![true, true, true, true, false, false]);
    }

    #[test]
    fn batch_char_rows() {
        let a = Example { src: vec![4, 5], src_chars: Some(vec![vec![2, 4, 3], vec![2, 4, 5, 6, 3]]), tgt: vec![] };
        let b = Example { src: vec![4], src_chars: Some(vec![vec![2, 4, 3]]), tgt: vec![] };
        let batch = ParallelBatch::from_examples(&[&a, &b], &[0, 1], 4).unwrap();
        let cm = batch.src_chars.unwrap();
        assert_eq!(cm.width, 5);
        assert_eq!(cm.lengths, vec![4, 5, 4, 4]);
        assert_eq!(&cm.ids[0..5], &[2, 4, 3, PAD, PAD]);
        assert_eq!(&cm.ids[15..20], &[PAD; 5]);
    }

    #[test]
    fn empty_source_rejected() {
        let a = Example { src: vec![], src_chars: None, tgt: vec![1] };
        assert!(ParallelBatch::from_examples(&[&a], &[0], 1).is_err());
    }
}
