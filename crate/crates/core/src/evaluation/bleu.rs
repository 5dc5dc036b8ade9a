use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuOptions {
    pub lowercase: bool,
    /// Add-one smoothing of the n ≥ 2 precisions.
    pub smooth: bool,
}

/// Corpus-level BLEU-4.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuReport {
    /// Percentage in [0, 100].
    pub bleu: f64,
    /// Clipped n-gram precisions for n = 1..4 (smoothed when requested).
    pub ngram_precisions: [f64; MAX_ORDER],
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub warnings: Vec<String>,
}

impl BleuReport {
    pub fn key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "bleu={:.2}", self.bleu);
        for (n, p) in self.ngram_precisions.iter().enumerate() {
            let _ = writeln!(out, "p{}={:.6}", n + 1, p);
        }
        let _ = writeln!(out, "brevity_penalty={:.6}", self.brevity_penalty);
        let _ = writeln!(out, "hyp_len={}", self.hyp_len);
        let _ = writeln!(out, "ref_len={}", self.ref_len);
        out
    }

    pub fn summary(&self) -> String {
        let p: Vec<String> = self.ngram_precisions.iter().map(|p| format!("{:.1}", p * 100.0)).collect();
        format!(
            "BLEU = {:.2}, {} (BP={:.3}, hyp_len={}, ref_len={})",
            self.bleu,
            p.join("/"),
            self.brevity_penalty,
            self.hyp_len,
            self.ref_len
        )
    }
}

fn ngram_counts<'a>(tokens: &'a [String], n: usize) -> HashMap<&'a [String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Scores tokenized hypotheses against one reference each.
pub fn corpus_bleu<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>], options: BleuOptions) -> Result<BleuReport> {
    if hyps.len() != refs.len() {
        return Err(Error::Input(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let norm = |s: &[S]| -> Vec<String> {
        s.iter()
            .map(|t| if options.lowercase { t.as_ref().to_lowercase() } else { t.as_ref().to_string() })
            .collect()
    };
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        let (h, r) = (norm(h), norm(r));
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let rc = ngram_counts(&r, n);
            for (gram, c) in ngram_counts(&h, n) {
                matches[n - 1] += c.min(rc.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }

    let mut warnings = Vec::new();
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        let (m, t) = if options.smooth && n > 0 {
            (matches[n] + 1, totals[n] + 1)
        } else {
            (matches[n], totals[n])
        };
        precisions[n] = if t == 0 { 0.0 } else { m as f64 / t as f64 };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let bleu = if hyp_len == 0 {
        warnings.push("hypotheses contain no tokens; BLEU is 0".to_string());
        0.0
    } else if precisions.iter().any(|&p| p == 0.0) {
        warnings.push("an n-gram precision is zero; unsmoothed BLEU is 0".to_string());
        0.0
    } else {
        let mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        (brevity_penalty * mean.exp() * 100.0).min(100.0)
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(BleuReport {
        bleu,
        ngram_precisions: precisions,
        matches,
        totals,
        brevity_penalty,
        hyp_len,
        ref_len,
        warnings,
    })
}
