use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::subword::Vocabulary;

/// A test source token missing from the training vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OovToken {
    pub sentence: usize,
    pub position: usize,
    pub token: String,
}

/// Whether the expected translation of an OOV word shows up in the output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GlossaryCheck {
    pub sentence: usize,
    pub source: String,
    pub expected: String,
    pub hit: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OovReport {
    pub sentences: usize,
    pub source_tokens: usize,
    pub oov: Vec<OovToken>,
    pub checks: Vec<GlossaryCheck>,
}

impl OovReport {
    pub fn oov_rate(&self) -> f64 {
        if self.source_tokens == 0 {
            0.0
        } else {
            self.oov.len() as f64 / self.source_tokens as f64
        }
    }

    pub fn hits(&self) -> usize {
        self.checks.iter().filter(|c| c.hit).count()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "sentences {}  source tokens {}  oov {} ({:.2}%)",
            self.sentences,
            self.source_tokens,
            self.oov.len(),
            100.0 * self.oov_rate()
        );
        for o in &self.oov {
            let _ = writeln!(out, "{}\t{}\t{}", o.sentence, o.position, o.token);
        }
        if !self.checks.is_empty() {
            let _ = writeln!(out, "glossary hits {}/{}", self.hits(), self.checks.len());
            for c in &self.checks {
                let mark = if c.hit { "hit" } else { "miss" };
                let _ = writeln!(out, "{}\t{}\t{}\t{}", c.sentence, c.source, c.expected, mark);
            }
        }
        out
    }

    pub fn key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sentences={}", self.sentences);
        let _ = writeln!(out, "source_tokens={}", self.source_tokens);
        let _ = writeln!(out, "oov_tokens={}", self.oov.len());
        let _ = writeln!(out, "oov_rate={:.6}", self.oov_rate());
        let _ = writeln!(out, "glossary_checks={}", self.checks.len());
        let _ = writeln!(out, "glossary_hits={}", self.hits());
        out
    }
}

/// Lists OOV source tokens in the first `limit` sentences (all when `None`)
/// and checks glossary translations against the hypotheses.
pub fn oov_analysis<S: AsRef<str>>(
    train_vocab: &Vocabulary,
    test_src: &[Vec<S>],
    hyps: &[Vec<S>],
    glossary: Option<&BTreeMap<String, String>>,
    limit: Option<usize>,
) -> Result<OovReport> {
    let n = limit.map_or(test_src.len(), |l| l.min(test_src.len()));
    if glossary.is_some() && hyps.len() < n {
        return Err(Error::Input(format!(
            "glossary check needs {n} hypotheses, got {}",
            hyps.len()
        )));
    }
    let mut report = OovReport {
        sentences: n,
        ..OovReport::default()
    };
    for (s, sent) in test_src[..n].iter().enumerate() {
        report.source_tokens += sent.len();
        for (p, tok) in sent.iter().enumerate() {
            let tok = tok.as_ref();
            if train_vocab.contains(tok) {
                continue;
            }
            report.oov.push(OovToken {
                sentence: s,
                position: p,
                token: tok.to_string(),
            });
            if let Some(expected) = glossary.and_then(|g| g.get(tok)) {
                let hit = hyps[s].iter().any(|h| h.as_ref() == expected);
                report.checks.push(GlossaryCheck {
                    sentence: s,
                    source: tok.to_string(),
                    expected: expected.clone(),
                    hit,
                });
            }
        }
    }
    Ok(report)
}

/// Reads `source<TAB>expected` lines.
pub fn parse_glossary(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (src, tgt) = line.split_once('\t').ok_or_else(|| Error::Ingestion {
            line: i + 1,
            message: "expected `source<TAB>translation`".into(),
        })?;
        out.insert(src.trim().to_string(), tgt.trim().to_string());
    }
    Ok(out)
}
