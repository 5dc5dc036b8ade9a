use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

/// Tag classes reported first, in this order.
pub const PRIMARY_CLASSES: [&str; 7] = ["NN", "VB", "IN", "DT", "PRP", "JJ", "RB"];

/// Maps a Penn-style tag onto its coarse class (`NNS` → `NN`, `PRP$` →
/// `PRP`); unknown tags are their own class.
pub fn coarse_class(tag: &str) -> &str {
    ["PRP", "NN", "VB", "JJ", "RB", "IN", "DT"]
        .into_iter()
        .find(|c| tag.starts_with(c))
        .unwrap_or(tag)
}

pub type TaggedSentence = Vec<(String, String)>;

/// Parses one sentence per line of `token<sep>tag` items. The tag follows
/// the last separator, so tokens may contain it.
pub fn parse_tagged(text: &str, separator: &str) -> Result<Vec<TaggedSentence>> {
    if separator.is_empty() {
        return Err(Error::Config("tag separator must not be empty".into()));
    }
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.split_whitespace()
                .map(|item| match item.rsplit_once(separator) {
                    Some((tok, tag)) if !tok.is_empty() && !tag.is_empty() => Ok((tok.to_string(), tag.to_string())),
                    _ => Err(Error::Ingestion {
                        line: i + 1,
                        message: format!("item {item:?} is not token{separator}tag"),
                    }),
                })
                .collect()
        })
        .collect()
}

/// Matched and total reference tokens per tag class.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RecallCounts {
    pub classes: BTreeMap<String, (usize, usize)>,
}

impl RecallCounts {
    pub fn recall(&self, class: &str) -> Option<f64> {
        self.classes
            .get(class)
            .filter(|(_, t)| *t > 0)
            .map(|(m, t)| 100.0 * *m as f64 / *t as f64)
    }
}

/// Per-class recall of reference tokens in the aligned hypothesis, with
/// each surface form credited at most as often as the hypothesis has it.
pub fn pos_recall<S: AsRef<str>>(tagged_ref: &[TaggedSentence], hyps: &[Vec<S>]) -> Result<RecallCounts> {
    if tagged_ref.len() != hyps.len() {
        return Err(Error::Input(format!(
            "tagged reference has {} sentences but there are {} hypotheses",
            tagged_ref.len(),
            hyps.len()
        )));
    }
    let mut out = RecallCounts::default();
    for (r, h) in tagged_ref.iter().zip(hyps) {
        let mut available: HashMap<&str, usize> = HashMap::new();
        for t in h {
            *available.entry(t.as_ref()).or_insert(0) += 1;
        }
        let mut wanted: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (tok, tag) in r {
            *wanted.entry((coarse_class(tag), tok.as_str())).or_insert(0) += 1;
        }
        for ((class, tok), n) in wanted {
            let e = out.classes.entry(class.to_string()).or_insert((0, 0));
            e.0 += n.min(available.get(tok).copied().unwrap_or(0));
            e.1 += n;
        }
    }
    Ok(out)
}

/// Checks that a tagged reference carries the same tokens as the plain one.
pub fn check_tagged_alignment<S: AsRef<str>>(tagged: &[TaggedSentence], reference: &[Vec<S>]) -> Result<()> {
    if tagged.len() != reference.len() {
        return Err(Error::Input(format!(
            "tagged reference has {} sentences, reference has {}",
            tagged.len(),
            reference.len()
        )));
    }
    for (i, (t, r)) in tagged.iter().zip(reference).enumerate() {
        let same = t.len() == r.len() && t.iter().zip(r).all(|((tok, _), w)| tok == w.as_ref());
        if !same {
            return Err(Error::Input(format!("tagged reference differs from the reference at line {}", i + 1)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRecall {
    pub class: String,
    pub total: usize,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

/// Recall of system A against system B per tag class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosRecallReport {
    pub label_a: String,
    pub label_b: String,
    pub classes: Vec<ClassRecall>,
}

/// Compares two recall tables computed on the same tagged reference.
pub fn compare_recall(label_a: &str, a: &RecallCounts, label_b: &str, b: &RecallCounts) -> Result<PosRecallReport> {
    let totals = |r: &RecallCounts| r.classes.iter().map(|(c, (_, t))| (c.clone(), *t)).collect::<Vec<_>>();
    if totals(a) != totals(b) {
        return Err(Error::Input("recall tables come from different tagged references".into()));
    }
    let mut names: Vec<&String> = a.classes.keys().collect();
    let rank = |c: &str| PRIMARY_CLASSES.iter().position(|p| *p == c).unwrap_or(PRIMARY_CLASSES.len());
    names.sort_by_key(|c| (rank(c), c.as_str()));
    let classes = names
        .into_iter()
        .filter(|c| a.classes[*c].1 > 0)
        .map(|c| {
            let (ra, rb) = (a.recall(c).unwrap(), b.recall(c).unwrap());
            ClassRecall {
                class: c.clone(),
                total: a.classes[c].1,
                a: ra,
                b: rb,
                delta: ra - rb,
            }
        })
        .collect();
    Ok(PosRecallReport {
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        classes,
    })
}

impl PosRecallReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let w = self.label_a.len().max(self.label_b.len()).max(7);
        let _ = writeln!(out, "{:<6} {:>7} {:>w$} {:>w$} {:>8}", "class", "total", self.label_a, self.label_b, "delta");
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{:<6} {:>7} {:>w$.2} {:>w$.2} {:>+7.2}%",
                c.class, c.total, c.a, c.b, c.delta
            );
        }
        out
    }

    pub fn key_values(&self) -> String {
        let mut out = String::new();
        for c in &self.classes {
            let _ = writeln!(out, "recall.{}.{}={:.4}", c.class, self.label_a, c.a);
            let _ = writeln!(out, "recall.{}.{}={:.4}", c.class, self.label_b, c.b);
            let _ = writeln!(out, "delta.{}={:.4}", c.class, c.delta);
        }
        out
    }
}
