use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evaluation::{
    check_tagged_alignment, compare_recall, corpus_bleu, oov_analysis, parse_glossary, parse_tagged, pos_recall,
    system_delta_report, test_set_fingerprint, BleuOptions, BleuReport, DeltaReport, GridEntry, OovReport,
    PosRecallReport,
};
use crate::fsutil::{read_to_string, write_atomic};
use crate::subword::{build_vocab, VocabLevel};

use super::run::load_corpus;

/// BLEU of one hypothesis file against one reference file.
pub fn score_files(hyp: &Path, reference: &Path, options: BleuOptions) -> Result<BleuReport> {
    corpus_bleu(&load_corpus(hyp)?, &load_corpus(reference)?, options)
}

/// One cell of a score grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    pub row: String,
    pub system: String,
    pub hyp: PathBuf,
    pub reference: PathBuf,
}

/// Parses `row<TAB>system<TAB>hyp<TAB>ref` lines; relative paths are taken
/// from `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<GridSpec>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        if f.len() != 4 {
            return Err(Error::Ingestion {
                line: i + 1,
                message: "expected row<TAB>system<TAB>hyp<TAB>ref".into(),
            });
        }
        out.push(GridSpec {
            row: f[0].to_string(),
            system: f[1].to_string(),
            hyp: base.join(f[2]),
            reference: base.join(f[3]),
        });
    }
    Ok(out)
}

/// Scores every cell and arranges the results into a grid.
pub fn score_grid(specs: &[GridSpec], options: BleuOptions) -> Result<(Vec<BleuReport>, DeltaReport)> {
    let mut reports = Vec::new();
    let mut entries = Vec::new();
    for s in specs {
        let refs = load_corpus(&s.reference)?;
        let r = corpus_bleu(&load_corpus(&s.hyp)?, &refs, options)?;
        entries.push(GridEntry {
            row: s.row.clone(),
            system: s.system.clone(),
            value: r.bleu,
            fingerprint: test_set_fingerprint(&refs),
        });
        reports.push(r);
    }
    Ok((reports, system_delta_report("bleu", &entries, None)?))
}

/// OOV analysis of a test source against a training source corpus.
pub fn analyze_oov(
    train_src: &Path,
    test_src: &Path,
    hyps: &Path,
    glossary: Option<&Path>,
    limit: Option<usize>,
) -> Result<OovReport> {
    let vocab = build_vocab(&load_corpus(train_src)?, VocabLevel::Word, None)?;
    let glossary: Option<BTreeMap<String, String>> =
        glossary.map(|p| parse_glossary(&read_to_string(p)?)).transpose()?;
    oov_analysis(&vocab, &load_corpus(test_src)?, &load_corpus(hyps)?, glossary.as_ref(), limit)
}

/// POS-class recall of system A over system B.
pub fn analyze_pos(
    tagged: &Path,
    separator: &str,
    reference: Option<&Path>,
    (label_a, hyp_a): (&str, &Path),
    (label_b, hyp_b): (&str, &Path),
) -> Result<PosRecallReport> {
    let tagged = parse_tagged(&read_to_string(tagged)?, separator)?;
    if let Some(r) = reference {
        check_tagged_alignment(&tagged, &load_corpus(r)?)?;
    }
    let a = pos_recall(&tagged, &load_corpus(hyp_a)?)?;
    let b = pos_recall(&tagged, &load_corpus(hyp_b)?)?;
    compare_recall(label_a, &a, label_b, &b)
}

/// Writes `<stem>.txt` (aligned text) and `<stem>.kv` (key=value) into `dir`.
pub fn write_report(dir: &Path, stem: &str, text: &str, key_values: &str) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (t, k) = (dir.join(format!("{stem}.txt")), dir.join(format!("{stem}.kv")));
    write_atomic(&t, text.as_bytes())?;
    write_atomic(&k, key_values.as_bytes())?;
    Ok((t, k))
}
