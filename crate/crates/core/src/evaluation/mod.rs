//! Corpus BLEU, OOV analysis, POS-class recall and multi-system grids.

mod bleu;
mod oov;
mod pos;
mod report;

pub use bleu::{corpus_bleu, BleuOptions, BleuReport, MAX_ORDER};
pub use oov::{oov_analysis, parse_glossary, GlossaryCheck, OovReport, OovToken};
pub use pos::{
    check_tagged_alignment, coarse_class, compare_recall, parse_tagged, pos_recall, ClassRecall, PosRecallReport,
    RecallCounts, TaggedSentence, PRIMARY_CLASSES,
};
pub use report::{system_delta_report, test_set_fingerprint, DeltaReport, GridEntry};
