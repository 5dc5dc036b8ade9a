use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Token, type and sentence counts of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub token_count: usize,
    pub type_count: usize,
    pub sentence_count: usize,
}

pub fn corpus_stats<S: AsRef<str>>(corpus: &[Vec<S>]) -> CorpusStats {
    let mut types = HashSet::new();
    let mut tokens = 0;
    for line in corpus {
        for tok in line {
            types.insert(tok.as_ref());
            tokens += 1;
        }
    }
    CorpusStats {
        token_count: tokens,
        type_count: types.len(),
        sentence_count: corpus.len(),
    }
}

impl CorpusStats {
    /// Header row matching [`CorpusStats::table_row`].
    pub fn table_header() -> &'static str {
        "Corpus\tTokens\tTypes\tSentences"
    }

    pub fn table_row(&self, label: &str) -> String {
        format!(
            "{label}\t{}\t{}\t{}",
            self.token_count, self.type_count, self.sentence_count
        )
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tokens={} types={} sentences={}",
            self.token_count, self.type_count, self.sentence_count
        )
    }
}
