use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A tokenised corpus: one token sequence per line.
pub type Corpus = Vec<Vec<String>>;

/// Splits a line into maximal runs of non-whitespace characters.
pub fn whitespace_tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_owned).collect()
}

/// Reads a UTF-8 corpus file, one sentence per line.
///
/// Invalid UTF-8 is reported with the 1-based line number it occurs on.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&bytes)
}

pub(crate) fn parse_corpus(bytes: &[u8]) -> Result<Corpus> {
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    body.split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, raw)| {
            let line = std::str::from_utf8(raw).map_err(|e| Error::Ingestion {
                line: i + 1,
                message: format!("invalid UTF-8: {e}"),
            })?;
            Ok(whitespace_tokenize(line))
        })
        .collect()
}

/// Renders a corpus as space-joined lines, each terminated by a newline.
pub fn write_corpus(corpus: &[Vec<String>]) -> String {
    let mut out = String::new();
    for line in corpus {
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
