use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;

/// Surface forms of the reserved entries, in id order.
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabLevel {
    Word,
    Subword,
    Char,
}

/// Bidirectional token/id map. Ids 0..4 are always PAD, UNK, BOS, EOS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRecord", into = "VocabRecord")]
pub struct Vocabulary {
    entries: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
    level: VocabLevel,
}

#[derive(Serialize, Deserialize)]
struct VocabRecord {
    level: VocabLevel,
    entries: Vec<String>,
    counts: Vec<u64>,
}

impl From<VocabRecord> for Vocabulary {
    fn from(r: VocabRecord) -> Self {
        let mut v = Vocabulary::empty(r.level);
        for (tok, count) in r.entries.into_iter().zip(r.counts).skip(SPECIAL_TOKENS.len()) {
            v.push(tok, count);
        }
        v
    }
}

impl From<Vocabulary> for VocabRecord {
    fn from(v: Vocabulary) -> Self {
        VocabRecord {
            level: v.level,
            entries: v.entries,
            counts: v.counts,
        }
    }
}

impl Vocabulary {
    /// A vocabulary holding only the four special entries.
    pub fn empty(level: VocabLevel) -> Self {
        let mut v = Vocabulary {
            entries: Vec::new(),
            counts: Vec::new(),
            index: HashMap::new(),
            level,
        };
        for tok in SPECIAL_TOKENS {
            v.index.insert(tok.to_owned(), v.entries.len() as u32);
            v.entries.push(tok.to_owned());
            v.counts.push(0);
        }
        v
    }

    /// Appends `token` unless already present; returns its id either way.
    pub fn push(&mut self, token: impl Into<String>, count: u64) -> u32 {
        let token = token.into();
        if let Some(&id) = self.index.get(&token) {
            return id;
        }
        let id = self.entries.len() as u32;
        self.index.insert(token.clone(), id);
        self.entries.push(token);
        self.counts.push(count);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn level(&self) -> VocabLevel {
        self.level
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Id of `token`, or UNK when absent.
    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.entries.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Maps ids back to tokens; out-of-range ids render as the UNK token.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(SPECIAL_TOKENS[UNK as usize]).to_owned())
            .collect()
    }

    /// Writes `token<TAB>count` lines for the non-special entries.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (tok, count) in self.entries.iter().zip(&self.counts).skip(SPECIAL_TOKENS.len()) {
            out.push_str(tok);
            out.push('\t');
            out.push_str(&count.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_file_string(text: &str, level: VocabLevel, path: &Path) -> Result<Self> {
        let mut v = Vocabulary::empty(level);
        for (i, line) in text.lines().enumerate() {
            let (tok, count) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::format(path, format!("line {}: missing tab", i + 1)))?;
            let count = count
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: bad count {count:?}", i + 1)))?;
            if v.contains(tok) {
                return Err(Error::format(path, format!("line {}: duplicate token {tok:?}", i + 1)));
            }
            v.push(tok, count);
        }
        Ok(v)
    }

    pub fn load(path: impl AsRef<Path>, level: VocabLevel) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_string(&text, level, path)
    }
}

/// Builds a vocabulary of every observed token (or character, for
/// [`VocabLevel::Char`]) ordered by descending frequency, ties broken by
/// first occurrence. A `cap` keeps only that many non-special entries.
pub fn build_vocab<S: AsRef<str>>(
    corpus: &[Vec<S>],
    level: VocabLevel,
    cap: Option<i64>,
) -> Result<Vocabulary> {
    let cap = match cap {
        Some(c) if c < 0 => return Err(Error::Config(format!("vocabulary cap must be >= 0, got {c}"))),
        Some(c) => Some(c as usize),
        None => None,
    };

    // token -> (count, first occurrence)
    let mut seen: HashMap<String, (u64, usize)> = HashMap::new();
    let mut order = 0usize;
    let mut bump = |key: String| {
        let e = seen.entry(key).or_insert((0, order));
        e.0 += 1;
        order += 1;
    };
    for line in corpus {
        for tok in line {
            match level {
                VocabLevel::Char => tok.as_ref().chars().for_each(|c| bump(c.to_string())),
                VocabLevel::Word | VocabLevel::Subword => bump(tok.as_ref().to_owned()),
            }
        }
    }

    let mut ranked: Vec<(String, u64, usize)> = seen
        .into_iter()
        .filter(|(tok, _)| !SPECIAL_TOKENS.contains(&tok.as_str()))
        .map(|(tok, (count, first))| (tok, count, first))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    if let Some(cap) = cap {
        ranked.truncate(cap);
    }

    let mut vocab = Vocabulary::empty(level);
    for (tok, count, _) in ranked {
        vocab.push(tok, count);
    }
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(lines: &[&[&str]]) -> Vec<Vec<String>> {
        lines.iter().map(|l| l.iter().map(|s| s.to_string()).collect()).collect()
    }

    #[test]
    fn word_level_frequency_order() {
        let v = build_vocab(&corpus(&[&["a", "b"], &["a"]]), VocabLevel::Word, None).unwrap();
        assert_eq!(&v.entries()[4..], ["a", "b"]);
        assert_eq!(v.count(4), 2);
    }

    #[test]
    fn char_level_split() {
        let v = build_vocab(&corpus(&[&["ab"]]), VocabLevel::Char, None).unwrap();
        assert_eq!(&v.entries()[4..], ["a", "b"]);
    }

    #[test]
    fn cap_keeps_most_frequent() {
        let v = build_vocab(&corpus(&[&["a", "b", "c"]]), VocabLevel::Word, Some(1)).unwrap();
        assert_eq!(&v.entries()[4..], ["a"]);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.id("c"), UNK);
    }

    #[test]
    fn negative_cap_is_config_error() {
        let err = build_vocab(&corpus(&[&["a"]]), VocabLevel::Word, Some(-1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn specials_fixed() {
        let v = Vocabulary::empty(VocabLevel::Word);
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            assert_eq!(v.get(s), Some(i as u32));
        }
        assert_eq!((PAD, UNK, BOS, EOS), (0, 1, 2, 3));
    }

    #[test]
    fn special_strings_in_corpus_not_duplicated() {
        let v = build_vocab(&corpus(&[&["<unk>", "x", "<s>"]]), VocabLevel::Word, None).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("<unk>"), UNK);
    }

    #[test]
    fn file_round_trip() {
        let v = build_vocab(&corpus(&[&["b", "a", "a", "c"]]), VocabLevel::Word, None).unwrap();
        let text = v.to_file_string();
        assert_eq!(text, "a\t2\nb\t1\nc\t1\n");
        let back = Vocabulary::from_file_string(&text, VocabLevel::Word, Path::new("x")).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn serde_round_trip() {
        let v = build_vocab(&corpus(&[&["x", "y", "x"]]), VocabLevel::Subword, None).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }

    proptest! {
        #[test]
        fn bijection(lines in prop::collection::vec(prop::collection::vec("[a-e]{1,3}", 0..6), 0..8),
                     cap in prop::option::of(0i64..6),
                     char_level in any::<bool>()) {
            let level = if char_level { VocabLevel::Char } else { VocabLevel::Word };
            let v = build_vocab(&lines, level, cap).unwrap();
            for (id, tok) in v.entries().iter().enumerate() {
                prop_assert_eq!(v.get(tok), Some(id as u32));
            }
            prop_assert_eq!(v.index.len(), v.len());
        }
    }
}
