//! Byte-pair encoding: merge learning, segmentation and its inverse.
//!
//! Words are represented as character sequences whose final character carries
//! the [`END_OF_WORD`] sentinel, so merges never cross word boundaries and
//! word-final units stay distinct from word-internal ones. Segmented output is
//! rendered with a trailing [`CONTINUATION_MARKER`] on every non-final unit.

use std::cmp::Reverse;
use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const END_OF_WORD: &str = "</w>";
pub const CONTINUATION_MARKER: &str = "@@";

const HEADER_PREFIX: &str = "#morphnmt-bpe v1 merges=";

type Pair = (String, String);

/// Ordered list of learned merges; a merge's rank is its position.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeTable {
    merges: Vec<Pair>,
    rank: HashMap<Pair, usize>,
}

impl MergeTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a table from merges in rank order, validating symbols.
    pub fn from_merges<I, A, B>(merges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut table = MergeTable::new();
        for (left, right) in merges {
            table.push(left.into(), right.into())?;
        }
        Ok(table)
    }

    fn push(&mut self, left: String, right: String) -> Result<()> {
        for sym in [&left, &right] {
            if sym.is_empty() || sym.chars().any(char::is_whitespace) {
                return Err(Error::Input(format!("invalid merge symbol {sym:?}")));
            }
        }
        let sentinel_ok = |s: &str| match s.find(END_OF_WORD) {
            None => true,
            Some(pos) => pos + END_OF_WORD.len() == s.len() && pos > 0,
        };
        if left.contains(END_OF_WORD) || !sentinel_ok(&right) {
            return Err(Error::Input(format!(
                "end-of-word sentinel misplaced in merge ({left:?}, {right:?})"
            )));
        }
        let pair = (left, right);
        if self.rank.contains_key(&pair) {
            return Err(Error::Input(format!("duplicate merge {pair:?}")));
        }
        self.rank.insert(pair.clone(), self.merges.len());
        self.merges.push(pair);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn rank(&self, left: &str, right: &str) -> Option<usize> {
        // HashMap<(String, String)> cannot be queried by (&str, &str) without
        // allocating; the tables involved are small enough for this.
        self.rank.get(&(left.to_owned(), right.to_owned())).copied()
    }

    /// Table holding only the first `n` merges.
    pub fn truncated(&self, n: usize) -> MergeTable {
        let mut t = MergeTable::new();
        for (l, r) in self.merges.iter().take(n) {
            t.rank.insert((l.clone(), r.clone()), t.merges.len());
            t.merges.push((l.clone(), r.clone()));
        }
        t
    }

    /// Serialises to the merges file format: a header line carrying the merge
    /// count followed by one `left right` line per merge, in rank order.
    pub fn to_file_string(&self) -> String {
        let mut out = format!("{HEADER_PREFIX}{}\n", self.merges.len());
        for (l, r) in &self.merges {
            out.push_str(l);
            out.push(' ');
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    pub fn from_file_string(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.split_terminator('\n');
        let header = lines.next().ok_or_else(|| Error::format(path, "empty merges file"))?;
        let declared: usize = header
            .strip_prefix(HEADER_PREFIX)
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::format(path, format!("bad header {header:?}")))?;
        let mut table = MergeTable::new();
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) => table
                    .push(l.to_owned(), r.to_owned())
                    .map_err(|e| Error::format(path, format!("line {}: {e}", i + 2)))?,
                _ => return Err(Error::format(path, format!("line {}: expected two symbols", i + 2))),
            }
        }
        if table.len() != declared {
            return Err(Error::format(
                path,
                format!("header declares {declared} merges, file has {}", table.len()),
            ));
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_string(&text, path)
    }
}

fn check_word(word: &str) -> Result<()> {
    if word.is_empty() {
        return Err(Error::Input("empty word".into()));
    }
    if word.contains(END_OF_WORD) {
        return Err(Error::Input(format!("word {word:?} contains reserved {END_OF_WORD:?}")));
    }
    Ok(())
}

/// Initial symbol sequence: characters, with the sentinel on the last one.
fn initial_symbols(word: &str) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = syms.last_mut() {
        last.push_str(END_OF_WORD);
    }
    syms
}

/// Word frequencies over every token of the given corpora.
pub fn token_frequencies<'a, S, I>(corpora: I) -> HashMap<String, u64>
where
    S: AsRef<str> + 'a,
    I: IntoIterator<Item = &'a [Vec<S>]>,
{
    let mut freqs = HashMap::new();
    for corpus in corpora {
        for line in corpus {
            for tok in line {
                *freqs.entry(tok.as_ref().to_owned()).or_insert(0) += 1;
            }
        }
    }
    freqs
}

/// Pair counts with an ordered index for best-pair lookup and a reverse
/// index from pair to the words containing it.
struct PairStats {
    counts: HashMap<Pair, i64>,
    // (Reverse(count), left, right): the first element is the best pair,
    // with lexicographically smaller pairs winning ties.
    ranked: BTreeSet<(Reverse<i64>, String, String)>,
    occurs_in: HashMap<Pair, BTreeSet<usize>>,
}

impl PairStats {
    fn new() -> Self {
        PairStats {
            counts: HashMap::new(),
            ranked: BTreeSet::new(),
            occurs_in: HashMap::new(),
        }
    }

    fn adjust(&mut self, pair: &Pair, delta: i64, word: usize) {
        let count = self.counts.entry(pair.clone()).or_insert(0);
        if *count > 0 {
            self.ranked.remove(&(Reverse(*count), pair.0.clone(), pair.1.clone()));
        }
        *count += delta;
        debug_assert!(*count >= 0);
        if *count > 0 {
            self.ranked.insert((Reverse(*count), pair.0.clone(), pair.1.clone()));
        }
        if delta > 0 {
            self.occurs_in.entry(pair.clone()).or_default().insert(word);
        }
    }

    fn add_word(&mut self, symbols: &[String], freq: i64, word: usize) {
        for w in symbols.windows(2) {
            self.adjust(&(w[0].clone(), w[1].clone()), freq, word);
        }
    }

    fn remove_word(&mut self, symbols: &[String], freq: i64, word: usize) {
        for w in symbols.windows(2) {
            self.adjust(&(w[0].clone(), w[1].clone()), -freq, word);
        }
    }

    fn best(&self) -> Option<(i64, Pair)> {
        self.ranked
            .iter()
            .next()
            .map(|(Reverse(c), l, r)| (*c, (l.clone(), r.clone())))
    }
}

/// Replaces every left-to-right non-overlapping occurrence of `pair`.
fn merge_symbols(symbols: &[String], pair: &Pair) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            out.push(format!("{}{}", pair.0, pair.1));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns up to `num_merges` merges from word frequencies.
///
/// Each iteration merges the most frequent adjacent symbol pair, weighted by
/// word counts; ties go to the lexicographically smaller `(left, right)`.
/// Learning stops early once the best pair occurs at most once. Pair counts
/// are maintained incrementally by re-counting only the words that contain
/// the merged pair.
pub fn learn_bpe(token_freqs: &HashMap<String, u64>, num_merges: usize) -> Result<MergeTable> {
    // Sorted so that word ids, and with them all iteration orders, are stable.
    let mut words: Vec<(&str, i64)> = token_freqs
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(w, &c)| (w.as_str(), c as i64))
        .collect();
    words.sort();
    for (w, _) in &words {
        check_word(w)?;
    }

    let mut symbols: Vec<Vec<String>> = words.iter().map(|(w, _)| initial_symbols(w)).collect();
    let mut stats = PairStats::new();
    for (i, syms) in symbols.iter().enumerate() {
        stats.add_word(syms, words[i].1, i);
    }

    let mut table = MergeTable::new();
    while table.len() < num_merges {
        let Some((count, pair)) = stats.best() else { break };
        if count <= 1 {
            break;
        }
        let affected: Vec<usize> = stats
            .occurs_in
            .remove(&pair)
            .map(|s| s.into_iter().collect())
            .unwrap_or_default();
        for i in affected {
            let freq = words[i].1;
            let merged = merge_symbols(&symbols[i], &pair);
            if merged.len() == symbols[i].len() {
                continue; // stale index entry
            }
            stats.remove_word(&symbols[i], freq, i);
            stats.add_word(&merged, freq, i);
            symbols[i] = merged;
        }
        table.push(pair.0, pair.1)?;
    }
    Ok(table)
}

/// Segments `word` with `table` and renders the pieces with continuation
/// markers on every non-final piece.
pub fn apply_bpe_word(word: &str, table: &MergeTable) -> Result<Vec<String>> {
    if word.contains(CONTINUATION_MARKER) {
        return Err(Error::Input(format!(
            "word {word:?} contains the reserved continuation marker {CONTINUATION_MARKER:?}"
        )));
    }
    check_word(word)?;
    let mut symbols = initial_symbols(word);
    if !table.is_empty() {
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| table.rank(&w[0], &w[1]))
                .min();
            let Some(rank) = best else { break };
            symbols = merge_symbols(&symbols, &table.merges[rank]);
        }
    }
    let last = symbols.len() - 1;
    Ok(symbols
        .into_iter()
        .enumerate()
        .map(|(i, mut s)| {
            if i == last {
                s.truncate(s.len() - END_OF_WORD.len());
            } else {
                s.push_str(CONTINUATION_MARKER);
            }
            s
        })
        .collect())
}

/// Segments every token of every line, preserving line count and order.
pub fn apply_bpe_corpus<S: AsRef<str>>(corpus: &[Vec<S>], table: &MergeTable) -> Result<Vec<Vec<String>>> {
    let mut cache: HashMap<&str, Vec<String>> = HashMap::new();
    let mut out = Vec::with_capacity(corpus.len());
    for (li, line) in corpus.iter().enumerate() {
        let mut seg = Vec::with_capacity(line.len());
        for (ci, tok) in line.iter().enumerate() {
            let tok = tok.as_ref();
            if !cache.contains_key(tok) {
                let pieces = apply_bpe_word(tok, table).map_err(|e| {
                    Error::Input(format!("line {}, token {}: {e}", li + 1, ci + 1))
                })?;
                cache.insert(tok, pieces);
            }
            seg.extend(cache[tok].iter().cloned());
        }
        out.push(seg);
    }
    Ok(out)
}

/// Result of joining continuation-marked pieces back into words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Debpe {
    pub words: Vec<String>,
    /// The final piece ended in a continuation marker with nothing after it.
    pub dangling_continuation: bool,
}

pub fn debpe<S: AsRef<str>>(tokens: &[S]) -> Debpe {
    let mut words = Vec::new();
    let mut current = String::new();
    let mut open = false;
    for tok in tokens {
        let tok = tok.as_ref();
        match tok.strip_suffix(CONTINUATION_MARKER) {
            Some(stem) => {
                current.push_str(stem);
                open = true;
            }
            None => {
                current.push_str(tok);
                words.push(std::mem::take(&mut current));
                open = false;
            }
        }
    }
    if open {
        log::warn!("dangling continuation marker at end of sequence");
        words.push(current);
    }
    Debpe {
        words,
        dangling_continuation: open,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn freqs(items: &[(&str, u64)]) -> HashMap<String, u64> {
        items.iter().map(|(w, c)| (w.to_string(), *c)).collect()
    }

    fn pair(l: &str, r: &str) -> (String, String) {
        (l.to_owned(), r.to_owned())
    }

    #[test]
    fn single_pair_word() {
        let t = learn_bpe(&freqs(&[("ab", 3)]), 1).unwrap();
        assert_eq!(t.merges(), [pair("a", "b</w>")]);
    }

    #[test]
    fn weighted_counts_pick_shared_prefix() {
        // (a,b) occurs 2+1 = 3 times; (b,c</w>) 2; (b,d</w>) 1.
        let t = learn_bpe(&freqs(&[("abc", 2), ("abd", 1)]), 1).unwrap();
        assert_eq!(t.merges(), [pair("a", "b")]);
    }

    #[test]
    fn zero_merges() {
        let t = learn_bpe(&freqs(&[("hello", 10), ("help", 4)]), 0).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn single_char_words_have_no_pairs() {
        let t = learn_bpe(&freqs(&[("a", 5), ("b", 5)]), 10).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn early_stop_at_singletons() {
        let t = learn_bpe(&freqs(&[("abcd", 1)]), 10).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn ties_break_lexicographically() {
        // (x,y) and (a,b) both have count 2; "a" < "x".
        let t = learn_bpe(&freqs(&[("xy", 2), ("ab", 2)]), 1).unwrap();
        assert_eq!(t.merges(), [pair("a", "b</w>")]);
    }

    #[test]
    fn apply_without_merges_splits_chars() {
        let t = MergeTable::new();
        assert_eq!(apply_bpe_word("cat", &t).unwrap(), ["c@@", "a@@", "t"]);
    }

    #[test]
    fn apply_single_merge() {
        let t = MergeTable::from_merges([("a", "b</w>")]).unwrap();
        assert_eq!(apply_bpe_word("ab", &t).unwrap(), ["ab"]);
    }

    #[test]
    fn apply_uses_rank_order() {
        let t = MergeTable::from_merges([("b", "c</w>"), ("a", "b")]).unwrap();
        // (b,c</w>) has the lower rank, so "ab" never forms.
        assert_eq!(apply_bpe_word("abc", &t).unwrap(), ["a@@", "bc"]);
    }

    #[test]
    fn apply_rejects_marker() {
        let err = apply_bpe_word("a@@b", &MergeTable::new()).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn corpus_application() {
        let t = MergeTable::from_merges([("a", "b</w>")]).unwrap();
        assert_eq!(apply_bpe_corpus(&[vec!["ab"]], &t).unwrap(), vec![vec!["ab"]]);
        let empty = MergeTable::new();
        assert_eq!(apply_bpe_corpus(&[vec!["cat"]], &empty).unwrap(), vec![vec!["c@@", "a@@", "t"]]);
        let two = apply_bpe_corpus(&[vec!["ab", "b"], vec![]], &t).unwrap();
        assert_eq!(two, vec![vec!["ab".to_string(), "b".to_string()], vec![]]);
    }

    #[test]
    fn corpus_errors_carry_position() {
        let err = apply_bpe_corpus(&[vec!["ok"], vec!["x", "y@@"]], &MergeTable::new()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2, token 2"), "{msg}");
    }

    #[test]
    fn debpe_examples() {
        let d = debpe(&["lmi@@", "li@@", "Snivt"]);
        assert_eq!(d.words, ["lmiliSnivt"]);
        assert!(!d.dangling_continuation);
        assert_eq!(debpe(&["the", "cat"]).words, ["the", "cat"]);
        let d = debpe(&["a@@"]);
        assert_eq!(d.words, ["a"]);
        assert!(d.dangling_continuation);
    }

    #[test]
    fn merges_file_round_trip_is_bit_exact() {
        let t = learn_bpe(&freqs(&[("lower", 5), ("newest", 6), ("widest", 3), ("low", 7)]), 20).unwrap();
        let text = t.to_file_string();
        assert!(text.starts_with(&format!("#morphnmt-bpe v1 merges={}\n", t.len())));
        let back = MergeTable::from_file_string(&text, Path::new("m")).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_file_string(), text);
    }

    #[test]
    fn merges_file_rejects_bad_input() {
        let p = Path::new("m");
        assert!(MergeTable::from_file_string("", p).is_err());
        assert!(MergeTable::from_file_string("#morphnmt-bpe v1 merges=2\na b\n", p).is_err());
        assert!(MergeTable::from_file_string("#morphnmt-bpe v1 merges=1\na b c\n", p).is_err());
        assert!(MergeTable::from_file_string("#morphnmt-bpe v1 merges=1\na</w> b\n", p).is_err());
        assert!(MergeTable::from_file_string("#morphnmt-bpe v2 merges=0\n", p).is_err());
    }

    fn corpus_strategy() -> impl Strategy<Value = Vec<Vec<String>>> {
        prop::collection::vec(prop::collection::vec("[abcde@]{1,7}", 0..6), 1..12)
    }

    proptest! {
        #[test]
        fn round_trip(corpus in corpus_strategy(), merges in 0usize..30) {
            let corpus: Vec<Vec<String>> = corpus
                .into_iter()
                .map(|l| l.into_iter().filter(|w| !w.contains("@@")).collect())
                .collect();
            let table = learn_bpe(&token_frequencies([corpus.as_slice()]), merges).unwrap();
            let seg = apply_bpe_corpus(&corpus, &table).unwrap();
            prop_assert_eq!(seg.len(), corpus.len());
            for (orig, line) in corpus.iter().zip(&seg) {
                let d = debpe(line);
                prop_assert!(!d.dangling_continuation);
                prop_assert_eq!(&d.words, orig);
            }
        }

        #[test]
        fn more_merges_never_more_pieces(corpus in corpus_strategy(), merges in 0usize..30) {
            let corpus: Vec<Vec<String>> = corpus
                .into_iter()
                .map(|l| l.into_iter().filter(|w| !w.contains("@@")).collect())
                .collect();
            let full = learn_bpe(&token_frequencies([corpus.as_slice()]), merges).unwrap();
            let mut prev = usize::MAX;
            for n in 0..=full.len() {
                let pieces: usize = apply_bpe_corpus(&corpus, &full.truncated(n))
                    .unwrap()
                    .iter()
                    .map(Vec::len)
                    .sum();
                prop_assert!(pieces <= prev);
                prev = pieces;
            }
        }
    }
}
