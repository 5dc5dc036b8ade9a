//! Corpus ingestion, vocabularies, byte-pair encoding and corpus statistics.

mod bpe;
mod corpus;
mod stats;
mod vocab;

pub use bpe::{
    apply_bpe_corpus, apply_bpe_word, debpe, learn_bpe, token_frequencies, Debpe, MergeTable,
    CONTINUATION_MARKER, END_OF_WORD,
};
pub use corpus::{read_corpus, whitespace_tokenize, write_corpus, Corpus};
pub use stats::{corpus_stats, CorpusStats};
pub use vocab::{build_vocab, VocabLevel, Vocabulary, BOS, EOS, PAD, SPECIAL_TOKENS, UNK};
