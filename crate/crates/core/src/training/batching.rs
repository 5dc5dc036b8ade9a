use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Example, ParallelBatch, Vocabs};

/// Mixes a base seed with stream coordinates (epoch, step, ...).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = splitmix(z ^ splitmix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    z
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Turns line-aligned source/target corpora into examples.
pub fn pair_examples<S: AsRef<str>>(
    vocabs: &Vocabs,
    src: &[Vec<S>],
    tgt: &[Vec<S>],
    max_word_len: usize,
) -> Result<Vec<Example>> {
    if src.len() != tgt.len() {
        return Err(Error::Ingestion {
            line: src.len().min(tgt.len()) + 1,
            message: format!("corpora are misaligned: {} source lines vs {} target lines", src.len(), tgt.len()),
        });
    }
    Ok(src.iter().zip(tgt).map(|(s, t)| vocabs.example(s, t, max_word_len)).collect())
}

/// Groups example indices into batches of similar source length.
///
/// Indices are shuffled, stably sorted by length, cut into consecutive
/// chunks and the chunk order is shuffled again. The result depends only on
/// the lengths, `batch_size`, `seed` and `epoch`.
pub fn batch_plan(src_lengths: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch_size must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[epoch as u64]));
    let mut order: Vec<usize> = (0..src_lengths.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| src_lengths[i]);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    batches.shuffle(&mut rng);
    batches
}

/// Materializes one epoch of bucketed batches.
pub fn make_batches(
    examples: &[Example],
    batch_size: usize,
    seed: u64,
    epoch: usize,
    min_char_width: usize,
) -> Result<Vec<ParallelBatch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let lengths: Vec<usize> = examples.iter().map(|e| e.src.len()).collect();
    batch_plan(&lengths, batch_size, seed, epoch)
        .iter()
        .map(|idx| batch_at(examples, idx, min_char_width))
        .collect()
}

/// Batches examples in their given order, for evaluation.
pub fn sequential_batches(examples: &[Example], batch_size: usize, min_char_width: usize) -> Result<Vec<ParallelBatch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let idx: Vec<usize> = (0..examples.len()).collect();
    idx.chunks(batch_size).map(|c| batch_at(examples, c, min_char_width)).collect()
}

fn batch_at(examples: &[Example], idx: &[usize], min_char_width: usize) -> Result<ParallelBatch> {
    let refs: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
    ParallelBatch::from_examples(&refs, idx, min_char_width)
}
