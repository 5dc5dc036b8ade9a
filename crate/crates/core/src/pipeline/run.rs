use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};
use crate::nn::{build_char_vocab, ModelMode, Seq2Seq, Strategy, VocabSizes, Vocabs};
use crate::subword::{
    apply_bpe_corpus, apply_bpe_word, build_vocab, corpus_stats, debpe, learn_bpe, read_corpus, token_frequencies,
    write_corpus, Corpus, CorpusStats, MergeTable, VocabLevel, Vocabulary,
};
use crate::training::{pair_examples, run_summary, Checkpoint, EpochRecord, Trainer};

use super::config::{PipelineConfig, Processing};

/// File layout of an experiment's work directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    /// Joint merges, or the source-side table when learned per side.
    pub fn src_merges(&self, joint: bool) -> PathBuf {
        self.root.join(if joint { "bpe.merges" } else { "bpe.src.merges" })
    }

    pub fn tgt_merges(&self, joint: bool) -> PathBuf {
        self.root.join(if joint { "bpe.merges" } else { "bpe.tgt.merges" })
    }

    /// Processed corpus, e.g. `data("train", "src")`.
    pub fn data(&self, split: &str, side: &str) -> PathBuf {
        self.root.join("data").join(format!("{split}.{side}"))
    }

    pub fn vocab(&self, side: &str) -> PathBuf {
        self.root.join(format!("vocab.{side}"))
    }

    pub fn stats(&self) -> PathBuf {
        self.root.join("stats.tsv")
    }

    pub fn train_log(&self) -> PathBuf {
        self.root.join("train.log")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.txt")
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.root.join("best.ckpt")
    }

    pub fn last_checkpoint(&self) -> PathBuf {
        self.root.join("last.ckpt")
    }
}

/// Reads a corpus, naming the file in line-level errors.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    read_corpus(path).map_err(|e| match e {
        Error::Ingestion { line, message } => Error::Ingestion {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn check_aligned(a: &Corpus, b: &Corpus, pa: &Path, pb: &Path) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Ingestion {
            line: a.len().min(b.len()) + 1,
            message: format!(
                "{} has {} lines but {} has {}",
                pa.display(),
                a.len(),
                pb.display(),
                b.len()
            ),
        });
    }
    Ok(())
}

/// What `preprocess` produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSummary {
    pub src_merges: Option<usize>,
    pub tgt_merges: Option<usize>,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub char_vocab: Option<usize>,
    pub stats: Vec<(String, CorpusStats)>,
    pub files: Vec<PathBuf>,
}

/// Segments (in bpe mode), builds vocabularies and corpus statistics, and
/// freezes the resolved config into the work directory. All inputs are read
/// and checked before anything is written.
pub fn preprocess(config: &PipelineConfig) -> Result<PreprocessSummary> {
    config.validate()?;
    let d = &config.data;
    let train_src = load_corpus(&d.train_src)?;
    let train_tgt = load_corpus(&d.train_tgt)?;
    check_aligned(&train_src, &train_tgt, &d.train_src, &d.train_tgt)?;
    let dev_src = load_corpus(&d.dev_src)?;
    let dev_tgt = load_corpus(&d.dev_tgt)?;
    check_aligned(&dev_src, &dev_tgt, &d.dev_src, &d.dev_tgt)?;
    let test_src = d.test_src.as_deref().map(load_corpus).transpose()?;
    let test_tgt = d.test_tgt.as_deref().map(load_corpus).transpose()?;
    if let (Some(s), Some(t), Some(ps), Some(pt)) = (&test_src, &test_tgt, &d.test_src, &d.test_tgt) {
        check_aligned(s, t, ps, pt)?;
    }

    let p = &config.pipeline;
    let (src_table, tgt_table) = match p.processing {
        Processing::Word => (None, None),
        Processing::Bpe if p.joint_bpe => {
            let freqs = token_frequencies([train_src.as_slice(), train_tgt.as_slice()]);
            let t = learn_bpe(&freqs, p.bpe_merges)?;
            (Some(t.clone()), Some(t))
        }
        Processing::Bpe => {
            let s = learn_bpe(&token_frequencies([train_src.as_slice()]), p.bpe_merges)?;
            let t = learn_bpe(&token_frequencies([train_tgt.as_slice()]), p.bpe_merges)?;
            (Some(s), Some(t))
        }
    };
    let seg = |c: &Corpus, t: &Option<MergeTable>| -> Result<Corpus> {
        match t {
            Some(t) => apply_bpe_corpus(c, t),
            None => Ok(c.clone()),
        }
    };
    let mut outputs: Vec<(PathBuf, String)> = Vec::new();
    let run = RunDir::new(&p.work_dir);
    let mut stats = vec![
        ("train.src.raw".to_string(), corpus_stats(&train_src)),
        ("train.tgt.raw".to_string(), corpus_stats(&train_tgt)),
    ];
    let p_train_src = seg(&train_src, &src_table)?;
    let p_train_tgt = seg(&train_tgt, &tgt_table)?;
    stats.push(("train.src".into(), corpus_stats(&p_train_src)));
    stats.push(("train.tgt".into(), corpus_stats(&p_train_tgt)));
    outputs.push((run.data("dev", "src"), write_corpus(&seg(&dev_src, &src_table)?)));
    outputs.push((run.data("dev", "tgt"), write_corpus(&seg(&dev_tgt, &tgt_table)?)));
    if let Some(s) = &test_src {
        outputs.push((run.data("test", "src"), write_corpus(&seg(s, &src_table)?)));
    }
    if let Some(t) = &test_tgt {
        outputs.push((run.data("test", "tgt"), write_corpus(&seg(t, &tgt_table)?)));
    }

    let level = match p.processing {
        Processing::Word => VocabLevel::Word,
        Processing::Bpe => VocabLevel::Subword,
    };
    let src_vocab = build_vocab(&p_train_src, level, p.src_vocab_cap)?;
    let tgt_vocab = build_vocab(&p_train_tgt, level, p.tgt_vocab_cap)?;
    let char_vocab = match config.model.mode {
        ModelMode::Char => Some(build_char_vocab(&p_train_src, p.processing == Processing::Bpe)?),
        ModelMode::Tok => None,
    };

    let mut table = String::from(CorpusStats::table_header());
    table.push('\n');
    for (label, s) in &stats {
        table.push_str(&s.table_row(label));
        table.push('\n');
    }
    outputs.push((run.data("train", "src"), write_corpus(&p_train_src)));
    outputs.push((run.data("train", "tgt"), write_corpus(&p_train_tgt)));
    outputs.push((run.vocab("src"), src_vocab.to_file_string()));
    outputs.push((run.vocab("tgt"), tgt_vocab.to_file_string()));
    if let Some(c) = &char_vocab {
        outputs.push((run.vocab("chars"), c.to_file_string()));
    }
    if let Some(t) = &src_table {
        outputs.push((run.src_merges(p.joint_bpe), t.to_file_string()));
    }
    if let (Some(t), false) = (&tgt_table, p.joint_bpe) {
        outputs.push((run.tgt_merges(false), t.to_file_string()));
    }
    outputs.push((run.stats(), table));
    outputs.push((run.config(), config.to_toml()?));

    std::fs::create_dir_all(run.root.join("data")).map_err(|e| Error::io(&run.root, e))?;
    for (path, text) in &outputs {
        write_atomic(path, text.as_bytes())?;
    }
    Ok(PreprocessSummary {
        src_merges: src_table.as_ref().map(MergeTable::len),
        tgt_merges: tgt_table.as_ref().map(MergeTable::len),
        src_vocab: src_vocab.len(),
        tgt_vocab: tgt_vocab.len(),
        char_vocab: char_vocab.as_ref().map(Vocabulary::len),
        stats,
        files: outputs.into_iter().map(|(p, _)| p).collect(),
    })
}

fn load_vocabs(config: &PipelineConfig, run: &RunDir) -> Result<Vocabs> {
    let level = match config.pipeline.processing {
        Processing::Word => VocabLevel::Word,
        Processing::Bpe => VocabLevel::Subword,
    };
    let need = |p: PathBuf| -> Result<PathBuf> {
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::State(format!("{} is missing; run preprocess first", p.display())))
        }
    };
    Ok(Vocabs {
        src: Vocabulary::load(need(run.vocab("src"))?, level)?,
        tgt: Vocabulary::load(need(run.vocab("tgt"))?, level)?,
        chars: match config.model.mode {
            ModelMode::Char => Some(Vocabulary::load(need(run.vocab("chars"))?, VocabLevel::Char)?),
            ModelMode::Tok => None,
        },
    })
}

/// Result of a `train` run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs_completed: usize,
    pub best_epoch: Option<usize>,
    pub best_dev_acc: Option<f64>,
    pub best_checkpoint: PathBuf,
}

/// Trains on the preprocessed corpora, writing `last.ckpt` after every
/// epoch and `best.ckpt` whenever dev accuracy improves. With `resume`,
/// continues from `last.ckpt` when it exists.
pub fn train(config: &PipelineConfig, resume: bool) -> Result<TrainSummary> {
    config.model.validate()?;
    config.train.validate()?;
    let run = RunDir::new(&config.pipeline.work_dir);
    let vocabs = load_vocabs(config, &run)?;
    let read = |split: &str, side: &str| -> Result<Corpus> {
        let p = run.data(split, side);
        if !p.is_file() {
            return Err(Error::State(format!("{} is missing; run preprocess first", p.display())));
        }
        load_corpus(&p)
    };
    let max_len = config.model.max_word_len;
    let mut train_ex = pair_examples(&vocabs, &read("train", "src")?, &read("train", "tgt")?, max_len)?;
    let mut dev_ex = pair_examples(&vocabs, &read("dev", "src")?, &read("dev", "tgt")?, max_len)?;
    for (name, ex) in [("train", &mut train_ex), ("dev", &mut dev_ex)] {
        let before = ex.len();
        ex.retain(|e| !e.src.is_empty());
        if ex.len() < before {
            log::warn!("dropped {} {name} pairs with an empty source side", before - ex.len());
        }
        if ex.is_empty() {
            return Err(Error::Input(format!("{name} corpus has no usable sentence pairs")));
        }
    }
    let merges = match config.pipeline.processing {
        Processing::Bpe => Some(MergeTable::load(run.src_merges(config.pipeline.joint_bpe))?),
        Processing::Word => None,
    };
    let mut meta = BTreeMap::new();
    meta.insert("processing".to_string(), config.pipeline.processing.to_string());
    meta.insert("model".to_string(), config.pipeline.model.to_string());
    meta.insert("system".to_string(), config.system_label());

    let last = run.last_checkpoint();
    let (mut trainer, mut log_lines) = if resume && last.is_file() {
        let ckpt = Checkpoint::load(&last)?;
        if ckpt.model_config != config.model || ckpt.vocabs != vocabs {
            return Err(Error::State(format!(
                "{} was trained with a different model config or vocabulary",
                last.display()
            )));
        }
        let t = Trainer::resume(&ckpt, config.train.clone())?;
        let kept = previous_log(&run.train_log(), t.state().epoch);
        log::info!("resuming after epoch {}", t.state().epoch);
        (t, kept)
    } else {
        write_config(&run, config)?;
        let model = Seq2Seq::new(config.model.clone(), VocabSizes::of(&vocabs), config.train.seed)?;
        (Trainer::new(model, config.train.clone())?, Vec::new())
    };

    while !trainer.is_finished() {
        let outcome = trainer.epoch(&train_ex, &dev_ex)?;
        trainer.checkpoint(&vocabs, merges.as_ref(), &meta).save(&last)?;
        if outcome.improved {
            if let Some(best) = trainer.best_checkpoint(&vocabs, merges.as_ref(), &meta) {
                best.save(&run.best_checkpoint())?;
            }
        }
        log_lines.push(outcome.record.log_line());
        let mut log = String::from(EpochRecord::HEADER);
        log.push('\n');
        for l in &log_lines {
            log.push_str(l);
            log.push('\n');
        }
        write_atomic(&run.train_log(), log.as_bytes())?;
        let summary = run_summary(
            trainer.state(),
            &run.best_checkpoint().display().to_string(),
            &last.display().to_string(),
        );
        write_atomic(&run.summary(), summary.as_bytes())?;
    }
    let state = trainer.state();
    Ok(TrainSummary {
        epochs_completed: state.epoch,
        best_epoch: state.best_epoch,
        best_dev_acc: state.best_dev_acc,
        best_checkpoint: run.best_checkpoint(),
    })
}

fn write_config(run: &RunDir, config: &PipelineConfig) -> Result<()> {
    std::fs::create_dir_all(&run.root).map_err(|e| Error::io(&run.root, e))?;
    write_atomic(&run.config(), config.to_toml()?.as_bytes())
}

/// Log lines of epochs up to `through` from an earlier run.
fn previous_log(path: &Path, through: usize) -> Vec<String> {
    let Ok(text) = read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter(|l| {
            l.split('\t')
                .next()
                .and_then(|e| e.parse::<usize>().ok())
                .is_some_and(|e| e <= through)
        })
        .map(str::to_string)
        .collect()
}

/// Translates tokenized source lines with a loaded checkpoint. Source
/// tokens are segmented with the checkpoint's merges and output is de-BPE'd
/// when the model was trained on BPE units. `workers` threads share the
/// frozen model; output order follows input order.
pub fn translate_lines(ckpt: &Checkpoint, lines: &[Vec<String>], strategy: Strategy, workers: usize) -> Result<Vec<String>> {
    let model = ckpt.model()?;
    let bpe = ckpt.meta.get("processing").map(String::as_str) == Some("bpe");
    let one = |i: usize| -> Result<String> {
        let line = &lines[i];
        if line.is_empty() {
            return Ok(String::new());
        }
        let src: Vec<String> = match (&ckpt.merges, bpe) {
            (Some(table), true) => {
                let mut pieces = Vec::new();
                for tok in line {
                    pieces.extend(apply_bpe_word(tok, table).map_err(|e| Error::Input(format!("line {}: {e}", i + 1)))?);
                }
                pieces
            }
            _ => line.clone(),
        };
        let ex = ckpt.vocabs.source_example(&src, model.config().max_word_len);
        let ids = model.translate_ids(&ex, strategy)?;
        let toks = ckpt.vocabs.tgt.decode(&ids);
        let words = if bpe { debpe(&toks).words } else { toks };
        Ok(words.join(" "))
    };
    let workers = workers.clamp(1, lines.len().max(1));
    if workers == 1 {
        return (0..lines.len()).map(one).collect();
    }
    let chunk = lines.len().div_ceil(workers);
    let parts: Vec<Result<Vec<String>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let one = &one;
                s.spawn(move || (w * chunk..((w + 1) * chunk).min(lines.len())).map(one).collect())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("translation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(lines.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// `translate` command: reads `input`, writes one hypothesis per line.
pub fn translate_file(checkpoint: &Path, input: &Path, output: &Path, strategy: Strategy, workers: usize) -> Result<usize> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let lines = load_corpus(input)?;
    let hyps = translate_lines(&ckpt, &lines, strategy, workers)?;
    let mut text = String::new();
    for h in &hyps {
        text.push_str(h);
        text.push('\n');
    }
    write_atomic(output, text.as_bytes())?;
    Ok(hyps.len())
}

/// `learn-bpe` command over one or more corpora.
pub fn learn_bpe_files(inputs: &[PathBuf], merges: usize, output: &Path) -> Result<MergeTable> {
    let corpora = inputs.iter().map(|p| load_corpus(p)).collect::<Result<Vec<_>>>()?;
    let table = learn_bpe(&token_frequencies(corpora.iter().map(Vec::as_slice)), merges)?;
    write_atomic(output, table.to_file_string().as_bytes())?;
    Ok(table)
}

/// `apply-bpe` command.
pub fn apply_bpe_file(merges: &Path, input: &Path, output: &Path) -> Result<usize> {
    let table = MergeTable::load(merges)?;
    let corpus = load_corpus(input)?;
    let seg = apply_bpe_corpus(&corpus, &table)?;
    write_atomic(output, write_corpus(&seg).as_bytes())?;
    Ok(seg.len())
}
