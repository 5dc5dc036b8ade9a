//! Python bindings for the `morphnmt` toolkit.

use std::collections::HashMap;
use std::path::PathBuf;

use morphnmt::evaluation::{corpus_bleu, BleuOptions};
use morphnmt::nn::Strategy;
use morphnmt::pipeline::{self, PipelineConfig};
use morphnmt::subword::{self, VocabLevel};
use morphnmt::training::Checkpoint;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(morphnmt_py, MorphNmtError, PyException);

fn err(e: morphnmt::Error) -> PyErr {
    MorphNmtError::new_err(format!("[{}] {}", e.category(), e))
}

fn tokenize(lines: &[String]) -> Vec<Vec<String>> {
    lines.iter().map(|l| subword::whitespace_tokenize(l)).collect()
}

/// An ordered list of BPE merge operations.
#[pyclass(name = "MergeTable", module = "morphnmt_py")]
struct PyMergeTable {
    inner: subword::MergeTable,
}

#[pymethods]
impl PyMergeTable {
    /// Learns up to `num_merges` merges from whitespace-tokenized lines.
    #[staticmethod]
    fn learn(lines: Vec<String>, num_merges: usize) -> PyResult<Self> {
        let corpus = tokenize(&lines);
        let freqs = subword::token_frequencies([corpus.as_slice()]);
        let inner = subword::learn_bpe(&freqs, num_merges).map_err(err)?;
        Ok(PyMergeTable { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyMergeTable {
            inner: subword::MergeTable::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        morphnmt::fsutil::write_atomic(&path, self.inner.to_file_string().as_bytes()).map_err(err)
    }

    fn merges(&self) -> Vec<(String, String)> {
        self.inner.merges().to_vec()
    }

    /// Segments one tokenized line, marking non-final pieces with `@@`.
    fn segment(&self, line: &str) -> PyResult<String> {
        let corpus = subword::apply_bpe_corpus(&[subword::whitespace_tokenize(line)], &self.inner).map_err(err)?;
        Ok(corpus[0].join(" "))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("MergeTable(merges={})", self.inner.len())
    }
}

/// Joins `@@`-marked pieces back into words.
#[pyfunction]
fn debpe(line: &str) -> String {
    subword::debpe(&subword::whitespace_tokenize(line)).words.join(" ")
}

/// Token-to-id mapping with the four special entries first.
#[pyclass(name = "Vocabulary", module = "morphnmt_py")]
struct PyVocabulary {
    inner: subword::Vocabulary,
}

#[pymethods]
impl PyVocabulary {
    #[staticmethod]
    #[pyo3(signature = (lines, level = "word", cap = None))]
    fn build(lines: Vec<String>, level: &str, cap: Option<i64>) -> PyResult<Self> {
        let level = match level {
            "word" => VocabLevel::Word,
            "char" => VocabLevel::Char,
            other => return Err(MorphNmtError::new_err(format!("[config] unknown level {other:?}"))),
        };
        let inner = subword::build_vocab(&tokenize(&lines), level, cap).map_err(err)?;
        Ok(PyVocabulary { inner })
    }

    fn encode(&self, tokens: Vec<String>) -> Vec<u32> {
        self.inner.encode(&tokens)
    }

    fn decode(&self, ids: Vec<u32>) -> Vec<String> {
        self.inner.decode(&ids)
    }

    fn id(&self, token: &str) -> u32 {
        self.inner.id(token)
    }

    fn token(&self, id: u32) -> Option<String> {
        self.inner.token(id).map(str::to_owned)
    }

    fn __contains__(&self, token: &str) -> bool {
        self.inner.contains(token)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Corpus BLEU of hypothesis lines against reference lines.
#[pyfunction]
#[pyo3(signature = (hyps, refs, lowercase = false, smooth = false))]
fn bleu<'py>(py: Python<'py>, hyps: Vec<String>, refs: Vec<String>, lowercase: bool, smooth: bool) -> PyResult<Bound<'py, PyDict>> {
    let r = corpus_bleu(&tokenize(&hyps), &tokenize(&refs), BleuOptions { lowercase, smooth }).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("bleu", r.bleu)?;
    d.set_item("precisions", r.ngram_precisions.to_vec())?;
    d.set_item("brevity_penalty", r.brevity_penalty)?;
    d.set_item("hyp_len", r.hyp_len)?;
    d.set_item("ref_len", r.ref_len)?;
    d.set_item("warnings", r.warnings)?;
    Ok(d)
}

/// A trained model loaded from a checkpoint.
#[pyclass(name = "Translator", module = "morphnmt_py")]
struct PyTranslator {
    ckpt: Checkpoint,
}

#[pymethods]
impl PyTranslator {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        Ok(PyTranslator {
            ckpt: Checkpoint::load(&path).map_err(err)?,
        })
    }

    /// Translates tokenized lines. `beam=None` uses the model's beam size;
    /// `beam=0` decodes greedily.
    #[pyo3(signature = (lines, beam = None, workers = 1))]
    fn translate(&self, py: Python<'_>, lines: Vec<String>, beam: Option<usize>, workers: usize) -> PyResult<Vec<String>> {
        let strategy = match beam.unwrap_or(self.ckpt.model_config.beam_size) {
            0 => Strategy::Greedy,
            k => Strategy::Beam(k),
        };
        let input = tokenize(&lines);
        py.detach(|| pipeline::translate_lines(&self.ckpt, &input, strategy, workers)).map_err(err)
    }

    #[getter]
    fn meta(&self) -> HashMap<String, String> {
        self.ckpt.meta.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.ckpt.state.epoch
    }
}

/// Runs the preprocess step of an experiment config.
#[pyfunction]
#[pyo3(signature = (config, overrides = Vec::new()))]
fn preprocess(py: Python<'_>, config: PathBuf, overrides: Vec<String>) -> PyResult<()> {
    let cfg = PipelineConfig::load(&config, &overrides).map_err(err)?;
    py.detach(|| pipeline::preprocess(&cfg)).map_err(err)?;
    Ok(())
}

/// Trains an experiment and returns the best checkpoint path.
#[pyfunction]
#[pyo3(signature = (config, overrides = Vec::new(), resume = false))]
fn train(py: Python<'_>, config: PathBuf, overrides: Vec<String>, resume: bool) -> PyResult<PathBuf> {
    let cfg = PipelineConfig::load(&config, &overrides).map_err(err)?;
    let summary = py.detach(|| pipeline::train(&cfg, resume)).map_err(err)?;
    Ok(summary.best_checkpoint)
}

#[pymodule]
fn morphnmt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MorphNmtError", m.py().get_type::<MorphNmtError>())?;
    m.add_class::<PyMergeTable>()?;
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyTranslator>()?;
    m.add_function(wrap_pyfunction!(debpe, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
