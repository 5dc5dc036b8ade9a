//! Experiment configuration and the commands behind the `morphnmt` binary:
//! preprocessing, BPE, training, translation, scoring and analysis.

mod config;
mod reports;
mod run;

pub use config::{apply_override, DataSection, PipelineConfig, PipelineSection, Processing, CONFIG_VERSION};
pub use reports::{analyze_oov, analyze_pos, parse_manifest, score_files, score_grid, write_report, GridSpec};
pub use run::{
    apply_bpe_file, learn_bpe_files, load_corpus, preprocess, train, translate_file, translate_lines, PreprocessSummary,
    RunDir, TrainSummary,
};

#[cfg(test)]
mod tests;
