use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ModelConfig, ModelMode};
use crate::training::TrainConfig;

/// Config file format version written to and expected from `config.toml`.
pub const CONFIG_VERSION: u32 = 1;

/// External processing applied to the corpora before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Processing {
    /// Tokens used as given; also covers externally stemmed input.
    Word,
    Bpe,
}

impl fmt::Display for Processing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Processing::Word => "word",
            Processing::Bpe => "bpe",
        })
    }
}

impl FromStr for Processing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Processing::Word),
            "bpe" => Ok(Processing::Bpe),
            other => Err(Error::Config(format!("unknown processing {other:?} (expected word or bpe)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub processing: Processing,
    pub model: ModelMode,
    pub work_dir: PathBuf,
    pub bpe_merges: usize,
    /// Learn one merge table on source+target; otherwise one per side.
    pub joint_bpe: bool,
    pub src_vocab_cap: Option<i64>,
    pub tgt_vocab_cap: Option<i64>,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            processing: Processing::Word,
            model: ModelMode::Tok,
            work_dir: PathBuf::from("run"),
            bpe_merges: 30_000,
            joint_bpe: true,
            src_vocab_cap: None,
            tgt_vocab_cap: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train_src: PathBuf,
    pub train_tgt: PathBuf,
    pub dev_src: PathBuf,
    pub dev_tgt: PathBuf,
    pub test_src: Option<PathBuf>,
    pub test_tgt: Option<PathBuf>,
}

/// Everything one experiment needs: processing, paths and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "current_version")]
    pub version: u32,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn current_version() -> u32 {
    CONFIG_VERSION
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            version: CONFIG_VERSION,
            pipeline: PipelineSection::default(),
            data: DataSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML text, applies `section.key=value` overrides and resolves
    /// relative paths against `base_dir`.
    pub fn parse(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let explicit_mode = table
            .get("model")
            .and_then(|m| m.get("mode"))
            .is_some();
        let mut config: PipelineConfig = table.try_into().map_err(|e| Error::Config(format!("{e}")))?;
        if config.version != CONFIG_VERSION {
            return Err(Error::VersionMismatch {
                found: config.version,
                expected: CONFIG_VERSION,
            });
        }
        config.resolve_paths(base_dir);
        if !explicit_mode {
            config.model.mode = config.pipeline.model;
        }
        if config.model.mode != config.pipeline.model {
            return Err(Error::Config(format!(
                "model.mode = {} disagrees with pipeline.model = {}",
                config.model.mode, config.pipeline.model
            )));
        }
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = crate::fsutil::read_to_string(path)?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::parse(&text, overrides, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.pipeline.work_dir);
        let d = &mut self.data;
        for p in [&mut d.train_src, &mut d.train_tgt, &mut d.dev_src, &mut d.dev_tgt] {
            fix(p);
        }
        for p in [&mut d.test_src, &mut d.test_tgt].into_iter().flatten() {
            fix(p);
        }
    }

    /// Checks hyperparameters and that every referenced input file exists.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.model.mode != self.pipeline.model {
            return Err(Error::Config(format!(
                "model.mode = {} disagrees with pipeline.model = {}",
                self.model.mode, self.pipeline.model
            )));
        }
        if self.pipeline.processing == Processing::Bpe && self.pipeline.bpe_merges == 0 {
            return Err(Error::Config("bpe processing needs bpe_merges > 0".into()));
        }
        let d = &self.data;
        let required = [("train_src", &d.train_src), ("train_tgt", &d.train_tgt), ("dev_src", &d.dev_src), ("dev_tgt", &d.dev_tgt)];
        for (key, p) in required {
            if p.as_os_str().is_empty() {
                return Err(Error::Config(format!("data.{key} is not set")));
            }
        }
        let optional = [d.test_src.as_ref(), d.test_tgt.as_ref()];
        for p in required.iter().map(|(_, p)| *p).chain(optional.into_iter().flatten()) {
            if !p.is_file() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// System label in `processing+model` form, e.g. `bpe+char`.
    pub fn system_label(&self) -> String {
        format!("{}+{}", self.pipeline.processing, self.pipeline.model)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot render config: {e}")))
    }
}

/// Sets `section.key` (or a top-level `key`) from `key=value`. The value is
/// read as TOML, falling back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, sections) = parts.split_last().unwrap();
    let mut cur = table;
    for s in sections {
        let entry = cur.entry(s.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {s} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
