use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use morphnmt::evaluation::BleuOptions;
use morphnmt::nn::Strategy;
use morphnmt::pipeline::{self, PipelineConfig, RunDir};
use morphnmt::Result;

/// BPE and character-CNN neural machine translation.
#[derive(Parser)]
#[command(name = "morphnmt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        PipelineConfig::load(&self.config, &self.overrides)
    }
}

#[derive(Args)]
struct BleuFlags {
    /// Compare lowercased tokens.
    #[arg(long)]
    lowercase: bool,
    /// Add-one smoothing of the higher-order precisions.
    #[arg(long)]
    smooth: bool,
}

impl BleuFlags {
    fn options(&self) -> BleuOptions {
        BleuOptions {
            lowercase: self.lowercase,
            smooth: self.smooth,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Segment corpora (bpe mode), build vocabularies and corpus statistics.
    Preprocess(ConfigArgs),
    /// Learn BPE merges from one or more tokenized corpora.
    LearnBpe {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Number of merge operations (fewer are learned if pairs run out).
        #[arg(long)]
        merges: usize,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Segment a tokenized corpus with a merges file.
    ApplyBpe {
        #[arg(long)]
        merges: PathBuf,
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Train a model on preprocessed data.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from the work directory's last checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Translate a tokenized source file.
    Translate {
        /// Checkpoint to decode with.
        #[arg(long, conflicts_with = "config")]
        checkpoint: Option<PathBuf>,
        /// Use the best checkpoint of this experiment.
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE", requires = "config")]
        overrides: Vec<String>,
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        /// Beam width (defaults to the model's beam_size).
        #[arg(long, conflicts_with = "greedy")]
        beam: Option<usize>,
        #[arg(long)]
        greedy: bool,
        /// Parallel decoding threads; output order is preserved.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Corpus BLEU of one system, or a grid of systems from a manifest.
    Score {
        #[arg(long, required_unless_present = "manifest", requires = "reference")]
        hyp: Option<PathBuf>,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Lines of `row<TAB>system<TAB>hyp<TAB>ref`.
        #[arg(long, conflicts_with_all = ["hyp", "reference"])]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        bleu: BleuFlags,
        /// Write `.txt` and `.kv` reports here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// OOV and POS-recall analyses.
    #[command(subcommand)]
    Analyze(Analyze),
}

#[derive(Subcommand)]
enum Analyze {
    /// List test tokens unseen in training and check glossary translations.
    Oov {
        #[arg(long)]
        train_src: PathBuf,
        #[arg(long)]
        test_src: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        /// Lines of `source<TAB>expected translation`.
        #[arg(long)]
        glossary: Option<PathBuf>,
        /// Only the first N test sentences.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Per-tag-class recall of system A relative to system B.
    Pos {
        /// Reference tagged as `token_tag` items.
        #[arg(long)]
        tagged: PathBuf,
        #[arg(long, default_value = "_")]
        separator: String,
        /// Plain reference to check the tagged file against.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long)]
        hyp_a: PathBuf,
        #[arg(long, default_value = "A")]
        label_a: String,
        #[arg(long)]
        hyp_b: PathBuf,
        #[arg(long, default_value = "B")]
        label_b: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn emit(out_dir: Option<&Path>, stem: &str, text: &str, kv: &str) -> Result<()> {
    print!("{text}");
    if let Some(dir) = out_dir {
        let (t, k) = pipeline::write_report(dir, stem, text, kv)?;
        log::info!("wrote {} and {}", t.display(), k.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(args) => {
            let s = pipeline::preprocess(&args.load()?)?;
            if let Some(n) = s.src_merges {
                println!("merges\t{n}");
            }
            println!("src_vocab\t{}\ntgt_vocab\t{}", s.src_vocab, s.tgt_vocab);
            if let Some(n) = s.char_vocab {
                println!("char_vocab\t{n}");
            }
        }
        Command::LearnBpe { input, merges, output } => {
            let t = pipeline::learn_bpe_files(&input, merges, &output)?;
            println!("learned {} merges", t.len());
        }
        Command::ApplyBpe { merges, input, output } => {
            let n = pipeline::apply_bpe_file(&merges, &input, &output)?;
            println!("segmented {n} lines");
        }
        Command::Train { config, resume } => {
            let s = pipeline::train(&config.load()?, resume)?;
            println!("epochs_completed\t{}", s.epochs_completed);
            if let (Some(e), Some(a)) = (s.best_epoch, s.best_dev_acc) {
                println!("best_epoch\t{e}\nbest_dev_acc\t{a:.6}");
            }
            println!("best_checkpoint\t{}", s.best_checkpoint.display());
        }
        Command::Translate {
            checkpoint,
            config,
            overrides,
            input,
            output,
            beam,
            greedy,
            workers,
        } => {
            let ckpt = match (checkpoint, config) {
                (Some(c), _) => c,
                (None, Some(cfg)) => {
                    let c = PipelineConfig::load(&cfg, &overrides)?;
                    RunDir::new(&c.pipeline.work_dir).best_checkpoint()
                }
                (None, None) => {
                    return Err(morphnmt::Error::Config("translate needs --checkpoint or --config".into()));
                }
            };
            let strategy = match (greedy, beam) {
                (true, _) => Strategy::Greedy,
                (false, Some(k)) => Strategy::Beam(k),
                (false, None) => Strategy::Beam(morphnmt::training::Checkpoint::load(&ckpt)?.model_config.beam_size),
            };
            if strategy == Strategy::Beam(0) {
                return Err(morphnmt::Error::Config("beam width must be at least 1".into()));
            }
            let n = pipeline::translate_file(&ckpt, &input, &output, strategy, workers)?;
            log::info!("translated {n} lines");
        }
        Command::Score {
            hyp,
            reference,
            manifest,
            bleu,
            out_dir,
        } => {
            if let Some(m) = manifest {
                let text = std::fs::read_to_string(&m).map_err(|e| morphnmt::Error::Io { path: m.clone(), source: e })?;
                let base = m.parent().unwrap_or(Path::new("."));
                let (_, grid) = pipeline::score_grid(&pipeline::parse_manifest(&text, base)?, bleu.options())?;
                emit(out_dir.as_deref(), "grid", &grid.render(), &grid.key_values())?;
            } else {
                let (hyp, reference) = (hyp.unwrap(), reference.unwrap());
                let r = pipeline::score_files(&hyp, &reference, bleu.options())?;
                emit(out_dir.as_deref(), "bleu", &format!("{}\n", r.summary()), &r.key_values())?;
            }
        }
        Command::Analyze(Analyze::Oov {
            train_src,
            test_src,
            hyp,
            glossary,
            limit,
            out_dir,
        }) => {
            let r = pipeline::analyze_oov(&train_src, &test_src, &hyp, glossary.as_deref(), limit)?;
            emit(out_dir.as_deref(), "oov", &r.render(), &r.key_values())?;
        }
        Command::Analyze(Analyze::Pos {
            tagged,
            separator,
            reference,
            hyp_a,
            label_a,
            hyp_b,
            label_b,
            out_dir,
        }) => {
            let r = pipeline::analyze_pos(
                &tagged,
                &separator,
                reference.as_deref(),
                (&label_a, &hyp_a),
                (&label_b, &hyp_b),
            )?;
            emit(out_dir.as_deref(), "pos", &r.render(), &r.key_values())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let head: Vec<&str> = msg
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            eprintln!("error[usage]: {}", head.join(" ").trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
