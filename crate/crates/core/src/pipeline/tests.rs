use std::path::{Path, PathBuf};

use super::*;
use crate::nn::{ModelMode, Strategy};
use crate::training::Checkpoint;

const STEMS: [(&str, &str); 6] = [("kitap", "book"), ("ev", "house"), ("kalem", "pen"), ("masa", "table"), ("okul", "school"), ("yol", "road")];
const SUFFIXES: [(&str, &str, &str); 4] = [("", "", ""), ("ler", "", "s"), ("im", "my", ""), ("lerim", "my", "s")];

fn toy(n: usize) -> (String, String) {
    let (mut src, mut tgt) = (String::new(), String::new());
    let mut x = 7u64;
    let mut next = |m: usize| {
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((x >> 33) % m as u64) as usize
    };
    for _ in 0..n {
        let words = 1 + next(3);
        let (mut s, mut t) = (Vec::new(), Vec::new());
        for _ in 0..words {
            let (stem, eng) = STEMS[next(STEMS.len())];
            let (suf, pre, post) = SUFFIXES[next(SUFFIXES.len())];
            s.push(format!("{stem}{suf}"));
            if !pre.is_empty() {
                t.push(pre.to_string());
            }
            t.push(format!("{eng}{post}"));
        }
        src.push_str(&(s.join(" ") + "\n"));
        tgt.push_str(&(t.join(" ") + "\n"));
    }
    (src, tgt)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn fixture_config(dir: &Path, processing: &str, model: &str, extra: &str) -> PipelineConfig {
    let (src, tgt) = toy(30);
    write(dir, "train.src", &src);
    write(dir, "train.tgt", &tgt);
    write(dir, "dev.src", &src.lines().take(8).map(|l| format!("{l}\n")).collect::<String>());
    write(dir, "dev.tgt", &tgt.lines().take(8).map(|l| format!("{l}\n")).collect::<String>());
    let text = format!(
        r#"
[pipeline]
processing = "{processing}"
model = "{model}"
work_dir = "run-{processing}-{model}"
bpe_merges = 50

[data]
train_src = "train.src"
train_tgt = "train.tgt"
dev_src = "dev.src"
dev_tgt = "dev.tgt"

[model]
hidden_size = 16
word_emb_size = 8
char_emb_size = 6
kernel_width = 3
num_kernels = 10
dropout = 0.0

[train]
epochs = 2
batch_size = 8
seed = 3
{extra}
"#
    );
    write(dir, "exp.toml", &text);
    PipelineConfig::load(&dir.join("exp.toml"), &[]).unwrap()
}

#[test]
fn defaults_match_reference_settings() {
    let c = PipelineConfig::parse("", &[], Path::new(".")).unwrap();
    assert_eq!(c.model.hidden_size, 1024);
    assert_eq!((c.model.kernel_width, c.model.num_kernels, c.model.highway_layers), (6, 1000, 2));
    assert_eq!(c.model.max_word_len, 35);
    assert_eq!(c.model.dropout, 0.2);
    assert_eq!((c.train.batch_size, c.train.epochs, c.train.lr), (80, 20, 1.0));
    assert_eq!(c.pipeline.bpe_merges, 30_000);
    assert!(c.pipeline.joint_bpe);
    assert_eq!(c.pipeline.src_vocab_cap, None);
}

#[test]
fn overrides_and_paths() {
    let c = PipelineConfig::parse(
        "[data]\ntrain_src = \"a/train.src\"\n",
        &["train.epochs=3".into(), "pipeline.processing=bpe".into(), "pipeline.model=char".into()],
        Path::new("/base"),
    )
    .unwrap();
    assert_eq!(c.train.epochs, 3);
    assert_eq!(c.pipeline.processing, Processing::Bpe);
    assert_eq!(c.model.mode, ModelMode::Char);
    assert_eq!(c.data.train_src, Path::new("/base/a/train.src"));
    assert_eq!(c.system_label(), "bpe+char");
    assert!(PipelineConfig::parse("", &["train.epochs".into()], Path::new(".")).is_err());
}

#[test]
fn config_errors() {
    let err = PipelineConfig::parse("version = 9\n", &[], Path::new(".")).unwrap_err();
    assert!(matches!(err, crate::Error::VersionMismatch { found: 9, expected: 1 }));
    assert!(PipelineConfig::parse("[model]\nmode = \"char\"\n", &[], Path::new(".")).is_err());
    assert!(PipelineConfig::parse("[train]\nbogus = 1\n", &[], Path::new(".")).is_err());
    let c = PipelineConfig::parse("[data]\ntrain_src = \"nope\"\n", &[], Path::new("/nonexistent")).unwrap();
    assert!(c.validate().is_err());
}

#[test]
fn frozen_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let c = fixture_config(dir.path(), "bpe", "char", "");
    let again = PipelineConfig::parse(&c.to_toml().unwrap(), &[], Path::new("/elsewhere")).unwrap();
    assert_eq!(again, c);
}

#[test]
fn word_mode_preprocess_writes_no_merges() {
    let dir = tempfile::tempdir().unwrap();
    let c = fixture_config(dir.path(), "word", "tok", "");
    let s = preprocess(&c).unwrap();
    let run = RunDir::new(&c.pipeline.work_dir);
    assert!(run.vocab("src").is_file() && run.vocab("tgt").is_file() && run.stats().is_file());
    assert!(!run.src_merges(true).exists());
    assert_eq!(s.src_merges, None);
    let stats = std::fs::read_to_string(run.stats()).unwrap();
    assert!(stats.starts_with("Corpus\tTokens\tTypes\tSentences\n"));
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.clone(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn bpe_preprocess_is_bounded_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let c = fixture_config(dir.path(), "bpe", "char", "");
    let s = preprocess(&c).unwrap();
    assert!(s.src_merges.unwrap() <= 50);
    assert!(s.char_vocab.is_some());
    let run = RunDir::new(&c.pipeline.work_dir);
    let first = snapshot(&run.root);
    preprocess(&c).unwrap();
    assert_eq!(snapshot(&run.root), first);
    let text = std::fs::read_to_string(run.data("train", "src")).unwrap();
    assert!(text.contains("@@"));
}

#[test]
fn misaligned_input_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let c = fixture_config(dir.path(), "word", "tok", "");
    write(dir.path(), "train.tgt", "only one line\n");
    let err = preprocess(&c).unwrap_err();
    assert!(matches!(err, crate::Error::Ingestion { .. }), "{err}");
    assert!(!c.pipeline.work_dir.exists());
}

#[test]
fn train_without_preprocess_is_a_state_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = fixture_config(dir.path(), "word", "tok", "");
    assert!(matches!(train(&c, false), Err(crate::Error::State(_))));
}

#[test]
fn train_resume_translate_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let c = fixture_config(dir.path(), "bpe", "char", "");
    preprocess(&c).unwrap();
    let run = RunDir::new(&c.pipeline.work_dir);

    let full = train(&c, false).unwrap();
    assert_eq!(full.epochs_completed, 2);
    let last_full = std::fs::read(run.last_checkpoint()).unwrap();
    let log = std::fs::read_to_string(run.train_log()).unwrap();
    assert_eq!(log.lines().count(), 3);
    let summary = std::fs::read_to_string(run.summary()).unwrap();
    assert!(summary.contains(&format!("best_checkpoint={}", run.best_checkpoint().display())));

    // one epoch, then resume to two: identical final checkpoint
    let mut one = c.clone();
    one.train.epochs = 1;
    train(&one, false).unwrap();
    let resumed = train(&c, true).unwrap();
    assert_eq!(resumed.epochs_completed, 2);
    assert_eq!(std::fs::read(run.last_checkpoint()).unwrap(), last_full);
    assert_eq!(std::fs::read_to_string(run.train_log()).unwrap().lines().count(), 3);

    let ckpt = Checkpoint::load(&run.best_checkpoint()).unwrap();
    assert_eq!(ckpt.meta["processing"], "bpe");
    let input = load_corpus(&c.data.dev_src).unwrap();
    let greedy = translate_lines(&ckpt, &input, Strategy::Greedy, 1).unwrap();
    let beam1 = translate_lines(&ckpt, &input, Strategy::Beam(1), 1).unwrap();
    assert_eq!(greedy, beam1);
    assert_eq!(translate_lines(&ckpt, &input, Strategy::Beam(3), 3).unwrap(), translate_lines(&ckpt, &input, Strategy::Beam(3), 1).unwrap());
    assert!(greedy.iter().all(|l| !l.contains("@@")));

    let out = dir.path().join("dev.hyp");
    assert_eq!(translate_file(&run.best_checkpoint(), &c.data.dev_src, &out, Strategy::Greedy, 2).unwrap(), 8);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 8);
}

#[test]
fn score_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let r = write(dir.path(), "ref", "the cat sat on the mat\na b c d\n");
    write(dir.path(), "hyp", "the cat sat on a mat\na b c d\n");
    let same = score_files(&r, &r, Default::default()).unwrap();
    assert_eq!(same.bleu, 100.0);
    let m = "t\tref-sys\tref\tref\nt\thyp-sys\thyp\tref\n";
    let specs = parse_manifest(m, dir.path()).unwrap();
    let (reports, grid) = score_grid(&specs, Default::default()).unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(grid.best, [Some(0)]);
    let (t, k) = write_report(&dir.path().join("out"), "grid", &grid.render(), &grid.key_values()).unwrap();
    assert!(t.is_file() && k.is_file());
    assert!(parse_manifest("a\tb\n", dir.path()).is_err());
}

#[test]
fn analysis_commands() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(dir.path(), "train.src", "a b\n");
    let test = write(dir.path(), "test.src", "a almtTwEp\n");
    let hyp = write(dir.path(), "hyp", "the volunteer\n");
    let gl = write(dir.path(), "gl", "almtTwEp\tvolunteer\n");
    let rep = analyze_oov(&train, &test, &hyp, Some(&gl), Some(100)).unwrap();
    assert_eq!(rep.hits(), 1);

    let tagged = write(dir.path(), "ref.tag", "the_DT volunteer_NN\n");
    let reference = write(dir.path(), "ref", "the volunteer\n");
    let other = write(dir.path(), "hyp2", "a helper\n");
    let pos = analyze_pos(&tagged, "_", Some(&reference), ("a", &hyp), ("b", &other)).unwrap();
    assert_eq!(pos.classes[0].delta, 100.0);
}

#[test]
fn bpe_file_commands() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write(dir.path(), "c", "lower lowest newer newest\nlow new\n");
    let merges = dir.path().join("m");
    let t = learn_bpe_files(&[corpus.clone()], 10, &merges).unwrap();
    assert!(t.len() <= 10);
    let out = dir.path().join("seg");
    assert_eq!(apply_bpe_file(&merges, &corpus, &out).unwrap(), 2);
    let seg = load_corpus(&out).unwrap();
    let joined: Vec<String> = seg.iter().map(|l| crate::subword::debpe(l).words.join(" ")).collect();
    assert_eq!(joined, ["lower lowest newer newest", "low new"]);
}
