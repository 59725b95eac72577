use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mmt::data::FeatureGrid;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_mmt");

const COMMANDS: [&str; 10] = [
    "train",
    "translate",
    "caption",
    "eval",
    "lm-train",
    "lm-score",
    "select-data",
    "backtranslate",
    "rescore",
    "stats",
];

const TINY: &str = "\
[model]
embedding_dim = 8
encoder_units = 8
decoder_units = 8
attention_dim = 8
fused_dim = 16

[train]
batch_size = 4
max_steps = 40
eval_every = 20
lr = 0.01

[charlm]
hidden_units = 8
embedding_dim = 4
";

fn mmt(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mmt(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(String::from)
        .collect()
}

/// Token sequences over `w0..w5`; targets are the reversed sources.
fn toy_corpus(n: usize) -> (Vec<String>, Vec<String>) {
    let mut src = Vec::new();
    let mut tgt = Vec::new();
    for i in 0..n {
        let len = 2 + i % 3;
        let toks: Vec<String> = (0..len)
            .map(|k| format!("w{}", (i * 7 + k * 3) % 6))
            .collect();
        src.push(toks.join(" "));
        tgt.push(toks.iter().rev().cloned().collect::<Vec<_>>().join(" "));
    }
    (src, tgt)
}

fn write_lines(path: &Path, lines: &[String]) {
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

struct Trained {
    dir: TempDir,
}

impl Trained {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn trained_translator() -> Trained {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.ini"), TINY).unwrap();
    let (src, tgt) = toy_corpus(24);
    write_lines(&d.join("train.src"), &src);
    write_lines(&d.join("train.tgt"), &tgt);
    write_lines(&d.join("valid.src"), &src[..6]);
    write_lines(&d.join("valid.tgt"), &tgt[..6]);
    ok(
        d,
        &[
            "train",
            "--config",
            "tiny.ini",
            "--input",
            "train.src",
            "--target",
            "train.tgt",
            "--valid-input",
            "valid.src",
            "--valid-target",
            "valid.tgt",
            "--vocab-src",
            "vocab.src",
            "--vocab-tgt",
            "vocab.tgt",
            "--output",
            "model.nmck",
        ],
    );
    Trained { dir }
}

fn golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{name}.txt"));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("missing {}; rerun with UPDATE_GOLDEN=1", path.display()));
    assert_eq!(actual, expected, "help text for `{name}` changed");
}

#[test]
fn help_texts_match_golden_files() {
    let dir = TempDir::new().unwrap();
    let top = mmt(dir.path(), &["--help"]);
    assert_eq!(code(&top), 0);
    golden("mmt", &String::from_utf8(top.stdout).unwrap());
    for c in COMMANDS {
        let out = mmt(dir.path(), &[c, "--help"]);
        assert_eq!(code(&out), 0, "{c}");
        golden(c, &String::from_utf8(out.stdout).unwrap());
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(code(&mmt(d, &["frobnicate"])), 1);
    assert_eq!(code(&mmt(d, &[])), 1);
    assert_eq!(code(&mmt(d, &["eval", "--input", "x"])), 1);

    fs::write(d.join("bad.ini"), "[model]\nhidden = 3\n").unwrap();
    fs::write(d.join("a.txt"), "a b\n").unwrap();
    let out = mmt(
        d,
        &[
            "train",
            "--config",
            "bad.ini",
            "--input",
            "a.txt",
            "--target",
            "a.txt",
            "--valid-target",
            "a.txt",
            "--vocab-tgt",
            "v.tgt",
            "--output",
            "m.nmck",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));

    let out = mmt(d, &["lm-score", "--model", "m.nmck", "--jobs", "0"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_or_malformed_data_exits_two() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let out = mmt(
        d,
        &["eval", "--input", "nope.txt", "--reference", "nope.txt"],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    fs::write(d.join("c.txt"), "ein hund\n\nzwei hunde\n").unwrap();
    assert_eq!(code(&mmt(d, &["stats", "--corpus", "c.txt"])), 2);

    fs::write(d.join("h.txt"), "a\nb\n").unwrap();
    fs::write(d.join("r.txt"), "a\n").unwrap();
    let out = mmt(d, &["eval", "--input", "h.txt", "--reference", "r.txt"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn diverging_training_exits_three() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("huge.ini"), TINY.replace("lr = 0.01", "lr = 1e30")).unwrap();
    let (src, tgt) = toy_corpus(12);
    write_lines(&d.join("s"), &src);
    write_lines(&d.join("t"), &tgt);
    let out = mmt(
        d,
        &[
            "train",
            "--config",
            "huge.ini",
            "--input",
            "s",
            "--target",
            "t",
            "--valid-input",
            "s",
            "--valid-target",
            "t",
            "--vocab-src",
            "vs",
            "--vocab-tgt",
            "vt",
            "--output",
            "m.nmck",
        ],
    );
    assert_eq!(
        code(&out),
        3,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn eval_prints_one_formatted_line_per_input() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("ref"), "a b c d\nein hund\n").unwrap();
    fs::write(d.join("same"), "a b c d\nein hund\n").unwrap();
    fs::write(d.join("other"), "x y z\nq\n").unwrap();
    let out = ok(
        d,
        &[
            "eval",
            "--input",
            "same",
            "--input",
            "other",
            "--reference",
            "ref",
        ],
    );
    assert_eq!(
        out,
        "BLEU=1.0000 chrF3=100.00 GLEU=1.0000\nBLEU=0.0000 chrF3=0.00 GLEU=0.0000\n"
    );
}

#[test]
fn stats_reports_counts_and_oov_rate() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("train"), "ein hund läuft .\nein mann sitzt .\n").unwrap();
    fs::write(d.join("test"), "ein kind läuft .\nzwei hunde\n").unwrap();
    let out = ok(d, &["stats", "--corpus", "test", "--train", "train"]);
    // kind, zwei and hunde are unseen: 3 of 6 tokens.
    assert_eq!(
        out,
        "test\tsentences=2 tokens=6 avg=3.0 range=2-4 oov=50.00%\n"
    );
}

#[test]
fn translation_round_trip_is_deterministic_across_jobs() {
    let t = trained_translator();
    let d = t.dir.path();
    assert!(t.path("model.nmck").exists());
    assert!(t.path("vocab.src").exists() && t.path("vocab.tgt").exists());

    let args = |jobs: &'static str, out: &'static str| {
        [
            "translate",
            "--config",
            "tiny.ini",
            "--model",
            "model.nmck",
            "--vocab-src",
            "vocab.src",
            "--vocab-tgt",
            "vocab.tgt",
            "--input",
            "valid.src",
            "--output",
            out,
            "--beam",
            "10",
            "--alpha",
            "1.5",
            "--jobs",
            jobs,
        ]
    };
    ok(d, &args("1", "a.hyp"));
    ok(d, &args("2", "b.hyp"));
    ok(d, &args("1", "c.hyp"));
    let a = fs::read(t.path("a.hyp")).unwrap();
    assert_eq!(a, fs::read(t.path("b.hyp")).unwrap());
    assert_eq!(a, fs::read(t.path("c.hyp")).unwrap());
    assert_eq!(lines(&t.path("a.hyp")).len(), 6);

    let sweep = ok(
        d,
        &[
            "translate",
            "--config",
            "tiny.ini",
            "--model",
            "model.nmck",
            "--vocab-src",
            "vocab.src",
            "--vocab-tgt",
            "vocab.tgt",
            "--input",
            "valid.src",
            "--reference",
            "valid.tgt",
            "--sweep-alpha",
            "0,1",
            "--beam",
            "3",
        ],
    );
    let rows: Vec<&str> = sweep.lines().collect();
    assert_eq!(rows.len(), 2, "{sweep}");
    assert!(rows[0].starts_with("alpha=0") && rows[0].contains("BLEU="));

    let rescored = ok(
        d,
        &[
            "rescore",
            "--config",
            "tiny.ini",
            "--model",
            "model.nmck",
            "--vocab-src",
            "vocab.src",
            "--vocab-tgt",
            "vocab.tgt",
            "--input",
            "valid.src",
            "--reference",
            "valid.tgt",
            "--beam",
            "4",
        ],
    );
    assert_eq!(rescored.lines().count(), 6);

    fs::write(t.path("r.hyp"), &rescored).unwrap();
    let ev = ok(
        d,
        &[
            "eval",
            "--input",
            "a.hyp",
            "--input",
            "r.hyp",
            "--reference",
            "valid.tgt",
        ],
    );
    assert_eq!(ev.lines().count(), 2);
}

#[test]
fn backtranslation_writes_aligned_files() {
    let t = trained_translator();
    let d = t.dir.path();
    // The translator maps the source language to the target language, so it
    // back-translates text of the source side.
    let (src, _) = toy_corpus(5);
    write_lines(&t.path("mono"), &src);
    ok(
        d,
        &[
            "backtranslate",
            "--config",
            "tiny.ini",
            "--model",
            "model.nmck",
            "--vocab-src",
            "vocab.src",
            "--vocab-tgt",
            "vocab.tgt",
            "--input",
            "mono",
            "--output",
            "bt",
            "--beam",
            "2",
        ],
    );
    let s = lines(&t.path("bt.src"));
    let g = lines(&t.path("bt.tgt"));
    assert_eq!(s.len(), g.len());
    assert!(s.len() <= 5);
    assert!(g.iter().all(|l| src.contains(l)));
    assert!(t.path("bt.manifest").exists());
}

#[test]
fn language_model_scores_and_selects() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.ini"), TINY).unwrap();
    let domain = [
        "ein hund läuft über die wiese .",
        "eine frau sitzt auf der bank .",
        "zwei kinder spielen im park .",
        "ein mann fährt ein rotes fahrrad .",
    ];
    let lm_text: Vec<String> = domain.iter().map(|s| s.to_string()).collect();
    write_lines(&d.join("lm.txt"), &lm_text);
    ok(
        d,
        &[
            "lm-train", "--config", "tiny.ini", "--input", "lm.txt", "--output", "lm.nmck",
        ],
    );

    let scores = ok(d, &["lm-score", "--model", "lm.nmck", "--input", "lm.txt"]);
    let parsed: Vec<f64> = scores.lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(parsed.len(), 4);
    assert!(parsed.iter().all(|s| s.is_finite() && *s <= 0.0));
    let top = ok(
        d,
        &[
            "lm-score", "--model", "lm.nmck", "--input", "lm.txt", "--top", "2",
        ],
    );
    assert_eq!(top.lines().count(), 2);

    let mut tgt = Vec::new();
    let mut src = Vec::new();
    for i in 0..100 {
        tgt.push(format!(
            "{} {}",
            domain[i % 4].trim_end_matches(" ."),
            "gern ."
        ));
        src.push(format!("source {i}"));
    }
    write_lines(&d.join("cand.src"), &src);
    write_lines(&d.join("cand.tgt"), &tgt);
    ok(
        d,
        &[
            "select-data",
            "--lm",
            "lm.nmck",
            "--input",
            "cand.src",
            "--target",
            "cand.tgt",
            "--top",
            "10",
            "--output",
            "sel",
        ],
    );
    assert_eq!(lines(&d.join("sel.src")).len(), 10);
    assert_eq!(lines(&d.join("sel.tgt")).len(), 10);
    let report = lines(&d.join("sel.tsv"));
    let rows = report.iter().filter(|l| !l.starts_with('#')).count();
    assert!(rows == 100 || rows == 101, "{rows} report rows");
}

#[test]
fn captioner_trains_and_captions_every_image() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let cfg = format!(
        "{TINY}\n[decode]\nbeam = 3\n",
    )
    .replace(
        "[model]\n",
        "[model]\nmodalities = image\nstrategy = hierarchical\nimage_height = 2\nimage_width = 2\nimage_channels = 4\nimage_proj_dim = 8\n",
    );
    fs::write(d.join("cap.ini"), cfg).unwrap();
    let captions = ["a dog runs", "a cat sits"];
    let mut tgt = Vec::new();
    let mut manifest = String::new();
    for i in 0..8 {
        let k = i % 2;
        let v: Vec<f32> = (0..16)
            .map(|j| if j % 2 == k { 1.0 } else { 0.0 })
            .collect();
        let name = format!("img{i}.feat");
        FeatureGrid::new(2, 2, 4, v)
            .unwrap()
            .write(d.join(&name))
            .unwrap();
        manifest += &format!("{i}\t{name}\n");
        tgt.push(captions[k].to_string());
    }
    fs::write(d.join("images.manifest"), &manifest).unwrap();
    write_lines(&d.join("cap.tgt"), &tgt);
    ok(
        d,
        &[
            "train",
            "--config",
            "cap.ini",
            "--target",
            "cap.tgt",
            "--valid-target",
            "cap.tgt",
            "--features-manifest",
            "images.manifest",
            "--valid-features-manifest",
            "images.manifest",
            "--vocab-tgt",
            "vocab.tgt",
            "--output",
            "cap.nmck",
        ],
    );
    let out = ok(
        d,
        &[
            "caption",
            "--config",
            "cap.ini",
            "--model",
            "cap.nmck",
            "--vocab-tgt",
            "vocab.tgt",
            "--features-manifest",
            "images.manifest",
        ],
    );
    assert_eq!(out.lines().count(), 8);
}
