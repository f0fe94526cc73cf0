//! End-to-end tests of the `abugida` binary: every subcommand, the failure
//! exit codes, and agreement with the library on the same inputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use abugida::clean::{clean, CleanStage};
use abugida::corrupt::{corrupt, CorruptOutcome, CorruptionKind, SeededSource};
use abugida::script::ScriptId;
use abugida::segment::{segment, to_syllable_line};

const BIN: &str = env!("CARGO_BIN_EXE_abugida");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn run_err(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "command {args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn p(dir: &tempfile::TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

#[test]
fn clean_and_segment_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let raw = "কা1.5%খি, অ-ক্কু!\nκακό κι κα\n\u{0995}\u{09C7}\u{09AC}\u{09B2}\n";
    let input = p(&dir, "raw.txt");
    write(&input, raw);

    let cleaned = p(&dir, "cleaned.txt");
    run_ok(&[
        "clean",
        "--script",
        "bengali",
        "--input",
        input.to_str().unwrap(),
        "--output",
        cleaned.to_str().unwrap(),
    ]);
    let expect: String = raw
        .lines()
        .map(|l| clean(l, ScriptId::Bengali, CleanStage::Both) + "\n")
        .collect();
    assert_eq!(read(&cleaned), expect);

    let segmented = p(&dir, "seg.txt");
    run_ok(&[
        "segment",
        "--script",
        "bengali",
        "--input",
        cleaned.to_str().unwrap(),
        "--output",
        segmented.to_str().unwrap(),
    ]);
    let expect: String = expect
        .lines()
        .map(|l| to_syllable_line(&segment(l, ScriptId::Bengali)) + "\n")
        .collect();
    assert_eq!(read(&segmented), expect);
}

#[test]
fn corrupt_emits_sources_and_skip_indices() {
    let dir = tempfile::tempdir().unwrap();
    // syllable lines: 5, 2, and 6 syllables; mask-3 skips the middle one
    let seg = "কা কি কু কে কৈ\nকা কি\nকা কি কু কে কা কি\n";
    let input = p(&dir, "seg.txt");
    write(&input, seg);

    let output = p(&dir, "src.txt");
    let skipped = p(&dir, "skipped.txt");
    run_ok(&[
        "corrupt",
        "--script",
        "bengali",
        "--kind",
        "mask3",
        "--seed",
        "7",
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--skipped",
        skipped.to_str().unwrap(),
    ]);
    let out = read(&output);
    assert_eq!(out.lines().count(), 2);
    for line in out.lines() {
        assert_eq!(line.matches("<mask>").count(), 3);
    }
    assert_eq!(read(&skipped), "1\n");

    // agreement with the library, including the per-line substreams
    let expected: Vec<String> = seg
        .lines()
        .enumerate()
        .filter_map(|(i, l)| {
            let sent = abugida::segment::SegmentedSentence::from_syllables(
                ScriptId::Bengali,
                abugida::segment::parse_syllable_line(l),
            );
            let mut rng = SeededSource::for_line(7, i as u64);
            match corrupt(&sent, CorruptionKind::Mask(3), &mut rng) {
                CorruptOutcome::Tokens(t) => Some(t.join(" ")),
                CorruptOutcome::Skipped { .. } => None,
            }
        })
        .collect();
    assert_eq!(out, expected.join("\n") + "\n");
}

#[test]
fn split_writes_three_files_and_reports_shortage() {
    let dir = tempfile::tempdir().unwrap();
    let input = p(&dir, "ten.txt");
    write(&input, &(0..10).map(|i| format!("line {i}\n")).collect::<String>());
    let (a, b, c) = (p(&dir, "train"), p(&dir, "dev"), p(&dir, "test"));
    run_ok(&[
        "split",
        "--input",
        input.to_str().unwrap(),
        "--train-n",
        "8",
        "--dev-n",
        "1",
        "--test-n",
        "1",
        "--train-out",
        a.to_str().unwrap(),
        "--dev-out",
        b.to_str().unwrap(),
        "--test-out",
        c.to_str().unwrap(),
    ]);
    assert_eq!(read(&a).lines().count(), 8);
    assert_eq!(read(&b), "line 8\n");
    assert_eq!(read(&c), "line 9\n");

    let err = run_err(&[
        "split",
        "--input",
        input.to_str().unwrap(),
        "--train-out",
        a.to_str().unwrap(),
        "--dev-out",
        b.to_str().unwrap(),
        "--test-out",
        c.to_str().unwrap(),
    ]);
    assert!(err.contains("split"), "stderr must name the stage: {err}");
    assert!(err.contains("20104"), "default split size in message: {err}");
}

#[test]
fn stats_prints_tabbed_keys() {
    let dir = tempfile::tempdir().unwrap();
    let input = p(&dir, "seg.txt");
    // 2 sentences, 7 syllables, 7 consonants, 5 vowel signs; mask-3 masks the
    // first line (5 syllables) and skips the second (2 < 2k-1)
    write(&input, "কা কি কু কে কৈ\nক ক\n");
    let out = run_ok(&[
        "stats",
        "--script",
        "bengali",
        "--input",
        input.to_str().unwrap(),
        "--mask",
        "3",
        "--seed",
        "1",
    ]);
    let expect_prefix = "sentences\t2\nsyllables\t7\nconsonants\t7\nvowels\t5\n\
                         avg_syllables_per_sentence\t7/2\n";
    assert!(out.starts_with(expect_prefix), "got:\n{out}");
    assert!(out.contains("mask_value\t3\n"));
    assert!(out.contains("masked_sentences\t1\n"));
    assert!(out.contains("skipped_sentences\t1\n"));
    assert!(out.contains("skipped_pct\t50.00\n"));
    assert!(out.contains("total_syllables_masked\t3\n"));
}

#[test]
fn vocab_file_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let input = p(&dir, "lines.txt");
    write(&input, "কা কি কা\nকা কু\n");
    let output = p(&dir, "vocab.tsv");
    run_ok(&[
        "vocab",
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ]);
    let built = abugida::vocab::Vocab::build(["কা কি কা", "কা কু"], 1);
    assert_eq!(read(&output), built.to_tsv());
}

#[test]
fn score_prints_the_report_line() {
    let dir = tempfile::tempdir().unwrap();
    let hyp = p(&dir, "hyp.txt");
    let reference = p(&dir, "ref.txt");
    write(&hyp, "a b c d\n");
    write(&reference, "a b c d e\n");
    let out = run_ok(&[
        "score",
        "--hyp",
        hyp.to_str().unwrap(),
        "--ref",
        reference.to_str().unwrap(),
    ]);
    let report = abugida::bleu::corpus_bleu(
        &abugida::bleu::tokenize_lines(&["a b c d"]),
        &abugida::bleu::tokenize_lines(&["a b c d e"]),
    )
    .unwrap();
    assert_eq!(out, format!("{report}\n"));
    assert!(out.starts_with("BLEU = 77.88, "), "got: {out}");
}

#[test]
fn train_then_decode_produces_aligned_hypotheses() {
    let dir = tempfile::tempdir().unwrap();
    // near-identity task; the extra target token keeps the vocabularies
    // different sizes so the swapped-vocab check below can fire
    let mut src_text = String::new();
    let mut tgt_text = String::new();
    for i in 0..12 {
        let line: Vec<String> =
            (0..4).map(|j| ["ক", "খ", "গ"][(i + j) % 3].to_string()).collect();
        src_text.push_str(&line.join(" "));
        src_text.push('\n');
        tgt_text.push_str(&line.join(" "));
        tgt_text.push_str(" ঘ\n");
    }
    let (src, tgt) = (p(&dir, "c.src"), p(&dir, "c.tgt"));
    write(&src, &src_text);
    write(&tgt, &tgt_text);

    let config = p(&dir, "model.conf");
    write(
        &config,
        "model_dim = 8\nheads = 2\nff_dim = 16\ndropout = 0.0\nmax_epochs = 2\n\
         valid_every = 5\nbatch_tokens = 64\nbeam_size = 2\nmax_length = 16\n",
    );
    let out_dir = p(&dir, "run");
    let stdout = run_ok(&[
        "train",
        "--train-src",
        src.to_str().unwrap(),
        "--train-tgt",
        tgt.to_str().unwrap(),
        "--dev-src",
        src.to_str().unwrap(),
        "--dev-tgt",
        tgt.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "3",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(stdout.contains("best_step\t"), "got: {stdout}");
    for file in ["model.bin", "vocab.src.tsv", "vocab.tgt.tsv", "train_log.json"] {
        assert!(out_dir.join(file).exists(), "{file} missing");
    }

    let hyp = p(&dir, "hyp.txt");
    run_ok(&[
        "decode",
        "--model",
        out_dir.join("model.bin").to_str().unwrap(),
        "--src-vocab",
        out_dir.join("vocab.src.tsv").to_str().unwrap(),
        "--tgt-vocab",
        out_dir.join("vocab.tgt.tsv").to_str().unwrap(),
        "--input",
        src.to_str().unwrap(),
        "--output",
        hyp.to_str().unwrap(),
        "--beam",
        "2",
    ]);
    assert_eq!(read(&hyp).lines().count(), 12);

    // wrong vocabulary is rejected with the stage named
    let err = run_err(&[
        "decode",
        "--model",
        out_dir.join("model.bin").to_str().unwrap(),
        "--src-vocab",
        out_dir.join("vocab.tgt.tsv").to_str().unwrap(),
        "--tgt-vocab",
        out_dir.join("vocab.src.tsv").to_str().unwrap(),
        "--input",
        src.to_str().unwrap(),
        "--output",
        hyp.to_str().unwrap(),
    ]);
    assert!(err.contains("decode"), "got: {err}");
}

#[test]
fn pipeline_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = p(&dir, "corpus.txt");
    let mut text = String::new();
    let cons = ['\u{0995}', '\u{0996}', '\u{0997}'];
    let vows = ['\u{09BE}', '\u{09BF}'];
    for i in 0..60 {
        let n = 5 + i % 4;
        for j in 0..n {
            text.push(cons[(i + j) % 3]);
            text.push(vows[(i * 2 + j) % 2]);
        }
        text.push('\n');
    }
    write(&corpus, &text);

    let mk_config = |out: &str| {
        let cfg = p(&dir, &format!("{out}.conf"));
        write(
            &cfg,
            &format!(
                "script = bengali\ncorruption = mask3\nseed = 11\ninput = {}\n\
                 out_dir = {}\ntrain_n = 40\ndev_n = 10\ntest_n = 10\n",
                corpus.display(),
                dir.path().join(out).display()
            ),
        );
        cfg
    };
    let c1 = mk_config("run1");
    let out1 = run_ok(&["pipeline", "--config", c1.to_str().unwrap()]);
    assert!(out1.contains("emitted_pairs\t60"), "got: {out1}");
    let c2 = mk_config("run2");
    run_ok(&["pipeline", "--config", c2.to_str().unwrap()]);

    for file in ["source.txt", "target.txt", "vocab.src.tsv", "vocab.tgt.tsv", "manifest.json"] {
        let a = std::fs::read(dir.path().join("run1").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("run2").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn bad_arguments_fail_fast() {
    let err = run_err(&["clean", "--script", "klingon", "--input", "x", "--output", "y"]);
    assert!(err.contains("klingon"), "got: {err}");
    let err = run_err(&["corrupt", "--script", "thai", "--kind", "mask4", "--input", "x", "--output", "y"]);
    assert!(err.contains("mask4"), "got: {err}");
}
