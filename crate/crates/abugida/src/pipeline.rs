//! End-to-end corpus pipeline: clean, segment, corrupt, split, build
//! vocabularies, and optionally train, decode, and score, with every stage
//! seeded and a manifest recording what was produced.
//!
//! The corruption runs before the split so that mask-skipped sentences are
//! absent from both sides of every emitted pair. All randomness flows from
//! the config seeds, so two runs with the same config produce byte-identical
//! non-model outputs; the manifest carries no timestamps or absolute paths.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clean::{clean, CleanStage};
use crate::corrupt::{corrupt, CorruptOutcome, CorruptionKind, CorruptionSpec, SeededSource};
use crate::model::{beam_decode, init_model, save_checkpoint, train, ModelConfig, TrainLog};
use crate::script::ScriptId;
use crate::segment::{segment, to_syllable_line, SegmentedSentence};
use crate::stats::corpus_stats;
use crate::vocab::Vocab;

/// Contiguous in-order three-way split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SplitSpec {
    pub train_n: usize,
    pub dev_n: usize,
    pub test_n: usize,
}

impl Default for SplitSpec {
    fn default() -> SplitSpec {
        SplitSpec { train_n: 18_104, dev_n: 1_000, test_n: 1_000 }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("corpus has {have} lines, split needs {need}")]
pub struct InsufficientLines {
    pub have: usize,
    pub need: usize,
}

/// First `train_n` lines, then `dev_n`, then `test_n`; order preserved.
/// Lines beyond the three partitions are ignored.
pub fn split_lines<'a, T>(
    lines: &'a [T],
    spec: &SplitSpec,
) -> Result<(&'a [T], &'a [T], &'a [T]), InsufficientLines> {
    let need = spec.train_n + spec.dev_n + spec.test_n;
    if lines.len() < need {
        return Err(InsufficientLines { have: lines.len(), need });
    }
    let (train, rest) = lines.split_at(spec.train_n);
    let (dev, rest) = rest.split_at(spec.dev_n);
    let (test, _) = rest.split_at(spec.test_n);
    Ok((train, dev, test))
}

/// Everything a run needs, parsed from a flat `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub script: ScriptId,
    pub corruption: CorruptionSpec,
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub split: SplitSpec,
    pub vocab_min_freq: u64,
    /// Run the train / decode / score stages after the data stages.
    pub run_training: bool,
    pub model: ModelConfig,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

fn at_stage<T, E>(stage: &'static str, r: Result<T, E>) -> Result<T, PipelineError>
where
    E: Into<Box<dyn std::error::Error + Send + Sync>>,
{
    r.map_err(|e| PipelineError::Stage { stage, source: e.into() })
}

impl PipelineConfig {
    /// Keys: `script`, `corruption`, `seed`, `input`, `out_dir`, `train_n`,
    /// `dev_n`, `test_n`, `vocab_min_freq`, `train`, and `model.<field>`
    /// passthroughs. Blank lines and `#` comments are skipped.
    pub fn from_flat(text: &str) -> Result<PipelineConfig, PipelineError> {
        let bad = |msg: String| PipelineError::Config(msg);
        let mut script = None;
        let mut kind = None;
        let mut seed = 1u64;
        let mut input = None;
        let mut out_dir = None;
        let mut split = SplitSpec::default();
        let mut vocab_min_freq = 1u64;
        let mut run_training = false;
        let mut model_lines = String::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| bad(format!("line {}: expected key = value", ln + 1)))?;
            let parse_usize = |v: &str, k: &str| {
                v.parse::<usize>().map_err(|_| bad(format!("{k}: bad number {v:?}")))
            };
            match key {
                "script" => {
                    script = Some(
                        value.parse::<ScriptId>().map_err(|e| bad(e.to_string()))?,
                    )
                }
                "corruption" => {
                    kind = Some(
                        value.parse::<CorruptionKind>().map_err(|e| bad(e.to_string()))?,
                    )
                }
                "seed" => {
                    seed = value.parse().map_err(|_| bad(format!("seed: bad number {value:?}")))?
                }
                "input" => input = Some(PathBuf::from(value)),
                "out_dir" => out_dir = Some(PathBuf::from(value)),
                "train_n" => split.train_n = parse_usize(value, key)?,
                "dev_n" => split.dev_n = parse_usize(value, key)?,
                "test_n" => split.test_n = parse_usize(value, key)?,
                "vocab_min_freq" => {
                    vocab_min_freq =
                        value.parse().map_err(|_| bad(format!("vocab_min_freq: {value:?}")))?
                }
                "train" => {
                    run_training = match value {
                        "true" => true,
                        "false" => false,
                        _ => return Err(bad(format!("train: expected true or false, got {value:?}"))),
                    }
                }
                k if k.starts_with("model.") => {
                    let _ = writeln!(model_lines, "{} = {}", &k["model.".len()..], value);
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        let model = ModelConfig::from_flat(&model_lines).map_err(|e| bad(e.to_string()))?;
        Ok(PipelineConfig {
            script: script.ok_or_else(|| bad("missing key: script".into()))?,
            corruption: CorruptionSpec {
                kind: kind.ok_or_else(|| bad("missing key: corruption".into()))?,
                seed,
            },
            input: input.ok_or_else(|| bad("missing key: input".into()))?,
            out_dir: out_dir.ok_or_else(|| bad("missing key: out_dir".into()))?,
            split,
            vocab_min_freq,
            run_training,
            model,
        })
    }

    pub fn load(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let text = at_stage("config", std::fs::read_to_string(path))?;
        PipelineConfig::from_flat(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsSnapshot {
    pub sentences: u64,
    pub syllables: u64,
    pub consonants: u64,
    pub vowels: u64,
    /// Exact rational, `numerator/denominator`.
    pub avg_syllables_per_sentence: String,
}

/// Record of one pipeline run; serializes with a fixed field order and no
/// timestamps so identical runs yield identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub script: String,
    pub corruption: String,
    pub seed: u64,
    pub input: String,
    pub input_sha256: String,
    pub input_lines: usize,
    pub corpus: StatsSnapshot,
    /// Sentences the corruption skipped; absent from both emitted sides.
    pub skipped_sentences: usize,
    pub emitted_pairs: usize,
    pub split: SplitSpec,
    pub vocab_min_freq: u64,
    pub source_vocab_size: usize,
    pub target_vocab_size: usize,
    pub trained: bool,
    /// Logical name -> file name inside the output directory.
    pub outputs: BTreeMap<String, String>,
    /// File name -> SHA-256 of its bytes, for every data output.
    pub digests: BTreeMap<String, String>,
    /// BLEU report line for the test split when training ran.
    pub test_score: Option<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

struct OutDir<'a> {
    dir: &'a Path,
    outputs: BTreeMap<String, String>,
    digests: BTreeMap<String, String>,
}

impl OutDir<'_> {
    fn write(
        &mut self,
        stage: &'static str,
        logical: &str,
        file: &str,
        bytes: &[u8],
    ) -> Result<(), PipelineError> {
        at_stage(stage, std::fs::write(self.dir.join(file), bytes))?;
        self.outputs.insert(logical.to_string(), file.to_string());
        self.digests.insert(file.to_string(), sha256_hex(bytes));
        Ok(())
    }
}

fn joined(lines: &[String]) -> Vec<u8> {
    let mut out = String::new();
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    out.into_bytes()
}

/// Runs every stage and writes the manifest last. Any failure aborts with
/// the failing stage named.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest, PipelineError> {
    at_stage("setup", std::fs::create_dir_all(&cfg.out_dir))?;
    let mut out =
        OutDir { dir: &cfg.out_dir, outputs: BTreeMap::new(), digests: BTreeMap::new() };

    let raw = at_stage("read", std::fs::read(&cfg.input))?;
    let input_sha256 = sha256_hex(&raw);
    let text = at_stage("read", String::from_utf8(raw))?;
    let lines: Vec<&str> = text.lines().collect();

    let cleaned: Vec<String> =
        lines.iter().map(|l| clean(l, cfg.script, CleanStage::Both)).collect();
    out.write("clean", "cleaned", "cleaned.txt", &joined(&cleaned))?;

    let segmented: Vec<SegmentedSentence> =
        cleaned.iter().map(|l| segment(l, cfg.script)).collect();
    let stats = corpus_stats(&segmented);
    let snapshot = StatsSnapshot {
        sentences: stats.sentences,
        syllables: stats.syllables,
        consonants: stats.consonants,
        vowels: stats.vowels,
        avg_syllables_per_sentence: format!(
            "{}/{}",
            stats.avg_syllables_per_sentence.numer(),
            stats.avg_syllables_per_sentence.denom()
        ),
    };

    let mut src_lines: Vec<String> = Vec::with_capacity(segmented.len());
    let mut tgt_lines: Vec<String> = Vec::with_capacity(segmented.len());
    let mut skipped = 0usize;
    for (i, s) in segmented.iter().enumerate() {
        let mut rng = SeededSource::for_line(cfg.corruption.seed, i as u64);
        match corrupt(s, cfg.corruption.kind, &mut rng) {
            CorruptOutcome::Tokens(tokens) => {
                src_lines.push(tokens.join(" "));
                tgt_lines.push(to_syllable_line(s));
            }
            CorruptOutcome::Skipped { .. } => skipped += 1,
        }
    }
    out.write("corrupt", "source", "source.txt", &joined(&src_lines))?;
    out.write("corrupt", "target", "target.txt", &joined(&tgt_lines))?;

    let (train_src, dev_src, test_src) =
        at_stage("split", split_lines(&src_lines, &cfg.split))?;
    let (train_tgt, dev_tgt, test_tgt) =
        at_stage("split", split_lines(&tgt_lines, &cfg.split))?;
    for (name, data) in [
        ("train.src", train_src),
        ("train.tgt", train_tgt),
        ("dev.src", dev_src),
        ("dev.tgt", dev_tgt),
        ("test.src", test_src),
        ("test.tgt", test_tgt),
    ] {
        out.write("split", name, name, &joined(data))?;
    }

    let src_vocab = Vocab::build(train_src.iter().map(String::as_str), cfg.vocab_min_freq);
    let tgt_vocab = Vocab::build(train_tgt.iter().map(String::as_str), cfg.vocab_min_freq);
    out.write("vocab", "source_vocab", "vocab.src.tsv", src_vocab.to_tsv().as_bytes())?;
    out.write("vocab", "target_vocab", "vocab.tgt.tsv", tgt_vocab.to_tsv().as_bytes())?;

    let mut test_score = None;
    if cfg.run_training {
        let encode = |src: &[String], tgt: &[String]| -> Vec<(Vec<usize>, Vec<usize>)> {
            src.iter()
                .zip(tgt)
                .map(|(s, t)| (src_vocab.encode(s), tgt_vocab.encode(t)))
                .collect()
        };
        let train_pairs = encode(train_src, train_tgt);
        let dev_pairs = encode(dev_src, dev_tgt);
        let mut model =
            at_stage("train", init_model(&cfg.model, src_vocab.size(), tgt_vocab.size()))?;
        let log: TrainLog = at_stage("train", train(&mut model, &train_pairs, &dev_pairs))?;
        at_stage("train", save_checkpoint(&model, &cfg.out_dir.join("model.bin")))?;
        out.outputs.insert("model".into(), "model.bin".into());
        let log_json = at_stage("train", serde_json::to_string_pretty(&log))?;
        out.write("train", "train_log", "train_log.json", log_json.as_bytes())?;

        let hyp_lines: Vec<String> = {
            use rayon::prelude::*;
            test_src
                .par_iter()
                .map(|line| {
                    let ids = beam_decode(
                        &model,
                        &src_vocab.encode(line),
                        cfg.model.beam_size,
                        cfg.model.length_norm_alpha,
                        cfg.model.max_length,
                    );
                    tgt_vocab.decode(&ids)
                })
                .collect()
        };
        out.write("decode", "test_hypotheses", "test.hyp", &joined(&hyp_lines))?;

        let cands = crate::bleu::tokenize_lines(&hyp_lines);
        let refs = crate::bleu::tokenize_lines(test_tgt);
        let report = at_stage("score", crate::bleu::corpus_bleu(&cands, &refs))?;
        let line = report.to_string();
        out.write("score", "test_score", "score.txt", format!("{line}\n").as_bytes())?;
        test_score = Some(line);
    }

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        script: cfg.script.name().to_string(),
        corruption: cfg.corruption.kind.to_string(),
        seed: cfg.corruption.seed,
        input: cfg.input.display().to_string(),
        input_sha256,
        input_lines: lines.len(),
        corpus: snapshot,
        skipped_sentences: skipped,
        emitted_pairs: src_lines.len(),
        split: cfg.split,
        vocab_min_freq: cfg.vocab_min_freq,
        source_vocab_size: src_vocab.size(),
        target_vocab_size: tgt_vocab.size(),
        trained: cfg.run_training,
        outputs: out.outputs,
        digests: out.digests,
        test_score,
    };
    let json = at_stage("manifest", serde_json::to_string_pretty(&manifest))?;
    at_stage("manifest", std::fs::write(cfg.out_dir.join("manifest.json"), format!("{json}\n")))?;
    Ok(manifest)
}
