//! `abugida`: corpus preparation, corruption, training, and scoring for
//! syllable-level text restoration, as one executable with subcommands.
//!
//! Every file is UTF-8 with one sentence per line. Every subcommand that
//! uses randomness takes `--seed`. Failures exit nonzero with the failing
//! stage named in the message.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use abugida::bleu::{corpus_bleu, tokenize_lines};
use abugida::clean::{clean, CleanStage};
use abugida::corrupt::{corrupt, CorruptOutcome, CorruptionKind, SeededSource};
use abugida::model::{
    beam_decode, init_model, load_checkpoint_expecting, save_checkpoint, train, ModelConfig,
};
use abugida::pipeline::{run_pipeline, split_lines, PipelineConfig, SplitSpec};
use abugida::script::ScriptId;
use abugida::segment::{parse_syllable_line, segment, to_syllable_line, SegmentedSentence};
use abugida::stats::{corpus_stats, masking_stats};
use abugida::vocab::Vocab;

#[derive(Parser)]
#[command(name = "abugida", version, about = "Syllable restoration toolkit for Abugida scripts")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    First,
    Second,
    Both,
}

impl From<StageArg> for CleanStage {
    fn from(s: StageArg) -> CleanStage {
        match s {
            StageArg::First => CleanStage::First,
            StageArg::Second => CleanStage::Second,
            StageArg::Both => CleanStage::Both,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Strip text down to the script's core alphabet.
    Clean {
        #[arg(long)]
        script: ScriptId,
        /// first = block filter, second = class filter, both = the full pipe.
        #[arg(long, value_enum, default_value = "both")]
        stage: StageArg,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Split cleaned text into space-delimited syllables.
    Segment {
        #[arg(long)]
        script: ScriptId,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Corrupt segmented sentences into model inputs.
    Corrupt {
        #[arg(long)]
        script: ScriptId,
        /// consonant, vowel, delete1, delete2, mask3, mask5, mask8, mask10.
        #[arg(long)]
        kind: CorruptionKind,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Segmented (syllable-line) input.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Where to record 0-based indices of mask-skipped lines.
        #[arg(long)]
        skipped: Option<PathBuf>,
    },
    /// Contiguous train/dev/test split.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 18_104)]
        train_n: usize,
        #[arg(long, default_value_t = 1_000)]
        dev_n: usize,
        #[arg(long, default_value_t = 1_000)]
        test_n: usize,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        dev_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Corpus statistics over segmented sentences, as key<TAB>value lines.
    Stats {
        #[arg(long)]
        script: ScriptId,
        /// Segmented (syllable-line) input.
        #[arg(long)]
        input: PathBuf,
        /// Also report masking statistics for this k.
        #[arg(long)]
        mask: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Build a token vocabulary from segmented or corrupted lines.
    Vocab {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_freq: u64,
    },
    /// Train a reconstruction model on aligned source/target files.
    Train {
        #[arg(long)]
        train_src: PathBuf,
        #[arg(long)]
        train_tgt: PathBuf,
        #[arg(long)]
        dev_src: PathBuf,
        #[arg(long)]
        dev_tgt: PathBuf,
        /// Flat `key = value` model configuration; defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        min_freq: u64,
        /// Receives model.bin, the vocabularies, and train_log.json.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Decode corrupted lines with a trained model.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        src_vocab: PathBuf,
        #[arg(long)]
        tgt_vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Beam width; the model config's value when absent.
        #[arg(long)]
        beam: Option<usize>,
        /// Length-normalization exponent; the model config's value when absent.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Corpus BLEU of a hypothesis file against a reference file.
    Score {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Run the whole pipeline from a flat config file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(l.as_ref());
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn parse_segmented(path: &Path, script: ScriptId) -> Result<Vec<SegmentedSentence>> {
    Ok(read_lines(path)?
        .iter()
        .map(|l| SegmentedSentence::from_syllables(script, parse_syllable_line(l)))
        .collect())
}

fn load_model_config(config: Option<&Path>, seed: Option<u64>) -> Result<ModelConfig> {
    let mut cfg = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            ModelConfig::from_flat(&text)?
        }
        None => ModelConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn encode_pairs(
    src: &[String],
    tgt: &[String],
    sv: &Vocab,
    tv: &Vocab,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    src.iter().zip(tgt).map(|(s, t)| (sv.encode(s), tv.encode(t))).collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Clean { script, stage, input, output } => {
            let lines = read_lines(&input)?;
            let cleaned: Vec<String> =
                lines.iter().map(|l| clean(l, script, stage.into())).collect();
            write_lines(&output, &cleaned).context("clean")
        }
        Cmd::Segment { script, input, output } => {
            let lines = read_lines(&input)?;
            let segmented: Vec<String> =
                lines.iter().map(|l| to_syllable_line(&segment(l, script))).collect();
            write_lines(&output, &segmented).context("segment")
        }
        Cmd::Corrupt { script, kind, seed, input, output, skipped } => {
            let sentences = parse_segmented(&input, script)?;
            let mut out = Vec::with_capacity(sentences.len());
            let mut skipped_idx = Vec::new();
            for (i, s) in sentences.iter().enumerate() {
                let mut rng = SeededSource::for_line(seed, i as u64);
                match corrupt(s, kind, &mut rng) {
                    CorruptOutcome::Tokens(tokens) => out.push(tokens.join(" ")),
                    CorruptOutcome::Skipped { .. } => skipped_idx.push(i.to_string()),
                }
            }
            write_lines(&output, &out).context("corrupt")?;
            if let Some(path) = skipped {
                write_lines(&path, &skipped_idx).context("corrupt")?;
            }
            Ok(())
        }
        Cmd::Split { input, train_n, dev_n, test_n, train_out, dev_out, test_out } => {
            let lines = read_lines(&input)?;
            let spec = SplitSpec { train_n, dev_n, test_n };
            let (train, dev, test) = split_lines(&lines, &spec).context("split")?;
            write_lines(&train_out, train)?;
            write_lines(&dev_out, dev)?;
            write_lines(&test_out, test)?;
            Ok(())
        }
        Cmd::Stats { script, input, mask, seed } => {
            let sentences = parse_segmented(&input, script)?;
            let stats = corpus_stats(&sentences);
            println!("sentences\t{}", stats.sentences);
            println!("syllables\t{}", stats.syllables);
            println!("consonants\t{}", stats.consonants);
            println!("vowels\t{}", stats.vowels);
            println!(
                "avg_syllables_per_sentence\t{}/{}",
                stats.avg_syllables_per_sentence.numer(),
                stats.avg_syllables_per_sentence.denom()
            );
            if let Some(k) = mask {
                let m = masking_stats(&sentences, k, seed);
                println!("mask_value\t{}", m.mask_value);
                println!("masked_sentences\t{}", m.masked_sentences);
                println!("skipped_sentences\t{}", m.skipped_sentences);
                println!("skipped_pct\t{:.2}", m.skipped_pct);
                println!("total_syllables_masked\t{}", m.total_syllables_masked);
            }
            Ok(())
        }
        Cmd::Vocab { input, output, min_freq } => {
            let vocab = Vocab::build_from_file(&input, min_freq).context("vocab")?;
            vocab.save(&output).context("vocab")?;
            Ok(())
        }
        Cmd::Train { train_src, train_tgt, dev_src, dev_tgt, config, seed, min_freq, out_dir } => {
            let cfg = load_model_config(config.as_deref(), seed).context("train")?;
            let ts = read_lines(&train_src)?;
            let tt = read_lines(&train_tgt)?;
            let ds = read_lines(&dev_src)?;
            let dt = read_lines(&dev_tgt)?;
            anyhow::ensure!(ts.len() == tt.len(), "train: src/tgt line counts differ");
            anyhow::ensure!(ds.len() == dt.len(), "train: dev src/tgt line counts differ");
            std::fs::create_dir_all(&out_dir).context("train")?;
            let sv = Vocab::build(ts.iter().map(String::as_str), min_freq);
            let tv = Vocab::build(tt.iter().map(String::as_str), min_freq);
            sv.save(&out_dir.join("vocab.src.tsv")).context("train")?;
            tv.save(&out_dir.join("vocab.tgt.tsv")).context("train")?;
            let mut model = init_model(&cfg, sv.size(), tv.size()).context("train")?;
            let log = train(&mut model, &encode_pairs(&ts, &tt, &sv, &tv), &encode_pairs(&ds, &dt, &sv, &tv))
                .context("train")?;
            save_checkpoint(&model, &out_dir.join("model.bin")).context("train")?;
            std::fs::write(
                out_dir.join("train_log.json"),
                format!("{}\n", serde_json::to_string_pretty(&log).context("train")?),
            )
            .context("train")?;
            println!("steps\t{}", log.steps);
            println!("epochs\t{}", log.epochs);
            println!("best_step\t{}", log.best_step);
            println!("best_dev_ce\t{:.6}", log.best_ce);
            println!("stop\t{:?}", log.stop);
            if let Some(r) = log.records.last() {
                println!("dev_bleu\t{:.2}", r.bleu);
            }
            Ok(())
        }
        Cmd::Decode { model, src_vocab, tgt_vocab, input, output, beam, alpha, max_len } => {
            let sv = Vocab::load(&src_vocab).context("decode")?;
            let tv = Vocab::load(&tgt_vocab).context("decode")?;
            let m = load_checkpoint_expecting(&model, sv.size(), tv.size()).context("decode")?;
            let beam = beam.unwrap_or(m.cfg.beam_size);
            let alpha = alpha.unwrap_or(m.cfg.length_norm_alpha);
            let max_len = max_len.unwrap_or(m.cfg.max_length);
            let lines = read_lines(&input)?;
            let hyps: Vec<String> = lines
                .par_iter()
                .map(|l| tv.decode(&beam_decode(&m, &sv.encode(l), beam, alpha, max_len)))
                .collect();
            write_lines(&output, &hyps).context("decode")
        }
        Cmd::Score { hyp, reference } => {
            let hyps = read_lines(&hyp)?;
            let refs = read_lines(&reference)?;
            let report = corpus_bleu(&tokenize_lines(&hyps), &tokenize_lines(&refs))
                .context("score")?;
            println!("{report}");
            Ok(())
        }
        Cmd::Pipeline { config } => {
            let cfg = PipelineConfig::load(&config).context("pipeline")?;
            let manifest = run_pipeline(&cfg).context("pipeline")?;
            println!("manifest\t{}", cfg.out_dir.join("manifest.json").display());
            println!("emitted_pairs\t{}", manifest.emitted_pairs);
            println!("skipped_sentences\t{}", manifest.skipped_sentences);
            if let Some(score) = &manifest.test_score {
                println!("{score}");
            }
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
