//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::codebook::{
    gen_hybrid_code, gen_language_code, gen_random_code, serialize_codebook, storage_report, CodeKind,
};
use crate::config::{baseline, RunConfig, BASELINES};
use crate::corpus::{build_vocabulary, encode_stream, extract_characters, Vocabulary};
use crate::error::{Error, Result};
use crate::factorization::Structure;
use crate::model::{Chunk, EmbeddingKind, HeadMode, InitScales, LanguageModel, ModelConfig, WestSpec};
use crate::quantization::{dequantize_checkpoint, quantize_checkpoint};
use crate::report::{param_report, Comparison};
use crate::training::{grad_check, perplexity, train_with_progress};

#[derive(Debug, Parser)]
#[command(name = "west", version, about = "Language models with factorized embedding and softmax layers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count words in a corpus and write the vocabulary.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        /// Ordinary words to keep; `<eos>` and `<unk>` are added.
        #[arg(long, default_value_t = 10000)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a codebook for a vocabulary.
    GenCodebook {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value = "random")]
        kind: CodeKind,
        /// Alphabet size (ignored for language codes).
        #[arg(long, default_value_t = 32)]
        k: usize,
        #[arg(long)]
        n: usize,
        /// Frequent words given singleton codes (hybrid only).
        #[arg(long, default_value_t = 0)]
        t: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Append `<eow>` to language codes.
        #[arg(long)]
        eow: bool,
        /// Write every code even when the codebook can be regenerated from its header.
        #[arg(long)]
        explicit: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model described by a config file and write its checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `<out_dir>/model.ckpt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Word-level perplexity of a checkpoint on a text file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the config's `test_path`.
        #[arg(long)]
        text: Option<PathBuf>,
    },
    /// Parameter breakdown of a config or checkpoint against a baseline.
    Stats {
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "ptb-baseline")]
        baseline: String,
    },
    /// Affine-quantize (or dequantize) checkpoint tensors.
    Quantize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        bits: u32,
        /// Tensor-name prefixes to keep in float.
        #[arg(long)]
        exclude: Vec<String>,
        /// Convert a quantized checkpoint back to float instead.
        #[arg(long)]
        dequantize: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients in double precision.
    GradCheck {
        /// Model to check; without it a 7-word, 4-dimensional instance is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        steps: usize,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn io(out: &mut dyn Write, line: std::fmt::Arguments) -> Result<()> {
    out.write_fmt(line)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| Error::io("<stdout>", e))
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => { io($out, format_args!($($arg)*)) };
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::BuildVocab { corpus, size, out: path } => {
            let vocab = build_vocabulary(&read(&corpus)?, size)?;
            write(&path, vocab.to_text())?;
            say!(out, "vocabulary of {} words written to {}", vocab.len(), path.display())
        }
        Command::GenCodebook {
            vocab,
            kind,
            k,
            n,
            t,
            seed,
            eow,
            explicit,
            out: path,
        } => {
            let vocab = Vocabulary::from_text(&read(&vocab)?)?;
            let cb = match kind {
                CodeKind::Random => gen_random_code(k, n, vocab.len(), seed)?,
                CodeKind::Hybrid => gen_hybrid_code(k, n, t, vocab.len(), seed)?,
                CodeKind::Language => {
                    let chars = extract_characters(&vocab);
                    let alphabet = if eow { chars } else { chars.without_eow() };
                    gen_language_code(&vocab, &alphabet, n)?
                }
            };
            write(&path, serialize_codebook(&cb, explicit))?;
            let s = storage_report(&cb);
            say!(
                out,
                "{} codebook k={} n={} for {} words written to {} (explicit {} bits, {} seeds)",
                cb.kind(),
                cb.k_eff(),
                cb.n(),
                cb.vocab_size(),
                path.display(),
                s.explicit_bits,
                s.per_word_seeds
            )
        }
        Command::Train { config, out: path } => {
            let mut cfg = RunConfig::load(&config)?;
            let train_text = read(Path::new(&cfg.train_path))?;
            let test_text = read(Path::new(&cfg.test_path))?;
            let vocab = build_vocabulary(&train_text, cfg.vocab_size)?;
            let (emb, soft) = cfg.resolve(&vocab)?;
            let mut model = LanguageModel::<f32>::init(cfg.model_config(), emb, soft, cfg.init, cfg.seed)?;
            let train_stream = encode_stream(&vocab, &train_text);
            let test_stream = encode_stream(&vocab, &test_text);
            train_with_progress(&mut model, &train_stream, &test_stream, &cfg.hp, |s| {
                let _ = say!(
                    &mut *out,
                    "epoch {} lr {:.4} train ppl {:.2} test ppl {:.2}",
                    s.epoch,
                    s.learning_rate,
                    s.train_ppl,
                    s.test_ppl
                );
            })?;
            let path = path.unwrap_or_else(|| Path::new(&cfg.out_dir).join("model.ckpt"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            Checkpoint::from_model(&cfg, &vocab, &model).save(&path)?;
            say!(out, "checkpoint written to {}", path.display())
        }
        Command::Eval { checkpoint, text } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let cfg = ck.run_config()?;
            let vocab = ck.vocab()?;
            let model = ck.to_model()?;
            let path = text.unwrap_or_else(|| PathBuf::from(&cfg.test_path));
            let stream = encode_stream(&vocab, &read(&path)?);
            let ppl = perplexity(&model, &stream)?;
            say!(out, "test ppl {ppl:.4} over {} words", stream.len() - 1)
        }
        Command::Stats {
            config,
            checkpoint,
            baseline: name,
        } => {
            let model_cfg = match (config, checkpoint) {
                (Some(c), _) => {
                    let mut cfg = RunConfig::load(&c)?;
                    let spelled = (cfg.emb_kind == EmbeddingKind::West && cfg.emb.coding == CodeKind::Language)
                        || (cfg.soft_mode != HeadMode::Full && cfg.soft.coding == CodeKind::Language);
                    if spelled {
                        // alphabet size and code length come from the vocabulary
                        let vocab = build_vocabulary(&read(Path::new(&cfg.train_path))?, cfg.vocab_size)?;
                        cfg.resolve(&vocab)?;
                    }
                    cfg.model_config()
                }
                (None, Some(c)) => Checkpoint::load(&c)?.run_config()?.model_config(),
                (None, None) => unreachable!("clap requires one of --config and --checkpoint"),
            };
            let base = baseline(&name).ok_or_else(|| {
                Error::InvalidConfig(format!("unknown baseline {name:?}; known: {}", BASELINES.join(", ")))
            })?;
            let cmp = Comparison {
                name: &name,
                model: param_report(&model_cfg)?,
                baseline: param_report(&base)?,
            };
            say!(out, "{cmp}")
        }
        Command::Quantize {
            checkpoint,
            bits,
            exclude,
            dequantize,
            out: path,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            if dequantize {
                dequantize_checkpoint(&ck)?.save(&path)?;
                return say!(out, "dequantized checkpoint written to {}", path.display());
            }
            let (q, report) = quantize_checkpoint(&ck, bits, &exclude)?;
            q.save(&path)?;
            say!(
                out,
                "tensor bytes {} -> {} ({:.2}x), written to {}",
                report.before,
                report.after,
                report.ratio(),
                path.display()
            )
        }
        Command::GradCheck {
            config,
            epsilon,
            seed,
            steps,
        } => {
            let (model, vocab_size) = match config {
                Some(path) => {
                    let mut cfg = RunConfig::load(&path)?;
                    let vocab = build_vocabulary(&read(Path::new(&cfg.train_path))?, cfg.vocab_size)?;
                    let (emb, soft) = cfg.resolve(&vocab)?;
                    let model = LanguageModel::<f64>::init(cfg.model_config(), emb, soft, cfg.init, seed)?;
                    (model, vocab.len())
                }
                None => (tiny_model(seed)?, 7),
            };
            let inputs: Vec<usize> = (0..=steps).map(|i| (i * 5 + seed as usize) % vocab_size).collect();
            let chunk = Chunk::from_sequence(&inputs)?;
            let report = grad_check(&model, &chunk, epsilon)?;
            match &report.worst {
                Some((name, idx, a, n)) => say!(
                    out,
                    "max relative error {:.3e} over {} scalars (worst {name}[{idx}]: analytic {a:.6e}, numeric {n:.6e})",
                    report.max_rel_error,
                    report.checked
                ),
                None => say!(out, "no trainable scalars"),
            }
        }
    }
}

/// Seven words, `d = 4`, random codes with `k = 3`, `n = 2` on both sides.
fn tiny_model(seed: u64) -> Result<LanguageModel<f64>> {
    let cb = Arc::new(gen_random_code(3, 2, 7, seed)?);
    let spec = WestSpec {
        coding: CodeKind::Random,
        k: 3,
        n: 2,
        t: 0,
        structure: Structure::BlockDiagonal,
        tied: false,
        weighted: true,
    };
    let config = ModelConfig {
        vocab_size: 7,
        embed_dim: 4,
        hidden: 4,
        layers: 1,
        proj: 0,
        embedding: EmbeddingKind::West,
        emb_west: spec,
        head: HeadMode::West,
        soft_west: spec,
        soft_bias: true,
    };
    let scales = InitScales { dense: 0.5, factor: 0.5 };
    LanguageModel::init(config, Some(cb.clone()), Some(cb), scales, seed)
}
