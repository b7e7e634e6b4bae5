//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use west::codebook::{gen_random_code, CodeKind};
use west::config::RunConfig;
use west::corpus::{build_vocabulary, encode_stream, Vocabulary};
use west::factorization::Structure;
use west::model::{Chunk, EmbeddingKind, HeadMode, InitScales, LanguageModel, ModelConfig, WestSpec};
use west::params::Parameters;
use west::synthetic::{TINY_TEST, TINY_TRAIN};
use west::training::{train, EpochStats};

/// The bundled corpus, encoded with a 2000-word vocabulary.
pub struct Tiny {
    pub vocab: Vocabulary,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn tiny() -> Tiny {
    let vocab = build_vocabulary(TINY_TRAIN, 2000).unwrap();
    Tiny {
        train: encode_stream(&vocab, TINY_TRAIN),
        test: encode_stream(&vocab, TINY_TEST),
        vocab,
    }
}

pub const BASE_CONFIG: &str = include_str!("../../configs/tiny-baseline.conf");

/// Compressed input embedding: band, untied, Rand(24, 4).
pub const WEST_EMBEDDING: &str = "emb.kind = west
emb.coding = random
emb.k = 24
emb.n = 4
emb.structure = band
emb.tied = false
";

/// Spelling-based softmax factor shared by the head ablation.
pub const LANGUAGE_SOFTMAX: &str = "soft.coding = language
soft.structure = band
soft.tied = false
soft.n = 0
";

pub fn config(overrides: &str, seed: u64) -> RunConfig {
    let mut text = format!("{BASE_CONFIG}\n{overrides}\n");
    text.push_str(&format!("seed = {seed}\n"));
    RunConfig::parse(&text).unwrap()
}

pub struct Run {
    pub config: RunConfig,
    pub model: LanguageModel<f32>,
    pub history: Vec<EpochStats>,
}

impl Run {
    pub fn test_ppl(&self) -> f64 {
        self.history.last().unwrap().test_ppl
    }
}

pub fn train_on_tiny(tiny: &Tiny, overrides: &str, seed: u64) -> Run {
    let mut config = config(overrides, seed);
    let (emb, soft) = config.resolve(&tiny.vocab).unwrap();
    let mut model = LanguageModel::init(config.model_config(), emb, soft, config.init, seed).unwrap();
    let history = train(&mut model, &tiny.train, &tiny.test, &config.hp).unwrap();
    Run { config, model, history }
}

/// Unigram model from training counts with add-one smoothing.
pub fn unigram_ppl(vocab_size: usize, train: &[usize], test: &[usize]) -> f64 {
    let mut counts = vec![1.0f64; vocab_size];
    for &w in train {
        counts[w] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    let nll: f64 = test[1..].iter().map(|&w| -(counts[w] / total).ln()).sum();
    (nll / (test.len() - 1) as f64).exp()
}

pub fn tiny_spec(structure: Structure, tied: bool, weighted: bool) -> WestSpec {
    WestSpec {
        coding: CodeKind::Random,
        k: 3,
        n: 2,
        t: 0,
        structure,
        tied,
        weighted,
    }
}

/// `V = 7`, `d = 4`, one LSTM layer, factorized input and output with
/// `k = 3`, `n = 2`, word biases; λ set away from 1 when weighted.
pub fn grad_model(seed: u64, structure: Structure, tied: bool, weighted: bool) -> LanguageModel<f64> {
    let cb = Arc::new(gen_random_code(3, 2, 7, seed).unwrap());
    let spec = tiny_spec(structure, tied, weighted);
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
    let mut model = LanguageModel::init(config, Some(cb.clone()), Some(cb), scales, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in model.params_mut() {
        if p.name.ends_with("lambda") || p.name.ends_with("bias") {
            for (i, v) in p.data.iter_mut().enumerate() {
                if !p.frozen.is_frozen(i) {
                    *v = rng.gen_range(0.5..1.5);
                }
            }
        }
    }
    model
}

pub fn random_chunk(seed: u64, vocab: usize, batch: usize, steps: usize) -> Chunk {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = batch * steps;
    let inputs = (0..n).map(|_| rng.gen_range(0..vocab)).collect();
    let targets = (0..n).map(|_| rng.gen_range(0..vocab)).collect();
    Chunk::new(batch, steps, inputs, targets).unwrap()
}
