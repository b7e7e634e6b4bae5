//! Flat `key = value` run configuration.
//!
//! Every key has a default (see [`RunConfig::default`]); unknown keys are
//! rejected. [`RunConfig::to_text`] writes every key in a fixed order, and that
//! canonical text is what checkpoints carry.
//!
//! For language coding `k` is always taken from the vocabulary's character
//! set (plus `<eow>`), and `n = 0` means "longest spelling".

use std::fmt::Display;
use std::str::FromStr;
use std::sync::Arc;

use crate::codebook::{gen_hybrid_code, gen_language_code, gen_random_code, sub_seed, CodeKind, Codebook, CodebookPair};
use crate::corpus::{extract_characters, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{EmbeddingKind, HeadMode, InitScales, ModelConfig, WestSpec};
use crate::training::Hyperparameters;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_path: String,
    pub test_path: String,
    pub out_dir: String,
    /// Number of ordinary words kept; `<eos>` and `<unk>` come on top.
    pub vocab_size: usize,
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub proj: usize,
    pub emb_kind: EmbeddingKind,
    pub emb: WestSpec,
    pub soft_mode: HeadMode,
    pub soft: WestSpec,
    pub soft_bias: bool,
    pub hp: Hyperparameters,
    pub init: InitScales,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_path: "train.txt".into(),
            test_path: "test.txt".into(),
            out_dir: "out".into(),
            vocab_size: 10000,
            seed: 1,
            embed_dim: 200,
            hidden: 200,
            layers: 2,
            proj: 0,
            emb_kind: EmbeddingKind::Full,
            emb: WestSpec::default(),
            soft_mode: HeadMode::Full,
            soft: WestSpec::default(),
            soft_bias: false,
            hp: Hyperparameters::default(),
            init: InitScales::default(),
        }
    }
}

impl FromStr for EmbeddingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "west" => Ok(Self::West),
            _ => Err(Error::InvalidConfig(format!("unknown embedding kind {s:?}"))),
        }
    }
}

impl std::fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::West => "west",
        })
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("bad value {value:?} for {key}"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(sub) = key.strip_prefix("emb.") {
            if sub == "kind" {
                self.emb_kind = value.parse()?;
                return Ok(());
            }
            return set_spec(&mut self.emb, key, sub, value);
        }
        if let Some(sub) = key.strip_prefix("soft.") {
            match sub {
                "mode" => self.soft_mode = value.parse()?,
                "bias" => self.soft_bias = parse_bool(key, value)?,
                _ => return set_spec(&mut self.soft, key, sub, value),
            }
            return Ok(());
        }
        match key {
            "train_path" => self.train_path = value.to_string(),
            "test_path" => self.test_path = value.to_string(),
            "out_dir" => self.out_dir = value.to_string(),
            "vocab_size" => self.vocab_size = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            "hidden" => self.hidden = parse_value(key, value)?,
            "layers" => self.layers = parse_value(key, value)?,
            "proj" => self.proj = parse_value(key, value)?,
            "lr" => self.hp.learning_rate = parse_value(key, value)?,
            "lr_decay" => self.hp.lr_decay = parse_value(key, value)?,
            "decay_start" => self.hp.decay_start = parse_value(key, value)?,
            "epochs" => self.hp.epochs = parse_value(key, value)?,
            "batch_size" => self.hp.batch_size = parse_value(key, value)?,
            "bptt" => self.hp.bptt = parse_value(key, value)?,
            "clip" => self.hp.clip = parse_value(key, value)?,
            "lambda_lr_mult" => self.hp.lambda_lr_mult = parse_value(key, value)?,
            "init_scale" => self.init.dense = parse_value(key, value)?,
            "factor_init" => self.init.factor = parse_value(key, value)?,
            _ => return Err(Error::UnknownConfigKey(key.to_string())),
        }
        Ok(())
    }

    /// Canonical text: every key, fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: &dyn Display| out.push_str(&format!("{k} = {v}\n"));
        put("train_path", &self.train_path);
        put("test_path", &self.test_path);
        put("out_dir", &self.out_dir);
        put("vocab_size", &self.vocab_size);
        put("seed", &self.seed);
        put("embed_dim", &self.embed_dim);
        put("hidden", &self.hidden);
        put("layers", &self.layers);
        put("proj", &self.proj);
        put("emb.kind", &self.emb_kind);
        put_spec(&mut put, "emb", &self.emb);
        put("soft.mode", &self.soft_mode);
        put_spec(&mut put, "soft", &self.soft);
        put("soft.bias", &self.soft_bias);
        put("lr", &self.hp.learning_rate);
        put("lr_decay", &self.hp.lr_decay);
        put("decay_start", &self.hp.decay_start);
        put("epochs", &self.hp.epochs);
        put("batch_size", &self.hp.batch_size);
        put("bptt", &self.hp.bptt);
        put("clip", &self.hp.clip);
        put("lambda_lr_mult", &self.hp.lambda_lr_mult);
        put("init_scale", &self.init.dense);
        put("factor_init", &self.init.factor);
        out
    }

    /// Model shapes for a resolved config, `V = vocab_size + 2`.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab_size: self.vocab_size + 2,
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            layers: self.layers,
            proj: self.proj,
            embedding: self.emb_kind,
            emb_west: self.emb,
            head: self.soft_mode,
            soft_west: self.soft,
            soft_bias: self.soft_bias,
        }
    }

    fn uses_emb_codebook(&self) -> bool {
        self.emb_kind == EmbeddingKind::West
    }

    fn uses_soft_codebook(&self) -> bool {
        self.soft_mode != HeadMode::Full
    }

    /// Pins the config to a concrete vocabulary (actual size, language `k`
    /// and `n`) and generates the codebooks it calls for.
    pub fn resolve(&mut self, vocab: &Vocabulary) -> Result<CodebookPair> {
        self.vocab_size = vocab.ordinary_len();
        let emb = if self.uses_emb_codebook() {
            Some(Arc::new(make_codebook(&mut self.emb, vocab, sub_seed(self.seed, "codebook.emb"))?))
        } else {
            None
        };
        let soft = if self.uses_soft_codebook() {
            Some(Arc::new(make_codebook(&mut self.soft, vocab, sub_seed(self.seed, "codebook.soft"))?))
        } else {
            None
        };
        self.model_config().validate()?;
        Ok((emb, soft))
    }
}

fn set_spec(spec: &mut WestSpec, key: &str, sub: &str, value: &str) -> Result<()> {
    match sub {
        "coding" => spec.coding = value.parse()?,
        "k" => spec.k = parse_value(key, value)?,
        "n" => spec.n = parse_value(key, value)?,
        "t" => spec.t = parse_value(key, value)?,
        "structure" => spec.structure = value.parse()?,
        "tied" => spec.tied = parse_bool(key, value)?,
        "weighted" => spec.weighted = parse_bool(key, value)?,
        _ => return Err(Error::UnknownConfigKey(key.to_string())),
    }
    Ok(())
}

fn put_spec(put: &mut impl FnMut(&str, &dyn Display), prefix: &str, spec: &WestSpec) {
    put(&format!("{prefix}.coding"), &spec.coding);
    put(&format!("{prefix}.k"), &spec.k);
    put(&format!("{prefix}.n"), &spec.n);
    put(&format!("{prefix}.t"), &spec.t);
    put(&format!("{prefix}.structure"), &spec.structure);
    put(&format!("{prefix}.tied"), &spec.tied);
    put(&format!("{prefix}.weighted"), &spec.weighted);
}

fn make_codebook(spec: &mut WestSpec, vocab: &Vocabulary, seed: u64) -> Result<Codebook> {
    let v = vocab.len();
    match spec.coding {
        CodeKind::Random => gen_random_code(spec.k, spec.n, v, seed),
        CodeKind::Hybrid => gen_hybrid_code(spec.k, spec.n, spec.t, v, seed),
        CodeKind::Language => {
            let alphabet = extract_characters(vocab);
            if spec.n == 0 {
                let longest = (0..v)
                    .map(|w| alphabet.spell(vocab.word(w)).map_or(0, |s| s.len()))
                    .max()
                    .unwrap_or(0);
                spec.n = longest + 1;
            }
            let cb = gen_language_code(vocab, &alphabet, spec.n)?;
            spec.k = cb.k();
            Ok(cb)
        }
    }
}

/// Reference configurations for compression ratios.
pub fn baseline(name: &str) -> Option<ModelConfig> {
    match name {
        // 10k-word Penn Treebank setup with the small two-layer LSTM.
        "ptb-baseline" => Some(ModelConfig {
            vocab_size: 10000,
            embed_dim: 200,
            hidden: 200,
            layers: 2,
            proj: 0,
            embedding: EmbeddingKind::Full,
            emb_west: WestSpec::default(),
            head: HeadMode::Full,
            soft_west: WestSpec::default(),
            soft_bias: false,
        }),
        _ => None,
    }
}

pub const BASELINES: &[&str] = &["ptb-baseline"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;

    #[test]
    fn canonical_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.emb_kind = EmbeddingKind::West;
        cfg.soft_mode = HeadMode::West;
        cfg.soft.weighted = true;
        cfg.hp.learning_rate = 0.75;
        let text = cfg.to_text();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        assert_eq!(RunConfig::parse(&text).unwrap().to_text(), text);
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn comments_and_whitespace() {
        let cfg = RunConfig::parse("# run\n  emb.kind=west   # factorized\n\nemb.k = 7\n").unwrap();
        assert_eq!(cfg.emb_kind, EmbeddingKind::West);
        assert_eq!(cfg.emb.k, 7);
    }

    #[test]
    fn rejects_unknown_and_bad_values() {
        assert!(matches!(RunConfig::parse("colour = red"), Err(Error::UnknownConfigKey(k)) if k == "colour"));
        assert!(matches!(RunConfig::parse("emb.colour = red"), Err(Error::UnknownConfigKey(_))));
        assert!(matches!(RunConfig::parse("hidden = many"), Err(Error::InvalidConfig(_))));
        assert!(matches!(RunConfig::parse("hidden"), Err(Error::InvalidConfig(_))));
        assert!(RunConfig::parse("soft.tied = maybe").is_err());
    }

    #[test]
    fn resolve_language_codes() {
        let vocab = build_vocabulary("ab ba abc\nc cab ab\n", 100).unwrap();
        let mut cfg = RunConfig::parse(
            "soft.mode = char_normalized\nsoft.coding = language\nsoft.structure = band\nsoft.tied = false\nsoft.n = 0\nembed_dim = 4\nhidden = 4\nlayers = 1",
        )
        .unwrap();
        let (emb, soft) = cfg.resolve(&vocab).unwrap();
        assert!(emb.is_none());
        let soft = soft.unwrap();
        // a b c < e o s > u n k, plus <eow>
        assert_eq!(cfg.soft.k, 12);
        assert_eq!(soft.k(), 12);
        assert_eq!(cfg.soft.n, 6);
        assert_eq!(cfg.vocab_size, 5);
        assert_eq!(cfg.model_config().vocab_size, vocab.len());
    }

    #[test]
    fn resolve_is_seeded() {
        let vocab = build_vocabulary("a b c d e f g\n", 100).unwrap();
        let mut a = RunConfig::parse("emb.kind = west\nemb.k = 3\nemb.n = 2\nembed_dim = 4").unwrap();
        let mut b = a.clone();
        let (ca, _) = a.resolve(&vocab).unwrap();
        let (cb, _) = b.resolve(&vocab).unwrap();
        assert_eq!(ca, cb);
        b.seed = 2;
        let (cc, _) = b.clone().resolve(&vocab).unwrap();
        assert_ne!(ca, cc);
    }
}
