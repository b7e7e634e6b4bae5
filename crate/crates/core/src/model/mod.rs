//! The language model: an input embedding (full table or factorized), a
//! stack of LSTM layers and a softmax head.

mod head;
mod lstm;

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use head::{log_softmax, log_sum_exp, HeadMode, SoftmaxHead};
pub use lstm::{LstmLayer, LstmState};

use crate::codebook::{sub_seed, CodeKind, Codebook, CodebookPair};
use crate::error::{Error, Result};
use crate::factorization::{lookup_into, DenseFactor, SparseFactor, Structure, WestFactor};
use crate::params::{Frozen, Param, ParamMut, Parameters};
use crate::real::Real;

/// Shape of a factorized layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WestSpec {
    pub coding: CodeKind,
    pub k: usize,
    pub n: usize,
    pub t: usize,
    pub structure: Structure,
    pub tied: bool,
    pub weighted: bool,
}

impl Default for WestSpec {
    fn default() -> Self {
        Self {
            coding: CodeKind::Random,
            k: 32,
            n: 4,
            t: 0,
            structure: Structure::BlockDiagonal,
            tied: true,
            weighted: false,
        }
    }
}

impl WestSpec {
    /// Alphabet size including hybrid singletons.
    pub fn k_eff(&self) -> usize {
        self.k + self.t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    Full,
    West,
}

/// Everything needed to derive parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    /// LSTM output projection size; 0 disables it.
    pub proj: usize,
    pub embedding: EmbeddingKind,
    pub emb_west: WestSpec,
    pub head: HeadMode,
    pub soft_west: WestSpec,
    pub soft_bias: bool,
}

impl ModelConfig {
    /// Width of the activations fed to the softmax (`d_s`).
    pub fn softmax_dim(&self) -> usize {
        if self.proj > 0 {
            self.proj
        } else {
            self.hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.vocab_size == 0 || self.embed_dim == 0 || self.hidden == 0 || self.layers == 0 {
            return bad("vocab_size, embed_dim, hidden and layers must be positive".into());
        }
        if self.embedding == EmbeddingKind::West {
            check_spec(&self.emb_west, self.embed_dim, "embedding")?;
        }
        if self.head != HeadMode::Full {
            check_spec(&self.soft_west, self.softmax_dim(), "softmax")?;
        }
        if self.head == HeadMode::CharNormalized {
            if self.soft_west.coding != CodeKind::Language || self.soft_west.structure != Structure::Band {
                return bad("char_normalized softmax needs language coding with band structure".into());
            }
            if self.soft_bias || self.soft_west.weighted {
                return bad("char_normalized softmax takes no word biases or sparse weights".into());
            }
        }
        Ok(())
    }
}

fn check_spec(spec: &WestSpec, d: usize, what: &str) -> Result<()> {
    if spec.k == 0 || spec.n == 0 {
        return Err(Error::InvalidConfig(format!("{what}: k and n must be positive")));
    }
    if spec.structure == Structure::BlockDiagonal && !d.is_multiple_of(spec.n) {
        return Err(Error::ShapeMismatch(format!(
            "{what}: block-diagonal structure needs n | d, got n={} d={d}",
            spec.n
        )));
    }
    if spec.coding != CodeKind::Hybrid && spec.t != 0 {
        return Err(Error::InvalidConfig(format!("{what}: t is only valid for hybrid coding")));
    }
    Ok(())
}

/// Initialization scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitScales {
    /// Uniform range for LSTM weights and full tables.
    pub dense: f64,
    /// Uniform range for sub-unit matrices.
    pub factor: f64,
}

impl Default for InitScales {
    fn default() -> Self {
        Self {
            dense: 0.1,
            factor: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Embedding<F> {
    Full(Array2<F>),
    West(WestFactor<F>),
}

impl<F: Real> Embedding<F> {
    pub fn dim(&self) -> usize {
        match self {
            Embedding::Full(t) => t.ncols(),
            Embedding::West(f) => f.dim(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Embedding::Full(t) => t.nrows(),
            Embedding::West(f) => f.vocab_size(),
        }
    }

    /// Embeds `words` into the rows of a `words.len() × d` matrix.
    pub fn embed(&self, words: &[usize]) -> Array2<F> {
        let mut out = Array2::zeros((words.len(), self.dim()));
        for (r, &w) in words.iter().enumerate() {
            match self {
                Embedding::Full(t) => out.row_mut(r).assign(&t.row(w)),
                Embedding::West(f) => lookup_into(&f.sparse, &f.dense, w, out.row_mut(r)),
            }
        }
        out
    }

    fn backward(&self, words: &[usize], d_out: ArrayView2<F>, grad: &mut Self) {
        match (self, grad) {
            (Embedding::Full(_), Embedding::Full(g)) => {
                for (r, &w) in words.iter().enumerate() {
                    let mut row = g.row_mut(w);
                    row += &d_out.row(r);
                }
            }
            (Embedding::West(f), Embedding::West(g)) => {
                for (r, &w) in words.iter().enumerate() {
                    let d = d_out.row(r);
                    f.lookup_backward(w, d.as_slice().expect("contiguous rows"), g);
                }
            }
            _ => unreachable!("gradient embedding mirrors the model"),
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            Embedding::Full(t) => Embedding::Full(Array2::zeros(t.raw_dim())),
            Embedding::West(f) => Embedding::West(f.zeros_like()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel<F> {
    config: ModelConfig,
    pub embedding: Embedding<F>,
    pub layers: Vec<LstmLayer<F>>,
    pub head: SoftmaxHead<F>,
}

/// A chunk of `steps` time steps for `B` streams, stored time-major:
/// entry `t·B + b` is stream `b` at step `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub batch: usize,
    pub steps: usize,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Chunk {
    pub fn new(batch: usize, steps: usize, inputs: Vec<usize>, targets: Vec<usize>) -> Result<Self> {
        if batch == 0 || steps == 0 || inputs.len() != batch * steps || targets.len() != inputs.len() {
            return Err(Error::ShapeMismatch(format!(
                "chunk of {batch}×{steps} needs {} inputs and targets, got {} and {}",
                batch * steps,
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self {
            batch,
            steps,
            inputs,
            targets,
        })
    }

    /// A chunk from one contiguous sequence: inputs `seq[..n-1]`, targets
    /// `seq[1..]`.
    pub fn from_sequence(seq: &[usize]) -> Result<Self> {
        if seq.len() < 2 {
            return Err(Error::EmptyStream);
        }
        Self::new(1, seq.len() - 1, seq[..seq.len() - 1].to_vec(), seq[1..].to_vec())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

impl<F: Real> LanguageModel<F> {
    /// Allocates a zero-valued model. Factorized layers need their codebooks.
    pub fn zeros(
        config: ModelConfig,
        emb_codebook: Option<Arc<Codebook>>,
        soft_codebook: Option<Arc<Codebook>>,
    ) -> Result<Self> {
        config.validate()?;
        let v = config.vocab_size;
        let need_cb = |cb: Option<Arc<Codebook>>, spec: &WestSpec, what: &str| -> Result<Arc<Codebook>> {
            let cb = cb.ok_or_else(|| Error::InvalidConfig(format!("{what} needs a codebook")))?;
            if cb.vocab_size() != v || cb.n() != spec.n || cb.k_eff() != spec.k_eff() || cb.kind() != spec.coding {
                return Err(Error::ShapeMismatch(format!(
                    "{what} codebook ({} k={} n={} V={}) does not match config ({} k={} n={} V={v})",
                    cb.kind(),
                    cb.k_eff(),
                    cb.n(),
                    cb.vocab_size(),
                    spec.coding,
                    spec.k_eff(),
                    spec.n
                )));
            }
            Ok(cb)
        };
        let make_factor = |cb: Arc<Codebook>, spec: &WestSpec, d: usize| -> Result<WestFactor<F>> {
            let dense = DenseFactor::zeros(spec.structure, spec.k_eff(), spec.n, d, spec.tied)?;
            WestFactor::new(SparseFactor::new(cb, spec.weighted), dense)
        };

        let embedding = match config.embedding {
            EmbeddingKind::Full => Embedding::Full(Array2::zeros((v, config.embed_dim))),
            EmbeddingKind::West => {
                let cb = need_cb(emb_codebook, &config.emb_west, "embedding")?;
                Embedding::West(make_factor(cb, &config.emb_west, config.embed_dim)?)
            }
        };
        let mut layers = Vec::with_capacity(config.layers);
        let mut d_in = config.embed_dim;
        for _ in 0..config.layers {
            let layer = LstmLayer::zeros(d_in, config.hidden, config.proj);
            d_in = layer.output_dim();
            layers.push(layer);
        }
        let d_s = config.softmax_dim();
        let head = match config.head {
            HeadMode::Full => SoftmaxHead::full(v, d_s),
            HeadMode::West => {
                let cb = need_cb(soft_codebook, &config.soft_west, "softmax")?;
                SoftmaxHead::west(make_factor(cb, &config.soft_west, d_s)?, config.soft_bias)
            }
            HeadMode::CharNormalized => {
                let cb = need_cb(soft_codebook, &config.soft_west, "softmax")?;
                SoftmaxHead::char_normalized(make_factor(cb, &config.soft_west, d_s)?)?
            }
        };
        Ok(Self {
            config,
            embedding,
            layers,
            head,
        })
    }

    /// Zero model followed by seeded uniform initialization.
    pub fn init(
        config: ModelConfig,
        emb_codebook: Option<Arc<Codebook>>,
        soft_codebook: Option<Arc<Codebook>>,
        scales: InitScales,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::zeros(config, emb_codebook, soft_codebook)?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "init"));
        match &mut model.embedding {
            Embedding::Full(t) => {
                t.mapv_inplace(|_| F::of(rand::Rng::gen_range(&mut rng, -scales.dense..scales.dense)))
            }
            Embedding::West(f) => f.dense.init_uniform(&mut rng, scales.factor),
        }
        for layer in &mut model.layers {
            layer.init(&mut rng, scales.dense);
        }
        model.head.init(&mut rng, scales.dense, scales.factor);
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    /// Codebooks of the embedding and softmax, where factorized.
    pub fn codebooks(&self) -> CodebookPair {
        let emb = match &self.embedding {
            Embedding::West(f) => Some(f.sparse.codebook_arc().clone()),
            Embedding::Full(_) => None,
        };
        let soft = match &self.head {
            SoftmaxHead::West { factor, .. } | SoftmaxHead::CharNormalized { factor } => {
                Some(factor.sparse.codebook_arc().clone())
            }
            SoftmaxHead::Full { .. } => None,
        };
        (emb, soft)
    }

    pub fn zero_state(&self, batch: usize) -> LstmState<F> {
        LstmState::zeros(&self.layers, batch)
    }

    /// A structurally identical model with every tensor zeroed, used to
    /// accumulate gradients.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            embedding: self.embedding.zeros_like(),
            layers: self.layers.iter().map(LstmLayer::zeros_like).collect(),
            head: self.head.zeros_like(),
        }
    }

    fn check_words(&self, words: &[usize]) -> Result<()> {
        let v = self.vocab_size();
        match words.iter().find(|&&w| w >= v) {
            Some(&w) => Err(Error::IndexOutOfRange { index: w, size: v }),
            None => Ok(()),
        }
    }

    /// Runs embedding and LSTM stack over a chunk; returns top activations
    /// (`steps·B × d_s`), the next state and (optionally) caches.
    fn run_core(
        &self,
        inputs: &[usize],
        steps: usize,
        state: &LstmState<F>,
        keep_cache: bool,
    ) -> (Array2<F>, LstmState<F>, Vec<lstm::LayerCache<F>>) {
        let mut x = self.embedding.embed(inputs);
        let mut next = LstmState { h: Vec::new(), c: Vec::new() };
        let mut caches = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let (out, h, c, cache) = layer.forward(x, steps, &state.h[l], &state.c[l], keep_cache);
            next.h.push(h);
            next.c.push(c);
            caches.extend(cache);
            x = out;
        }
        (x, next, caches)
    }

    /// One step for `B` streams: embeds `words`, advances the state and
    /// returns the word-level log scores (`B × V`).
    pub fn forward_step(&self, words: &[usize], state: &LstmState<F>) -> Result<(LstmState<F>, Array2<F>)> {
        self.check_words(words)?;
        if words.len() != state.batch() {
            return Err(Error::ShapeMismatch(format!(
                "{} words for a state of batch {}",
                words.len(),
                state.batch()
            )));
        }
        let (top, next, _) = self.run_core(words, 1, state, false);
        let mut out = Array2::zeros((words.len(), self.vocab_size()));
        for r in 0..words.len() {
            out.row_mut(r).assign(&self.head.word_log_scores(top.row(r))?);
        }
        Ok((next, out))
    }

    /// Top activations for a chunk, for evaluation.
    pub fn activations(&self, chunk: &Chunk, state: &LstmState<F>) -> Result<(Array2<F>, LstmState<F>)> {
        self.check_words(&chunk.inputs)?;
        let (top, next, _) = self.run_core(&chunk.inputs, chunk.steps, state, false);
        Ok((top, next))
    }

    /// `log P(target | history)` for every position of the chunk.
    pub fn target_log_probs(&self, chunk: &Chunk, state: &LstmState<F>) -> Result<(Vec<F>, LstmState<F>)> {
        self.check_words(&chunk.targets)?;
        let (top, next) = self.activations(chunk, state)?;
        Ok((self.head.target_log_probs(top.view(), &chunk.targets)?, next))
    }

    /// Mean cross-entropy over the chunk plus gradients for every tensor.
    pub fn loss_and_grads(&self, chunk: &Chunk, state: &LstmState<F>) -> Result<(f64, Self, LstmState<F>)> {
        self.check_words(&chunk.inputs)?;
        self.check_words(&chunk.targets)?;
        let (top, next, caches) = self.run_core(&chunk.inputs, chunk.steps, state, true);
        let mut grad = self.zeros_like();
        let scale = F::of(1.0 / chunk.len() as f64);
        let (nll, mut d) = self.head.nll_backward(top.view(), &chunk.targets, scale, &mut grad.head)?;
        let loss = nll / chunk.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step: 0 });
        }
        for (l, layer) in self.layers.iter().enumerate().rev() {
            d = layer.backward(&caches[l], d.view(), chunk.steps, &mut grad.layers[l]);
        }
        self.embedding.backward(&chunk.inputs, d.view(), &mut grad.embedding);
        Ok((loss, grad, next))
    }
}

impl<F: Real> Parameters<F> for LanguageModel<F> {
    fn params(&self) -> Vec<Param<'_, F>> {
        let mut out = Vec::new();
        match &self.embedding {
            Embedding::Full(t) => out.push(Param {
                name: "emb.table".into(),
                dims: t.shape().to_vec(),
                data: t.as_slice().expect("standard layout"),
                frozen: Frozen::Nothing,
            }),
            Embedding::West(f) => {
                for mut p in f.params() {
                    p.name = format!("emb.{}", p.name);
                    out.push(p);
                }
            }
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer.push_params(&format!("lstm.{l}"), &mut out);
        }
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_, F>> {
        let mut out = Vec::new();
        match &mut self.embedding {
            Embedding::Full(t) => out.push(ParamMut {
                name: "emb.table".into(),
                dims: t.shape().to_vec(),
                data: t.as_slice_mut().expect("standard layout"),
                frozen: Frozen::Nothing,
            }),
            Embedding::West(f) => {
                for mut p in f.params_mut() {
                    p.name = format!("emb.{}", p.name);
                    out.push(p);
                }
            }
        }
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.push_params_mut(&format!("lstm.{l}"), &mut out);
        }
        out.extend(self.head.params_mut());
        out
    }
}
