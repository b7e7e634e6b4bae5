//! Truncated-BPTT training with plain SGD, perplexity evaluation and the
//! gradient checker.

mod gradcheck;

pub use gradcheck::{grad_check, grad_check_against, GradCheckReport, REL_ERROR_FLOOR};

use crate::error::{Error, Result};
use crate::model::{Chunk, LanguageModel, LstmState};
use crate::params::{squared_norm, Parameters};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    /// Multiplier applied once per epoch after `decay_start`.
    pub lr_decay: f64,
    /// Last epoch (1-based) trained at the initial rate.
    pub decay_start: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub bptt: usize,
    /// Global gradient-norm clip.
    pub clip: f64,
    /// Learning-rate multiplier for sparse weights λ.
    pub lambda_lr_mult: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            lr_decay: 0.5,
            decay_start: 4,
            epochs: 5,
            batch_size: 20,
            bptt: 20,
            clip: 5.0,
            lambda_lr_mult: 1.0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.lr_decay > 0.0
            && self.epochs > 0
            && self.batch_size > 0
            && self.bptt > 0
            && self.clip > 0.0
            && self.lambda_lr_mult > 0.0;
        if !positive {
            return Err(Error::InvalidConfig("hyperparameters must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate for a 1-based epoch.
    pub fn rate_at(&self, epoch: usize) -> f64 {
        let decays = epoch.saturating_sub(self.decay_start) as i32;
        self.learning_rate * self.lr_decay.powi(decays)
    }
}

/// Splits a stream into `batch` contiguous rows (dropping the remainder) and
/// cuts them into chunks of at most `bptt` steps.
pub fn batchify(stream: &[usize], batch: usize, bptt: usize) -> Result<Vec<Chunk>> {
    let row_len = stream.len() / batch.max(1);
    if batch == 0 || bptt == 0 || row_len < 2 {
        return Err(Error::EmptyStream);
    }
    let mut chunks = Vec::new();
    let mut start = 0;
    while start + 1 < row_len {
        let steps = bptt.min(row_len - 1 - start);
        let mut inputs = Vec::with_capacity(steps * batch);
        let mut targets = Vec::with_capacity(steps * batch);
        for t in 0..steps {
            for b in 0..batch {
                let pos = b * row_len + start + t;
                inputs.push(stream[pos]);
                targets.push(stream[pos + 1]);
            }
        }
        chunks.push(Chunk::new(batch, steps, inputs, targets)?);
        start += steps;
    }
    Ok(chunks)
}

/// Rescales `grads` in place so their global norm is at most `clip`.
/// Returns the norm before clipping.
pub fn clip_gradients<F: Real>(model: &LanguageModel<F>, grads: &mut LanguageModel<F>, clip: f64) -> f64 {
    let norm = squared_norm(&grads.params(), &model.params()).sqrt();
    if norm > clip {
        let factor = F::of(clip / norm);
        for p in grads.params_mut() {
            for g in p.data.iter_mut() {
                *g *= factor;
            }
        }
    }
    norm
}

/// `θ ← θ - rate·g` on trainable entries; frozen entries are untouched.
pub fn sgd_update<F: Real>(model: &mut LanguageModel<F>, grads: &LanguageModel<F>, rate: f64, lambda_mult: f64) {
    for (p, g) in model.params_mut().into_iter().zip(grads.params()) {
        let r = if p.name.ends_with("lambda") { rate * lambda_mult } else { rate };
        let r = F::of(r);
        for (i, (v, &gv)) in p.data.iter_mut().zip(g.data).enumerate() {
            if !p.frozen.is_frozen(i) {
                *v -= r * gv;
            }
        }
    }
}

/// Mean cross-entropy of a chunk, without gradients.
pub fn chunk_loss<F: Real>(model: &LanguageModel<F>, chunk: &Chunk, state: &LstmState<F>) -> Result<f64> {
    let (lp, _) = model.target_log_probs(chunk, state)?;
    Ok(-lp.iter().map(|v| v.f64()).sum::<f64>() / lp.len() as f64)
}

/// Mean cross-entropy and gradients from a zero initial state.
pub fn loss_and_grads<F: Real>(model: &LanguageModel<F>, chunk: &Chunk) -> Result<(f64, LanguageModel<F>)> {
    let (loss, grads, _) = model.loss_and_grads(chunk, &model.zero_state(chunk.batch))?;
    Ok((loss, grads))
}

pub fn perplexity_from_log_probs(log_probs: &[f64]) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(Error::EmptyStream);
    }
    let mean = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
    Ok((-mean).exp())
}

/// Steps per evaluation chunk.
const EVAL_STEPS: usize = 64;

/// Word-level perplexity of a stream, read left to right as one sequence
/// from a zero state. Every position after the first is scored.
pub fn perplexity<F: Real>(model: &LanguageModel<F>, stream: &[usize]) -> Result<f64> {
    perplexity_from_log_probs(&stream_log_probs(model, stream)?)
}

/// `log P(stream[i+1] | stream[..=i])` for every position.
pub fn stream_log_probs<F: Real>(model: &LanguageModel<F>, stream: &[usize]) -> Result<Vec<f64>> {
    if stream.len() < 2 {
        return Err(Error::EmptyStream);
    }
    let mut state = model.zero_state(1);
    let mut out = Vec::with_capacity(stream.len() - 1);
    let mut start = 0;
    while start + 1 < stream.len() {
        let end = (start + EVAL_STEPS).min(stream.len() - 1);
        let chunk = Chunk::from_sequence(&stream[start..=end])?;
        let (lp, next) = model.target_log_probs(&chunk, &state)?;
        out.extend(lp.iter().map(|v| v.f64()));
        state = next;
        start = end;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_ppl: f64,
    pub test_ppl: f64,
}

/// Trains in place. The train stream is batchified once; recurrent state
/// carries across chunks within an epoch and resets between epochs. From the
/// second epoch on, a mean train loss above `2·ln V` aborts the run.
pub fn train<F: Real>(
    model: &mut LanguageModel<F>,
    train_stream: &[usize],
    test_stream: &[usize],
    hp: &Hyperparameters,
) -> Result<Vec<EpochStats>> {
    train_with_progress(model, train_stream, test_stream, hp, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress<F: Real>(
    model: &mut LanguageModel<F>,
    train_stream: &[usize],
    test_stream: &[usize],
    hp: &Hyperparameters,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    hp.validate()?;
    let chunks = batchify(train_stream, hp.batch_size, hp.bptt)?;
    let limit = 2.0 * (model.vocab_size() as f64).ln();
    let mut history = Vec::with_capacity(hp.epochs);
    for epoch in 1..=hp.epochs {
        let rate = hp.rate_at(epoch);
        let mut state = model.zero_state(hp.batch_size);
        let mut total = 0.0;
        let mut count = 0usize;
        for (step, chunk) in chunks.iter().enumerate() {
            let (loss, mut grads, next) = model.loss_and_grads(chunk, &state).map_err(|e| match e {
                Error::NonFiniteLoss { .. } | Error::NonFiniteLogits => Error::NonFiniteLoss { step },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            clip_gradients(model, &mut grads, hp.clip);
            sgd_update(model, &grads, rate, hp.lambda_lr_mult);
            state = next;
            total += loss * chunk.len() as f64;
            count += chunk.len();
        }
        let train_loss = total / count as f64;
        if epoch > 1 && train_loss > limit {
            return Err(Error::Diverged {
                epoch,
                loss: train_loss,
                limit,
            });
        }
        let test_ppl = perplexity(model, test_stream)?;
        let stats = EpochStats {
            epoch,
            learning_rate: rate,
            train_ppl: train_loss.exp(),
            test_ppl,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batchify_layout() {
        let stream: Vec<usize> = (0..23).collect();
        let chunks = batchify(&stream, 2, 4).unwrap();
        // rows [0..11) and [11..22); 10 predictable steps per row
        assert_eq!(chunks.iter().map(|c| c.steps).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(&chunks[0].inputs[..4], &[0, 11, 1, 12]);
        assert_eq!(&chunks[0].targets[..4], &[1, 12, 2, 13]);
        assert_eq!(chunks[2].targets.last(), Some(&21));
        assert!(batchify(&[1, 2], 2, 4).is_err());
    }

    #[test]
    fn learning_rate_schedule() {
        let hp = Hyperparameters {
            learning_rate: 1.0,
            lr_decay: 0.5,
            decay_start: 2,
            ..Default::default()
        };
        assert_eq!(hp.rate_at(1), 1.0);
        assert_eq!(hp.rate_at(2), 1.0);
        assert_eq!(hp.rate_at(3), 0.5);
        assert_eq!(hp.rate_at(5), 0.125);
    }

    #[test]
    fn perplexity_arithmetic() {
        let p = perplexity_from_log_probs(&[-1.0, -2.0, -3.0]).unwrap();
        assert!((p - 2f64.exp()).abs() < 1e-12);
        assert_eq!(perplexity_from_log_probs(&[0.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(perplexity_from_log_probs(&[]), Err(Error::EmptyStream)));
    }
}
