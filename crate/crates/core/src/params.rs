//! Flat, named views over model tensors. Optimizers, checkpoints and the
//! gradient checker all walk parameters through these.

use crate::real::Real;

/// Which entries of a tensor never train.
#[derive(Debug, Clone, PartialEq)]
pub enum Frozen {
    Nothing,
    /// Row 0 of a row-major matrix with `width` columns (the pad symbol).
    PadRow { width: usize },
    /// Explicit per-entry mask; `true` marks a frozen entry.
    Entries(Vec<bool>),
}

impl Frozen {
    pub fn is_frozen(&self, flat: usize) -> bool {
        match self {
            Frozen::Nothing => false,
            Frozen::PadRow { width } => flat < *width,
            Frozen::Entries(mask) => mask[flat],
        }
    }
}

pub struct Param<'a, F> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [F],
    pub frozen: Frozen,
}

pub struct ParamMut<'a, F> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a mut [F],
    pub frozen: Frozen,
}

/// Anything that owns trainable tensors. Implementations must list tensors
/// in the same order from `params` and `params_mut`, and `zeros_like` must
/// produce a structurally identical value used as a gradient accumulator.
pub trait Parameters<F: Real> {
    fn params(&self) -> Vec<Param<'_, F>>;
    fn params_mut(&mut self) -> Vec<ParamMut<'_, F>>;

    fn num_trainable(&self) -> usize {
        self.params()
            .iter()
            .map(|p| (0..p.data.len()).filter(|&i| !p.frozen.is_frozen(i)).count())
            .sum()
    }
}

/// Squared L2 norm over trainable entries.
pub fn squared_norm<F: Real>(grads: &[Param<'_, F>], mask_from: &[Param<'_, F>]) -> f64 {
    grads
        .iter()
        .zip(mask_from)
        .map(|(g, p)| {
            g.data
                .iter()
                .enumerate()
                .filter(|(i, _)| !p.frozen.is_frozen(*i))
                .map(|(_, v)| v.f64() * v.f64())
                .sum::<f64>()
        })
        .sum()
}
