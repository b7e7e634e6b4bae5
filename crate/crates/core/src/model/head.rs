//! Output layers. Every head maps top-layer activations `h` to a score for
//! each vocabulary word:
//!
//! - `Full`: one weight row and bias per word.
//! - `West`: logits `l_w = Σ_i λ(w,i) E^i_{c_i(w)} · h + b_w`, normalized over
//!   the whole vocabulary. Scores are gathered from per-position tables of
//!   sub-unit dot products, so `E` is never formed.
//! - `CharNormalized`: each code position is an independent softmax over the
//!   alphabet and a word scores the product of its symbols' probabilities.
//!   This does not normalize over words; mass leaks to strings outside the
//!   vocabulary.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::factorization::WestFactor;
use crate::params::{Frozen, Param, ParamMut, Parameters};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadMode {
    Full,
    West,
    CharNormalized,
}

impl fmt::Display for HeadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadMode::Full => "full",
            HeadMode::West => "west",
            HeadMode::CharNormalized => "char_normalized",
        })
    }
}

impl FromStr for HeadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(HeadMode::Full),
            "west" => Ok(HeadMode::West),
            "char_normalized" => Ok(HeadMode::CharNormalized),
            other => Err(Error::InvalidConfig(format!("unknown softmax mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SoftmaxHead<F> {
    Full {
        /// `V × d_s`
        weight: Array2<F>,
        bias: Array1<F>,
    },
    West {
        factor: WestFactor<F>,
        bias: Option<Array1<F>>,
    },
    /// Band-structured position matrices over an alphabet whose last symbol
    /// is `<eow>`; every code must end with it.
    CharNormalized { factor: WestFactor<F> },
}

/// `log Σ exp(x)` with max subtraction.
pub fn log_sum_exp<F: Real>(x: ArrayView1<F>) -> F {
    let m = x.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
    if m == F::neg_infinity() {
        return m;
    }
    let s = x.iter().fold(F::zero(), |acc, &v| acc + (v - m).exp());
    m + s.ln()
}

/// `log softmax` of a logit vector; rejects non-finite input.
pub fn log_softmax<F: Real>(logits: ArrayView1<F>) -> Result<Array1<F>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogits);
    }
    let lse = log_sum_exp(logits);
    Ok(logits.mapv(|v| v - lse))
}

impl<F: Real> SoftmaxHead<F> {
    pub fn full(vocab: usize, d_s: usize) -> Self {
        SoftmaxHead::Full {
            weight: Array2::zeros((vocab, d_s)),
            bias: Array1::zeros(vocab),
        }
    }

    pub fn west(factor: WestFactor<F>, with_bias: bool) -> Self {
        let v = factor.vocab_size();
        SoftmaxHead::West {
            factor,
            bias: with_bias.then(|| Array1::zeros(v)),
        }
    }

    pub fn char_normalized(factor: WestFactor<F>) -> Result<Self> {
        let cb = factor.sparse.codebook();
        let eow = cb.k() as u32;
        for w in 0..cb.vocab_size() {
            if cb.code(w).last() != Some(&eow) || cb.code(w)[..cb.code_len(w) - 1].contains(&eow) {
                return Err(Error::InvalidConfig(
                    "char-normalized head needs codes terminated by <eow>".into(),
                ));
            }
        }
        if factor.dense.structure() != crate::factorization::Structure::Band {
            return Err(Error::InvalidConfig("char-normalized head needs band structure".into()));
        }
        Ok(SoftmaxHead::CharNormalized { factor })
    }

    pub fn mode(&self) -> HeadMode {
        match self {
            SoftmaxHead::Full { .. } => HeadMode::Full,
            SoftmaxHead::West { .. } => HeadMode::West,
            SoftmaxHead::CharNormalized { .. } => HeadMode::CharNormalized,
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            SoftmaxHead::Full { bias, .. } => bias.len(),
            SoftmaxHead::West { factor, .. } | SoftmaxHead::CharNormalized { factor } => factor.vocab_size(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            SoftmaxHead::Full { weight, .. } => weight.ncols(),
            SoftmaxHead::West { factor, .. } | SoftmaxHead::CharNormalized { factor } => factor.dim(),
        }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R, scale: f64, factor_scale: f64) {
        match self {
            SoftmaxHead::Full { weight, bias } => {
                weight.mapv_inplace(|_| F::of(rng.gen_range(-scale..scale)));
                bias.fill(F::zero());
            }
            SoftmaxHead::West { factor, bias } => {
                factor.dense.init_uniform(rng, factor_scale);
                if let Some(b) = bias {
                    b.fill(F::zero());
                }
            }
            SoftmaxHead::CharNormalized { factor } => factor.dense.init_uniform(rng, factor_scale),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            SoftmaxHead::Full { weight, bias } => SoftmaxHead::Full {
                weight: Array2::zeros(weight.raw_dim()),
                bias: Array1::zeros(bias.raw_dim()),
            },
            SoftmaxHead::West { factor, bias } => SoftmaxHead::West {
                factor: factor.zeros_like(),
                bias: bias.as_ref().map(|b| Array1::zeros(b.raw_dim())),
            },
            SoftmaxHead::CharNormalized { factor } => SoftmaxHead::CharNormalized {
                factor: factor.zeros_like(),
            },
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "activation has {d} dims, head expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Word logits for a batch of activations (`N × d_s` → `N × V`).
    /// Not defined for the char-normalized head.
    pub fn logits(&self, h: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_dim(h.ncols())?;
        match self {
            SoftmaxHead::Full { weight, bias } => {
                let mut l = h.dot(&weight.t());
                l += bias;
                Ok(l)
            }
            SoftmaxHead::West { factor, bias } => {
                let mut l = factor.logits(h);
                if let Some(b) = bias {
                    l += b;
                }
                Ok(l)
            }
            SoftmaxHead::CharNormalized { .. } => Err(Error::InvalidConfig(
                "char-normalized head has no word-level logits".into(),
            )),
        }
    }

    /// Logits of the factorized head for one activation vector.
    pub fn west_logits(&self, h: ArrayView1<F>) -> Result<Array1<F>> {
        if self.mode() != HeadMode::West {
            return Err(Error::InvalidConfig("west_logits needs the west head".into()));
        }
        let l = self.logits(h.insert_axis(Axis(0)))?;
        Ok(l.row(0).to_owned())
    }

    /// `log P(w | h)` for every word.
    pub fn log_posterior(&self, h: ArrayView1<F>) -> Result<Array1<F>> {
        let l = self.logits(h.insert_axis(Axis(0)))?;
        log_softmax(l.row(0))
    }

    /// Per-position `log softmax` over real symbols `1..=k` (column 0, the
    /// pad, is set to -inf).
    fn char_tables(factor: &WestFactor<F>, h: ArrayView2<F>) -> Result<Vec<Array2<F>>> {
        let mut tables = factor.score_tables(h);
        for t in &mut tables {
            for mut row in t.rows_mut() {
                row[0] = F::neg_infinity();
                let norm = log_softmax(row.slice(ndarray::s![1..]))?;
                row.slice_mut(ndarray::s![1..]).assign(&norm);
            }
        }
        Ok(tables)
    }

    /// `Σ_i log P_i(c_i(w) | h)` over the code of `w`, `<eow>` included.
    pub fn char_normalized_log_prob(&self, h: ArrayView1<F>, w: usize) -> Result<F> {
        let SoftmaxHead::CharNormalized { factor } = self else {
            return Err(Error::InvalidConfig("needs the char-normalized head".into()));
        };
        self.check_dim(h.len())?;
        if w >= factor.vocab_size() {
            return Err(Error::IndexOutOfRange {
                index: w,
                size: factor.vocab_size(),
            });
        }
        let tables = Self::char_tables(factor, h.insert_axis(Axis(0)))?;
        Ok(Self::char_score(factor, &tables, 0, w))
    }

    fn char_score(factor: &WestFactor<F>, tables: &[Array2<F>], r: usize, w: usize) -> F {
        let cb = factor.sparse.codebook();
        cb.code(w).iter().enumerate().fold(F::zero(), |acc, (i, &c)| {
            let t = if tables.len() == 1 { &tables[0] } else { &tables[i] };
            acc + t[(r, c as usize)]
        })
    }

    /// Word-level scores for every word: `log P(w|h)` for normalized heads,
    /// the unnormalized char product for the char-normalized head.
    pub fn word_log_scores(&self, h: ArrayView1<F>) -> Result<Array1<F>> {
        match self {
            SoftmaxHead::CharNormalized { factor } => {
                let tables = Self::char_tables(factor, h.insert_axis(Axis(0)))?;
                Ok((0..factor.vocab_size()).map(|w| Self::char_score(factor, &tables, 0, w)).collect())
            }
            _ => self.log_posterior(h),
        }
    }

    /// `log P(target | h)` for each row of `h`.
    pub fn target_log_probs(&self, h: ArrayView2<F>, targets: &[usize]) -> Result<Vec<F>> {
        self.check_dim(h.ncols())?;
        match self {
            SoftmaxHead::CharNormalized { factor } => {
                let tables = Self::char_tables(factor, h)?;
                Ok(targets
                    .iter()
                    .enumerate()
                    .map(|(r, &w)| Self::char_score(factor, &tables, r, w))
                    .collect())
            }
            _ => {
                let l = self.logits(h)?;
                targets
                    .iter()
                    .enumerate()
                    .map(|(r, &w)| {
                        let row = l.row(r);
                        if row.iter().any(|v| !v.is_finite()) {
                            return Err(Error::NonFiniteLogits);
                        }
                        Ok(row[w] - log_sum_exp(row))
                    })
                    .collect()
            }
        }
    }

    /// Accumulates `scale · ∂(Σ_r -log P(target_r | h_r))` into `grad` and
    /// returns the summed negative log-likelihood together with `dh`.
    pub fn nll_backward(
        &self,
        h: ArrayView2<F>,
        targets: &[usize],
        scale: F,
        grad: &mut Self,
    ) -> Result<(f64, Array2<F>)> {
        self.check_dim(h.ncols())?;
        match (self, grad) {
            (SoftmaxHead::CharNormalized { factor }, SoftmaxHead::CharNormalized { factor: gf }) => {
                let tables = Self::char_tables(factor, h)?;
                let cb = factor.sparse.codebook();
                let mut nll = 0.0;
                // d(-log P)/dS_i = softmax_i - onehot(c_i) on positions the target uses
                let mut d_tables: Vec<Array2<F>> = tables.iter().map(|t| Array2::zeros(t.raw_dim())).collect();
                for (r, &w) in targets.iter().enumerate() {
                    nll -= Self::char_score(factor, &tables, r, w).f64();
                    for (i, &c) in cb.code(w).iter().enumerate() {
                        let ti = if tables.len() == 1 { 0 } else { i };
                        let lp = tables[ti].row(r);
                        let mut d = d_tables[ti].row_mut(r);
                        for j in 1..lp.len() {
                            d[j] += scale * lp[j].exp();
                        }
                        d[c as usize] -= scale;
                    }
                }
                let dh = position_tables_backward(factor, h, &d_tables, gf);
                Ok((nll, dh))
            }
            (SoftmaxHead::Full { weight, .. }, SoftmaxHead::Full { weight: gw, bias: gb }) => {
                let (nll, dl) = softmax_xent(self.logits(h)?, targets, scale)?;
                gw.scaled_add(F::one(), &dl.t().dot(&h));
                *gb += &dl.sum_axis(Axis(0));
                Ok((nll, dl.dot(weight)))
            }
            (SoftmaxHead::West { factor, .. }, SoftmaxHead::West { factor: gf, bias: gb }) => {
                let (nll, dl) = softmax_xent(self.logits(h)?, targets, scale)?;
                if let Some(gb) = gb {
                    *gb += &dl.sum_axis(Axis(0));
                }
                let dh = factor.logits_backward(h, dl.view(), gf);
                Ok((nll, dh))
            }
            _ => Err(Error::ShapeMismatch("gradient head has a different mode".into())),
        }
    }
}

/// Softmax cross-entropy: returns the summed NLL and `scale · (p - onehot)`.
fn softmax_xent<F: Real>(mut logits: Array2<F>, targets: &[usize], scale: F) -> Result<(f64, Array2<F>)> {
    let mut nll = 0.0;
    for (r, &w) in targets.iter().enumerate() {
        let mut row = logits.row_mut(r);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLogits);
        }
        let lse = log_sum_exp(row.view());
        nll -= (row[w] - lse).f64();
        row.mapv_inplace(|v| scale * (v - lse).exp());
        row[w] -= scale;
    }
    Ok((nll, logits))
}

/// Backward through `S_i = h · E^iᵀ` for band position tables.
fn position_tables_backward<F: Real>(
    factor: &WestFactor<F>,
    h: ArrayView2<F>,
    d_tables: &[Array2<F>],
    grad: &mut WestFactor<F>,
) -> Array2<F> {
    let mut dh = Array2::zeros(h.raw_dim());
    for (i, dt) in d_tables.iter().enumerate() {
        let mut dt = dt.clone();
        dt.column_mut(0).fill(F::zero());
        *grad.dense.sub_mut(i) += &dt.t().dot(&h);
        dh += &dt.dot(factor.dense.sub(i));
    }
    dh
}

impl<F: Real> Parameters<F> for SoftmaxHead<F> {
    fn params(&self) -> Vec<Param<'_, F>> {
        let mut out = Vec::new();
        match self {
            SoftmaxHead::Full { weight, bias } => {
                out.push(Param {
                    name: "soft.weight".into(),
                    dims: weight.shape().to_vec(),
                    data: weight.as_slice().expect("standard layout"),
                    frozen: Frozen::Nothing,
                });
                out.push(Param {
                    name: "soft.bias".into(),
                    dims: bias.shape().to_vec(),
                    data: bias.as_slice().expect("standard layout"),
                    frozen: Frozen::Nothing,
                });
            }
            SoftmaxHead::West { factor, bias } => {
                for mut p in factor.params() {
                    p.name = format!("soft.{}", p.name);
                    out.push(p);
                }
                if let Some(b) = bias {
                    out.push(Param {
                        name: "soft.bias".into(),
                        dims: b.shape().to_vec(),
                        data: b.as_slice().expect("standard layout"),
                        frozen: Frozen::Nothing,
                    });
                }
            }
            SoftmaxHead::CharNormalized { factor } => {
                for mut p in factor.params() {
                    p.name = format!("soft.{}", p.name);
                    out.push(p);
                }
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_, F>> {
        let mut out = Vec::new();
        match self {
            SoftmaxHead::Full { weight, bias } => {
                out.push(ParamMut {
                    name: "soft.weight".into(),
                    dims: weight.shape().to_vec(),
                    data: weight.as_slice_mut().expect("standard layout"),
                    frozen: Frozen::Nothing,
                });
                out.push(ParamMut {
                    name: "soft.bias".into(),
                    dims: bias.shape().to_vec(),
                    data: bias.as_slice_mut().expect("standard layout"),
                    frozen: Frozen::Nothing,
                });
            }
            SoftmaxHead::West { factor, bias } => {
                for mut p in factor.params_mut() {
                    p.name = format!("soft.{}", p.name);
                    out.push(p);
                }
                if let Some(b) = bias {
                    out.push(ParamMut {
                        name: "soft.bias".into(),
                        dims: b.shape().to_vec(),
                        data: b.as_slice_mut().expect("standard layout"),
                        frozen: Frozen::Nothing,
                    });
                }
            }
            SoftmaxHead::CharNormalized { factor } => {
                for mut p in factor.params_mut() {
                    p.name = format!("soft.{}", p.name);
                    out.push(p);
                }
            }
        }
        out
    }
}
