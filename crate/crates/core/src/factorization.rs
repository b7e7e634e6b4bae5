//! The factorization `E = C × E^c`.
//!
//! `C` ([`SparseFactor`]) holds at most `n` weighted one-hot entries per row,
//! one per code position, at column `i·k_eff + (c_i(w) - 1)`. `E^c`
//! ([`DenseFactor`]) is either block diagonal (`n` blocks of `k_eff × d/n`,
//! lookup is a weighted concatenation) or a band (`n` stacked `k_eff × d`
//! matrices, lookup is a weighted sum).
//!
//! Sub-matrices are stored with one extra leading row for the pad symbol.
//! That row is zero, never trains, and pairs with `λ = 0`, so codes shorter
//! than `n` go through the same arithmetic as full-length ones.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut1};
use rand::Rng;

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::params::{Frozen, Param, ParamMut, Parameters};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Structure {
    BlockDiagonal,
    Band,
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Structure::BlockDiagonal => "block_diagonal",
            Structure::Band => "band",
        })
    }
}

impl FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block_diagonal" => Ok(Structure::BlockDiagonal),
            "band" => Ok(Structure::Band),
            other => Err(Error::InvalidConfig(format!("unknown structure {other:?}"))),
        }
    }
}

/// The sparse factor `C`: a fixed codebook plus per-(word, position) weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFactor<F> {
    codebook: Arc<Codebook>,
    weighted: bool,
    /// `V × n`; zero at pad positions, one elsewhere when unweighted.
    lambda: Array2<F>,
}

impl<F: Real> SparseFactor<F> {
    pub fn new(codebook: Arc<Codebook>, weighted: bool) -> Self {
        let (v, n) = (codebook.vocab_size(), codebook.n());
        let lambda = Array2::from_shape_fn((v, n), |(w, i)| {
            if i < codebook.code_len(w) {
                F::one()
            } else {
                F::zero()
            }
        });
        Self {
            codebook,
            weighted,
            lambda,
        }
    }

    /// Weighted factor with explicit weights; pad positions are forced to 0.
    pub fn with_weights(codebook: Arc<Codebook>, mut lambda: Array2<F>) -> Result<Self> {
        if lambda.dim() != (codebook.vocab_size(), codebook.n()) {
            return Err(Error::ShapeMismatch(format!(
                "lambda is {:?}, codebook needs {:?}",
                lambda.dim(),
                (codebook.vocab_size(), codebook.n())
            )));
        }
        for w in 0..codebook.vocab_size() {
            for i in codebook.code_len(w)..codebook.n() {
                lambda[(w, i)] = F::zero();
            }
        }
        Ok(Self {
            codebook,
            weighted: true,
            lambda,
        })
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn codebook_arc(&self) -> &Arc<Codebook> {
        &self.codebook
    }

    pub fn weighted(&self) -> bool {
        self.weighted
    }

    pub fn lambda(&self) -> &Array2<F> {
        &self.lambda
    }

    pub fn weight(&self, w: usize, i: usize) -> F {
        self.lambda[(w, i)]
    }

    pub fn vocab_size(&self) -> usize {
        self.codebook.vocab_size()
    }

    fn pad_mask(&self) -> Vec<bool> {
        let cb = &self.codebook;
        (0..cb.vocab_size())
            .flat_map(|w| (0..cb.n()).map(move |i| i >= cb.code_len(w)))
            .collect()
    }

    fn zeros_like(&self) -> Self {
        Self {
            codebook: Arc::clone(&self.codebook),
            weighted: self.weighted,
            lambda: Array2::zeros(self.lambda.dim()),
        }
    }
}

/// The dense factor `E^c`, stored as its sub-unit matrices `E^1..E^n`
/// (a single shared matrix when tied).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFactor<F> {
    structure: Structure,
    n: usize,
    k_eff: usize,
    width: usize,
    tied: bool,
    /// Each `(k_eff + 1) × width`; row 0 is the pad.
    mats: Vec<Array2<F>>,
}

impl<F: Real> DenseFactor<F> {
    /// Zero-filled factor producing embeddings of dimension `d`.
    pub fn zeros(structure: Structure, k_eff: usize, n: usize, d: usize, tied: bool) -> Result<Self> {
        if n == 0 || k_eff == 0 || d == 0 {
            return Err(Error::ShapeMismatch(format!(
                "dense factor needs positive sizes, got k={k_eff} n={n} d={d}"
            )));
        }
        let width = match structure {
            Structure::BlockDiagonal => {
                if !d.is_multiple_of(n) {
                    return Err(Error::ShapeMismatch(format!(
                        "block-diagonal structure needs n | d, got n={n} d={d}"
                    )));
                }
                d / n
            }
            Structure::Band => d,
        };
        let count = if tied { 1 } else { n };
        Ok(Self {
            structure,
            n,
            k_eff,
            width,
            tied,
            mats: vec![Array2::zeros((k_eff + 1, width)); count],
        })
    }

    /// Builds a factor from sub-unit matrices without the pad row (each
    /// `k_eff × width`). Pass one matrix for a tied factor.
    pub fn from_sub_matrices(structure: Structure, n: usize, subs: &[Array2<F>]) -> Result<Self> {
        let tied = subs.len() == 1 && n > 1;
        if !tied && subs.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "expected 1 or {n} sub-matrices, got {}",
                subs.len()
            )));
        }
        let (k_eff, width) = subs[0].dim();
        if subs.iter().any(|m| m.dim() != (k_eff, width)) {
            return Err(Error::ShapeMismatch("sub-matrices differ in shape".into()));
        }
        let d = match structure {
            Structure::BlockDiagonal => width * n,
            Structure::Band => width,
        };
        let mut df = Self::zeros(structure, k_eff, n, d, tied)?;
        for (dst, src) in df.mats.iter_mut().zip(subs) {
            dst.slice_mut(s![1.., ..]).assign(src);
        }
        Ok(df)
    }

    /// Fills every non-pad entry uniformly from `(-scale, scale)`.
    pub fn init_uniform<R: Rng>(&mut self, rng: &mut R, scale: f64) {
        for m in &mut self.mats {
            for v in m.slice_mut(s![1.., ..]).iter_mut() {
                *v = F::of(rng.gen_range(-scale..scale));
            }
        }
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_eff(&self) -> usize {
        self.k_eff
    }

    pub fn tied(&self) -> bool {
        self.tied
    }

    /// Columns of each sub-matrix.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Embedding dimension `d`.
    pub fn dim(&self) -> usize {
        match self.structure {
            Structure::BlockDiagonal => self.width * self.n,
            Structure::Band => self.width,
        }
    }

    /// Sub-matrix for position `i` (0-based), pad row included.
    pub fn sub(&self, i: usize) -> &Array2<F> {
        &self.mats[if self.tied { 0 } else { i }]
    }

    pub fn sub_mut(&mut self, i: usize) -> &mut Array2<F> {
        let j = if self.tied { 0 } else { i };
        &mut self.mats[j]
    }

    pub fn mats(&self) -> &[Array2<F>] {
        &self.mats
    }

    /// Columns of the embedding written by position `i`.
    fn out_range(&self, i: usize) -> std::ops::Range<usize> {
        match self.structure {
            Structure::BlockDiagonal => i * self.width..(i + 1) * self.width,
            Structure::Band => 0..self.width,
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            mats: self.mats.iter().map(|m| Array2::zeros(m.dim())).collect(),
            ..self.clone()
        }
    }
}

/// Trainable sub-unit parameters in closed form (pad row excluded):
/// block diagonal `k·d` (tied `k·d/n`), band `k·d·n` (tied `k·d`).
pub fn dense_param_count<F: Real>(df: &DenseFactor<F>) -> usize {
    dense_param_count_for(df.structure, df.k_eff, df.n, df.dim(), df.tied)
}

pub fn dense_param_count_for(structure: Structure, k: usize, n: usize, d: usize, tied: bool) -> usize {
    let untied = match structure {
        Structure::BlockDiagonal => k * d,
        Structure::Band => k * d * n,
    };
    if tied {
        untied / n
    } else {
        untied
    }
}

/// Scalars actually stored, including the frozen pad rows.
pub fn dense_stored_count<F: Real>(df: &DenseFactor<F>) -> usize {
    df.mats.iter().map(|m| m.len()).sum()
}

fn check_compatible<F: Real>(sf: &SparseFactor<F>, df: &DenseFactor<F>) -> Result<()> {
    let cb = sf.codebook();
    if cb.k_eff() != df.k_eff || cb.n() != df.n {
        return Err(Error::ShapeMismatch(format!(
            "codebook has k={} n={}, dense factor has k={} n={}",
            cb.k_eff(),
            cb.n(),
            df.k_eff,
            df.n
        )));
    }
    Ok(())
}

fn check_word<F: Real>(sf: &SparseFactor<F>, w: usize) -> Result<()> {
    if w >= sf.vocab_size() {
        return Err(Error::IndexOutOfRange {
            index: w,
            size: sf.vocab_size(),
        });
    }
    Ok(())
}

/// Writes row `w` of `C × E^c` into `out` (length `d`), overwriting it.
pub fn lookup_into<F: Real>(sf: &SparseFactor<F>, df: &DenseFactor<F>, w: usize, mut out: ArrayViewMut1<F>) {
    out.fill(F::zero());
    let code = sf.codebook().code(w);
    for (i, &c) in code.iter().enumerate() {
        let row = df.sub(i).row(c as usize);
        let mut dst = out.slice_mut(s![df.out_range(i)]);
        match (df.structure, sf.weighted) {
            (Structure::BlockDiagonal, false) => dst.assign(&row),
            (Structure::Band, false) => dst += &row,
            (_, true) => dst.scaled_add(sf.lambda[(w, i)], &row),
        }
    }
}

/// Weighted concatenation of the selected sub-unit rows.
pub fn lookup_concat<F: Real>(sf: &SparseFactor<F>, df: &DenseFactor<F>, w: usize) -> Result<Array1<F>> {
    if df.structure != Structure::BlockDiagonal {
        return Err(Error::ShapeMismatch("concatenation lookup needs a block-diagonal factor".into()));
    }
    lookup(sf, df, w)
}

/// Weighted sum of the selected sub-unit rows.
pub fn lookup_sum<F: Real>(sf: &SparseFactor<F>, df: &DenseFactor<F>, w: usize) -> Result<Array1<F>> {
    if df.structure != Structure::Band {
        return Err(Error::ShapeMismatch("sum lookup needs a band factor".into()));
    }
    lookup(sf, df, w)
}

/// Row `w` of `E`, dispatching on the dense structure.
pub fn lookup<F: Real>(sf: &SparseFactor<F>, df: &DenseFactor<F>, w: usize) -> Result<Array1<F>> {
    check_compatible(sf, df)?;
    check_word(sf, w)?;
    let mut out = Array1::zeros(df.dim());
    lookup_into(sf, df, w, out.view_mut());
    Ok(out)
}

/// `C` as a dense `V × n·k_eff` matrix.
pub fn materialize_sparse<F: Real>(sf: &SparseFactor<F>) -> Array2<F> {
    let cb = sf.codebook();
    let k = cb.k_eff();
    let mut c = Array2::zeros((cb.vocab_size(), cb.n() * k));
    for w in 0..cb.vocab_size() {
        for (i, &sym) in cb.code(w).iter().enumerate() {
            c[(w, i * k + sym as usize - 1)] = sf.lambda[(w, i)];
        }
    }
    c
}

/// `E^c` as a dense `n·k_eff × d` matrix.
pub fn materialize_dense<F: Real>(df: &DenseFactor<F>) -> Array2<F> {
    let k = df.k_eff;
    let mut e = Array2::zeros((df.n * k, df.dim()));
    for i in 0..df.n {
        let block = df.sub(i).slice(s![1.., ..]);
        e.slice_mut(s![i * k..(i + 1) * k, df.out_range(i)]).assign(&block);
    }
    e
}

/// The full `V × d` matrix by explicit dense product; a testing oracle.
pub fn reconstruct<F: Real>(sf: &SparseFactor<F>, df: &DenseFactor<F>) -> Result<Array2<F>> {
    check_compatible(sf, df)?;
    Ok(materialize_sparse(sf).dot(&materialize_dense(df)))
}

/// A sparse and dense factor pair used as an embedding table or softmax
/// weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WestFactor<F> {
    pub sparse: SparseFactor<F>,
    pub dense: DenseFactor<F>,
}

impl<F: Real> WestFactor<F> {
    pub fn new(sparse: SparseFactor<F>, dense: DenseFactor<F>) -> Result<Self> {
        check_compatible(&sparse, &dense)?;
        Ok(Self { sparse, dense })
    }

    pub fn vocab_size(&self) -> usize {
        self.sparse.vocab_size()
    }

    pub fn dim(&self) -> usize {
        self.dense.dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            sparse: self.sparse.zeros_like(),
            dense: self.dense.zeros_like(),
        }
    }

    /// Accumulates the gradient of an embedding row into `grad`.
    pub fn lookup_backward(&self, w: usize, d_out: &[F], grad: &mut Self) {
        let code = self.sparse.codebook().code(w);
        for (i, &c) in code.iter().enumerate() {
            let range = self.dense.out_range(i);
            let lam = self.sparse.lambda[(w, i)];
            let g = &d_out[range];
            let mut grow = grad.dense.sub_mut(i).row_mut(c as usize);
            for (gr, &gv) in grow.iter_mut().zip(g) {
                *gr += lam * gv;
            }
            if self.sparse.weighted {
                let row = self.dense.sub(i).row(c as usize);
                let dot = row.iter().zip(g).fold(F::zero(), |acc, (&a, &b)| acc + a * b);
                grad.sparse.lambda[(w, i)] += dot;
            }
        }
    }

    /// Per-position score tables `S_i = h_i · E^iᵀ` (`N × (k_eff+1)`), where
    /// `h_i` is the whole of `h` (band) or its `i`-th block. Tied band
    /// factors share a single table.
    pub fn score_tables(&self, h: ArrayView2<F>) -> Vec<Array2<F>> {
        let df = &self.dense;
        if df.tied && df.structure == Structure::Band {
            return vec![h.dot(&df.mats[0].t())];
        }
        (0..df.n)
            .map(|i| h.slice(s![.., df.out_range(i)]).dot(&df.sub(i).t()))
            .collect()
    }

    fn table<'a>(&self, tables: &'a [Array2<F>], i: usize) -> &'a Array2<F> {
        if tables.len() == 1 {
            &tables[0]
        } else {
            &tables[i]
        }
    }

    /// Logits `h · Eᵀ` (`N × V`) computed from score tables, never forming `E`.
    pub fn logits(&self, h: ArrayView2<F>) -> Array2<F> {
        let tables = self.score_tables(h);
        let cb = self.sparse.codebook();
        let (rows, v, n) = (h.nrows(), cb.vocab_size(), cb.n());
        let lambda = self.sparse.lambda.as_slice().expect("standard layout");
        let mut out = Array2::zeros((rows, v));
        for r in 0..rows {
            let trow: Vec<&[F]> = (0..cb.n())
                .map(|i| {
                    self.table(&tables, i)
                        .row(r)
                        .to_slice()
                        .expect("score tables are contiguous")
                })
                .collect();
            let mut orow = out.row_mut(r);
            let orow = orow.as_slice_mut().expect("contiguous");
            // Pad symbols hit column 0 of each table, which is exactly zero.
            let codes = cb.padded_all().chunks_exact(n);
            if self.sparse.weighted {
                for ((o, code), lam) in orow.iter_mut().zip(codes).zip(lambda.chunks_exact(n)) {
                    let mut acc = F::zero();
                    for i in 0..n {
                        acc += lam[i] * trow[i][code[i] as usize];
                    }
                    *o = acc;
                }
            } else {
                for (o, code) in orow.iter_mut().zip(codes) {
                    let mut acc = F::zero();
                    for i in 0..n {
                        acc += trow[i][code[i] as usize];
                    }
                    *o = acc;
                }
            }
        }
        out
    }

    /// Backpropagates `d_logits` (`N × V`) into `grad` and returns `dh`.
    pub fn logits_backward(&self, h: ArrayView2<F>, d_logits: ArrayView2<F>, grad: &mut Self) -> Array2<F> {
        let df = &self.dense;
        let cb = self.sparse.codebook();
        let rows = h.nrows();
        let weighted = self.sparse.weighted;
        let tables = if weighted { self.score_tables(h) } else { Vec::new() };
        let shared = df.tied && df.structure == Structure::Band;
        let n_tables = if shared { 1 } else { df.n };
        let mut d_tables = vec![Array2::<F>::zeros((rows, df.k_eff + 1)); n_tables];
        let lambda = self.sparse.lambda.as_slice().expect("standard layout");
        let n = df.n;
        for r in 0..rows {
            let mut dts: Vec<&mut [F]> = d_tables
                .iter_mut()
                .map(|t| t.row_mut(r).into_slice().expect("contiguous"))
                .collect();
            let dl = d_logits.row(r);
            let codes = cb.padded_all().chunks_exact(n);
            if weighted {
                let ts: Vec<&[F]> = tables.iter().map(|t| t.row(r).to_slice().expect("contiguous")).collect();
                let glam = grad.sparse.lambda.as_slice_mut().expect("standard layout");
                for (((&g, code), lam), glam) in dl.iter().zip(codes).zip(lambda.chunks_exact(n)).zip(glam.chunks_exact_mut(n)) {
                    for i in 0..n {
                        let t = if shared { 0 } else { i };
                        let c = code[i] as usize;
                        dts[t][c] += g * lam[i];
                        glam[i] += g * ts[t][c];
                    }
                }
            } else {
                for (&g, code) in dl.iter().zip(codes) {
                    for (i, &c) in code.iter().enumerate() {
                        let t = if shared { 0 } else { i };
                        dts[t][c as usize] += g;
                    }
                }
            }
        }
        let mut dh = Array2::zeros(h.raw_dim());
        for (t, dt) in d_tables.iter_mut().enumerate() {
            dt.column_mut(0).fill(F::zero());
            // a shared table stands for every position of a tied band
            let i = t;
            let range = df.out_range(i);
            let h_i = h.slice(s![.., range.clone()]);
            let g = dt.t().dot(&h_i);
            *grad.dense.sub_mut(i) += &g;
            let dhi = dt.dot(df.sub(i));
            let mut dst = dh.slice_mut(s![.., range]);
            dst += &dhi;
        }
        dh
    }
}

impl<F: Real> Parameters<F> for WestFactor<F> {
    fn params(&self) -> Vec<Param<'_, F>> {
        let mut out = Vec::new();
        for (j, m) in self.dense.mats.iter().enumerate() {
            out.push(Param {
                name: format!("sub.{j}"),
                dims: m.shape().to_vec(),
                data: m.as_slice().expect("standard layout"),
                frozen: Frozen::PadRow { width: self.dense.width },
            });
        }
        if self.sparse.weighted {
            out.push(Param {
                name: "lambda".into(),
                dims: self.sparse.lambda.shape().to_vec(),
                data: self.sparse.lambda.as_slice().expect("standard layout"),
                frozen: Frozen::Entries(self.sparse.pad_mask()),
            });
        }
        out
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_, F>> {
        let width = self.dense.width;
        let mask = self.sparse.weighted.then(|| self.sparse.pad_mask());
        let mut out = Vec::new();
        for (j, m) in self.dense.mats.iter_mut().enumerate() {
            out.push(ParamMut {
                name: format!("sub.{j}"),
                dims: m.shape().to_vec(),
                data: m.as_slice_mut().expect("standard layout"),
                frozen: Frozen::PadRow { width },
            });
        }
        if let Some(mask) = mask {
            out.push(ParamMut {
                name: "lambda".into(),
                dims: self.sparse.lambda.shape().to_vec(),
                data: self.sparse.lambda.as_slice_mut().expect("standard layout"),
                frozen: Frozen::Entries(mask),
            });
        }
        out
    }
}
