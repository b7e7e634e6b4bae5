//! Closed-form trainable parameter counts per component.

use std::fmt;

use crate::error::Result;
use crate::factorization::dense_param_count_for;
use crate::model::{EmbeddingKind, HeadMode, LstmLayer, ModelConfig, WestSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamReport {
    pub emb: usize,
    pub lstm: usize,
    pub soft: usize,
}

impl ParamReport {
    pub fn total(&self) -> usize {
        self.emb + self.lstm + self.soft
    }
}

fn west_count(spec: &WestSpec, vocab: usize, d: usize) -> usize {
    let lambda = if spec.weighted { vocab * spec.n } else { 0 };
    dense_param_count_for(spec.structure, spec.k_eff(), spec.n, d, spec.tied) + lambda
}

/// Counts from shapes alone. Sparse weights are counted as `V·n` even when
/// some positions are padding.
pub fn param_report(config: &ModelConfig) -> Result<ParamReport> {
    config.validate()?;
    let v = config.vocab_size;
    let emb = match config.embedding {
        EmbeddingKind::Full => v * config.embed_dim,
        EmbeddingKind::West => west_count(&config.emb_west, v, config.embed_dim),
    };
    let mut lstm = 0;
    let mut d_in = config.embed_dim;
    for _ in 0..config.layers {
        lstm += LstmLayer::<f32>::param_count(d_in, config.hidden, config.proj);
        d_in = config.softmax_dim();
    }
    let d_s = config.softmax_dim();
    let soft = match config.head {
        HeadMode::Full => v * d_s + v,
        HeadMode::West => west_count(&config.soft_west, v, d_s) + if config.soft_bias { v } else { 0 },
        HeadMode::CharNormalized => west_count(&config.soft_west, v, d_s),
    };
    Ok(ParamReport { emb, lstm, soft })
}

/// Millions with two decimals.
pub fn millions(n: usize) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}

fn ratio(base: usize, x: usize) -> String {
    if x == 0 {
        "inf".into()
    } else {
        format!("{:.1}x", base as f64 / x as f64)
    }
}

/// A report side by side with a baseline.
pub struct Comparison<'a> {
    pub name: &'a str,
    pub model: ParamReport,
    pub baseline: ParamReport,
}

impl fmt::Display for Comparison<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (m, b) = (&self.model, &self.baseline);
        writeln!(f, "{:<10}{:>14}{:>14}{:>14}{:>14}", "", "Emb", "LSTM", "Soft", "Total")?;
        writeln!(
            f,
            "{:<10}{:>14}{:>14}{:>14}{:>14}",
            "model",
            m.emb,
            m.lstm,
            m.soft,
            m.total()
        )?;
        writeln!(
            f,
            "{:<10}{:>14}{:>14}{:>14}{:>14}",
            "",
            millions(m.emb),
            millions(m.lstm),
            millions(m.soft),
            millions(m.total())
        )?;
        writeln!(
            f,
            "{:<10}{:>14}{:>14}{:>14}{:>14}",
            self.name,
            millions(b.emb),
            millions(b.lstm),
            millions(b.soft),
            millions(b.total())
        )?;
        write!(
            f,
            "{:<10}{:>14}{:>14}{:>14}{:>14}",
            "ratio",
            ratio(b.emb, m.emb),
            ratio(b.lstm, m.lstm),
            ratio(b.soft, m.soft),
            ratio(b.total(), m.total())
        )
    }
}
