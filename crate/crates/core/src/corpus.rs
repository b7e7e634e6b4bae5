//! Corpus ingestion: frequency-ordered vocabularies, sub-unit alphabets and
//! word-index streams.
//!
//! Corpora are one sentence per line with whitespace-separated tokens. No
//! normalization is applied, so identical bytes always give identical streams.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";
pub const PAD: &str = "<pad>";
pub const EOW: &str = "<eow>";

/// Word to index map. Corpus words come first, by descending frequency with
/// lexicographic tie-breaking; `<eos>` and `<unk>` follow at the end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index_of: HashMap<String, usize>,
    frequencies: Vec<u64>,
    eos: usize,
    unk: usize,
}

impl Vocabulary {
    /// Assembles a vocabulary from ordinary words with their counts plus the
    /// reserved counts. Words are re-sorted into canonical order.
    pub fn from_counts(
        mut counted: Vec<(String, u64)>,
        eos_count: u64,
        unk_count: u64,
    ) -> Result<Self> {
        counted.retain(|(w, _)| w != EOS && w != UNK);
        counted.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut words: Vec<String> = Vec::with_capacity(counted.len() + 2);
        let mut frequencies = Vec::with_capacity(counted.len() + 2);
        for (w, c) in counted {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::MalformedVocabulary(format!("invalid token {w:?}")));
            }
            words.push(w);
            frequencies.push(c);
        }
        let eos = words.len();
        words.push(EOS.to_string());
        frequencies.push(eos_count);
        let unk = words.len();
        words.push(UNK.to_string());
        frequencies.push(unk_count);

        let mut index_of = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index_of.insert(w.clone(), i).is_some() {
                return Err(Error::MalformedVocabulary(format!("duplicate token {w:?}")));
            }
        }
        Ok(Self {
            words,
            index_of,
            frequencies,
            eos,
            unk,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.frequencies
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.index_of.get(token).copied()
    }

    pub fn eos(&self) -> usize {
        self.eos
    }

    pub fn unk(&self) -> usize {
        self.unk
    }

    pub fn is_reserved(&self, index: usize) -> bool {
        index == self.eos || index == self.unk
    }

    /// Number of ordinary (non-reserved) words; they occupy `0..ordinary_len()`.
    pub fn ordinary_len(&self) -> usize {
        self.words.len() - 2
    }

    /// Serializes as `#` header lines followed by one token per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# west-vocab 1\n");
        let _ = writeln!(out, "# size {}", self.words.len());
        out.push_str("# counts");
        for c in &self.frequencies {
            let _ = write!(out, " {c}");
        }
        out.push('\n');
        for w in &self.words {
            out.push_str(w);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::MalformedVocabulary(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("# west-vocab 1") {
            return Err(bad("missing header"));
        }
        let size: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("# size "))
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("missing size line"))?;
        let counts: Vec<u64> = lines
            .next()
            .and_then(|l| l.strip_prefix("# counts"))
            .ok_or_else(|| bad("missing counts line"))?
            .split_whitespace()
            .map(|c| c.parse().map_err(|_| bad("bad count")))
            .collect::<Result<_>>()?;
        let words: Vec<&str> = lines.collect();
        if words.len() != size || counts.len() != size || size < 2 {
            return Err(bad("size does not match contents"));
        }
        if words[size - 2] != EOS || words[size - 1] != UNK {
            return Err(bad("reserved tokens must close the list"));
        }
        let counted = words[..size - 2]
            .iter()
            .zip(&counts)
            .map(|(w, &c)| (w.to_string(), c))
            .collect();
        let vocab = Self::from_counts(counted, counts[size - 2], counts[size - 1])?;
        if vocab.words.iter().zip(&words).any(|(a, b)| a != b) {
            return Err(bad("tokens not in canonical order"));
        }
        Ok(vocab)
    }
}

/// Builds a vocabulary keeping the `max_size` most frequent tokens. Literal
/// `<unk>`/`<eos>` tokens in the corpus count toward the reserved entries.
pub fn build_vocabulary(corpus_text: &str, max_size: usize) -> Result<Vocabulary> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let mut lines = 0u64;
    for line in corpus_text.lines() {
        lines += 1;
        for tok in line.split_whitespace() {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut unk_count = counts.remove(UNK).unwrap_or(0);
    let eos_count = lines + counts.remove(EOS).unwrap_or(0);
    let mut counted: Vec<(String, u64)> =
        counts.into_iter().map(|(w, c)| (w.to_string(), c)).collect();
    counted.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if counted.len() > max_size {
        unk_count += counted[max_size..].iter().map(|(_, c)| c).sum::<u64>();
        counted.truncate(max_size);
    }
    Vocabulary::from_counts(counted, eos_count, unk_count)
}

/// Maps each token to its index (or `<unk>`) and appends `<eos>` per line.
pub fn encode_stream(vocab: &Vocabulary, text: &str) -> Vec<usize> {
    let mut out = Vec::new();
    for line in text.lines() {
        for tok in line.split_whitespace() {
            out.push(vocab.index(tok).unwrap_or(vocab.unk()));
        }
        out.push(vocab.eos());
    }
    out
}

/// Sub-unit inventory used for language codes. Index 0 is the pad symbol;
/// real units take `1..=len()`, with `<eow>` (when present) last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubUnitAlphabet {
    units: Vec<String>,
    index_of: HashMap<String, usize>,
    eow: Option<usize>,
    max_unit_chars: usize,
}

impl SubUnitAlphabet {
    /// Alphabet over explicit units (e.g. word pieces). Spelling uses greedy
    /// longest match.
    pub fn from_units<I, S>(units: I, with_eow: bool) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut list: Vec<String> = Vec::new();
        let mut index_of = HashMap::new();
        for u in units {
            let u = u.into();
            if u.is_empty() || u == PAD || u == EOW {
                return Err(Error::InvalidConfig(format!("invalid sub-unit {u:?}")));
            }
            if index_of.insert(u.clone(), list.len() + 1).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate sub-unit {u:?}")));
            }
            list.push(u);
        }
        let max_unit_chars = list.iter().map(|u| u.chars().count()).max().unwrap_or(0);
        let eow = if with_eow {
            list.push(EOW.to_string());
            index_of.insert(EOW.to_string(), list.len());
            Some(list.len())
        } else {
            None
        };
        Ok(Self {
            units: list,
            index_of,
            eow,
            max_unit_chars,
        })
    }

    /// Number of real units (pad excluded, `<eow>` included when present).
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Unit at `index`; 0 is the pad.
    pub fn unit(&self, index: usize) -> &str {
        if index == 0 {
            PAD
        } else {
            &self.units[index - 1]
        }
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn index(&self, unit: &str) -> Option<usize> {
        self.index_of.get(unit).copied()
    }

    pub fn eow(&self) -> Option<usize> {
        self.eow
    }

    pub fn without_eow(&self) -> Self {
        let n = self.units.len() - usize::from(self.eow.is_some());
        Self::from_units(self.units[..n].iter().cloned(), false).expect("units already validated")
    }

    pub fn with_eow(&self) -> Self {
        if self.eow.is_some() {
            return self.clone();
        }
        Self::from_units(self.units.iter().cloned(), true).expect("units already validated")
    }

    /// Decomposes `word` into unit indices by greedy longest match. `<eow>`
    /// is never matched inside a word.
    pub fn spell(&self, word: &str) -> Option<Vec<usize>> {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < chars.len() {
            let start = chars[pos].0;
            let longest = self.max_unit_chars.min(chars.len() - pos);
            let mut matched = None;
            for len in (1..=longest).rev() {
                let end = chars.get(pos + len).map_or(word.len(), |c| c.0);
                if let Some(&idx) = self.index_of.get(&word[start..end]) {
                    if Some(idx) != self.eow {
                        matched = Some((idx, len));
                        break;
                    }
                }
            }
            let (idx, len) = matched?;
            out.push(idx);
            pos += len;
        }
        Some(out)
    }
}

/// Collects every character of every vocabulary word (reserved tokens are
/// spelled literally), ordered by code point, plus `<eow>`.
pub fn extract_characters(vocab: &Vocabulary) -> SubUnitAlphabet {
    let chars: BTreeSet<char> = vocab.words().iter().flat_map(|w| w.chars()).collect();
    SubUnitAlphabet::from_units(chars.into_iter().map(String::from), true)
        .expect("characters are unique and non-empty")
}
