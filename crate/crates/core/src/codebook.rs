//! Codebooks assign every word a short sequence of symbols over `1..=k`. The
//! sequences fix the nonzero pattern of the sparse factor.
//!
//! Symbol 0 is reserved as padding: codes shorter than `n` are stored padded
//! with zeros on the right, and the pad never appears inside a code.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{SubUnitAlphabet, Vocabulary};
use crate::error::{Error, Result};

/// Rejection-sampling retries allowed per word before giving up.
pub const MAX_RETRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodeKind {
    Random,
    Language,
    Hybrid,
}

impl fmt::Display for CodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodeKind::Random => "random",
            CodeKind::Language => "language",
            CodeKind::Hybrid => "hybrid",
        })
    }
}

impl FromStr for CodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(CodeKind::Random),
            "language" => Ok(CodeKind::Language),
            "hybrid" => Ok(CodeKind::Hybrid),
            other => Err(Error::InvalidConfig(format!("unknown coding kind {other:?}"))),
        }
    }
}

/// Input-side and output-side codebooks of a model.
pub type CodebookPair = (Option<Arc<Codebook>>, Option<Arc<Codebook>>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    kind: CodeKind,
    k: usize,
    n: usize,
    t: usize,
    seed: u64,
    /// `V × n`, row-major, zero-padded.
    symbols: Vec<u32>,
    lens: Vec<u16>,
}

impl Codebook {
    /// Builds a codebook from explicit codes, checking symbol range, lengths
    /// and unique decodability.
    pub fn from_codes(
        kind: CodeKind,
        k: usize,
        n: usize,
        t: usize,
        seed: u64,
        codes: &[Vec<u32>],
    ) -> Result<Self> {
        if n == 0 || n > u16::MAX as usize {
            return Err(Error::MalformedCodebook(format!("code length {n}")));
        }
        let k_eff = k + t;
        let mut symbols = vec![0u32; codes.len() * n];
        let mut lens = Vec::with_capacity(codes.len());
        let mut seen: HashMap<&[u32], usize> = HashMap::with_capacity(codes.len());
        for (w, code) in codes.iter().enumerate() {
            if code.is_empty() || code.len() > n {
                return Err(Error::MalformedCodebook(format!(
                    "word {w} has code length {}",
                    code.len()
                )));
            }
            if let Some(&s) = code.iter().find(|&&s| s == 0 || s as usize > k_eff) {
                return Err(Error::MalformedCodebook(format!(
                    "symbol {s} of word {w} outside 1..={k_eff}"
                )));
            }
            if let Some(prev) = seen.insert(code.as_slice(), w) {
                return Err(Error::NotUniquelyDecodable {
                    first: prev.to_string(),
                    second: w.to_string(),
                });
            }
            symbols[w * n..w * n + code.len()].copy_from_slice(code);
            lens.push(code.len() as u16);
        }
        Ok(Self {
            kind,
            k,
            n,
            t,
            seed,
            symbols,
            lens,
        })
    }

    pub fn kind(&self) -> CodeKind {
        self.kind
    }

    /// Base alphabet size.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Code length bound.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Hybrid cutoff; 0 for the other kinds.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Effective alphabet size: `k + t`.
    pub fn k_eff(&self) -> usize {
        self.k + self.t
    }

    pub fn vocab_size(&self) -> usize {
        self.lens.len()
    }

    /// Unpadded code of word `w`.
    pub fn code(&self, w: usize) -> &[u32] {
        &self.symbols[w * self.n..w * self.n + self.lens[w] as usize]
    }

    /// Code of word `w` padded with zeros to length `n`.
    pub fn padded(&self, w: usize) -> &[u32] {
        &self.symbols[w * self.n..(w + 1) * self.n]
    }

    /// All padded codes, row-major `V × n`.
    pub fn padded_all(&self) -> &[u32] {
        &self.symbols
    }

    pub fn code_len(&self, w: usize) -> usize {
        self.lens[w] as usize
    }

    /// Whether random or hybrid codes can be recreated from the header alone.
    pub fn is_regenerable(&self) -> bool {
        self.kind != CodeKind::Language
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream seed for a (seed, word, retry) triple, so retries for one word never
/// shift the draws of another.
fn draw_seed(seed: u64, word: usize, retry: usize) -> u64 {
    mix64(mix64(mix64(seed) ^ word as u64) ^ retry as u64)
}

/// Derives a named sub-seed from a master seed.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    name.bytes().fold(mix64(seed), |acc, b| mix64(acc ^ u64::from(b)))
}

fn code_space_holds(k: usize, n: usize, words: usize) -> bool {
    let mut cap: usize = 1;
    for _ in 0..n {
        cap = cap.saturating_mul(k);
        if cap >= words {
            return true;
        }
    }
    cap >= words
}

fn sample_codes(
    k: usize,
    n: usize,
    words: std::ops::Range<usize>,
    seed: u64,
    taken: &mut HashSet<Vec<u32>>,
    out: &mut Vec<Vec<u32>>,
) -> Result<()> {
    for w in words {
        let mut assigned = false;
        for retry in 0..MAX_RETRIES {
            let mut rng = ChaCha8Rng::seed_from_u64(draw_seed(seed, w, retry));
            let code: Vec<u32> = (0..n).map(|_| rng.gen_range(1..=k as u32)).collect();
            if taken.insert(code.clone()) {
                out.push(code);
                assigned = true;
                break;
            }
        }
        if !assigned {
            return Err(Error::RejectionStalled {
                word: w,
                retries: MAX_RETRIES,
            });
        }
    }
    Ok(())
}

/// Rand(k, n): unique uniformly random codes of length exactly `n`.
pub fn gen_random_code(k: usize, n: usize, vocab_size: usize, seed: u64) -> Result<Codebook> {
    if k < 2 || n < 1 {
        return Err(Error::InvalidConfig(format!(
            "random codes need k >= 2 and n >= 1, got k={k} n={n}"
        )));
    }
    if !code_space_holds(k, n, vocab_size) {
        return Err(Error::CodeSpaceTooSmall {
            k,
            n,
            words: vocab_size,
        });
    }
    let mut taken = HashSet::with_capacity(vocab_size);
    let mut codes = Vec::with_capacity(vocab_size);
    sample_codes(k, n, 0..vocab_size, seed, &mut taken, &mut codes)?;
    Codebook::from_codes(CodeKind::Random, k, n, 0, seed, &codes)
}

/// Rand(k, n, t): the `t` most frequent words (vocabulary indices `0..t`)
/// get private singleton codes `k + rank`; the rest get Rand(k, n) codes.
pub fn gen_hybrid_code(
    k: usize,
    n: usize,
    t: usize,
    vocab_size: usize,
    seed: u64,
) -> Result<Codebook> {
    if t > vocab_size {
        return Err(Error::InvalidConfig(format!(
            "hybrid cutoff t={t} exceeds vocabulary size {vocab_size}"
        )));
    }
    if t == 0 {
        return gen_random_code(k, n, vocab_size, seed).map(|cb| Codebook {
            kind: CodeKind::Hybrid,
            ..cb
        });
    }
    if k < 2 || n < 1 {
        return Err(Error::InvalidConfig(format!(
            "hybrid codes need k >= 2 and n >= 1, got k={k} n={n}"
        )));
    }
    if !code_space_holds(k, n, vocab_size - t) {
        return Err(Error::CodeSpaceTooSmall {
            k,
            n,
            words: vocab_size - t,
        });
    }
    let mut codes: Vec<Vec<u32>> = (0..t).map(|w| vec![(k + w + 1) as u32]).collect();
    let mut taken = HashSet::with_capacity(vocab_size - t);
    sample_codes(k, n, t..vocab_size, seed, &mut taken, &mut codes)?;
    Codebook::from_codes(CodeKind::Hybrid, k, n, t, seed, &codes)
}

/// Spells every word with the alphabet; when the alphabet carries `<eow>`
/// each code is terminated by it.
pub fn gen_language_code(
    vocab: &Vocabulary,
    alphabet: &SubUnitAlphabet,
    n: usize,
) -> Result<Codebook> {
    let mut codes = Vec::with_capacity(vocab.len());
    let mut owner: HashMap<Vec<u32>, usize> = HashMap::with_capacity(vocab.len());
    for (w, word) in vocab.words().iter().enumerate() {
        let mut code: Vec<u32> = alphabet
            .spell(word)
            .ok_or_else(|| Error::Unspellable { word: word.clone() })?
            .into_iter()
            .map(|s| s as u32)
            .collect();
        if let Some(eow) = alphabet.eow() {
            code.push(eow as u32);
        }
        if code.len() > n {
            return Err(Error::CodeTooLong {
                word: word.clone(),
                len: code.len(),
                n,
            });
        }
        if let Some(prev) = owner.insert(code.clone(), w) {
            return Err(Error::NotUniquelyDecodable {
                first: vocab.word(prev).to_string(),
                second: word.clone(),
            });
        }
        codes.push(code);
    }
    Codebook::from_codes(CodeKind::Language, alphabet.len(), n, 0, 0, &codes)
}

/// `V · n · ⌈log₂ k_eff⌉`: bits to store the codebook symbol by symbol.
pub fn explicit_storage_bits(cb: &Codebook) -> u64 {
    cb.vocab_size() as u64 * cb.n() as u64 * ceil_log2(cb.k_eff())
}

pub fn ceil_log2(k: usize) -> u64 {
    if k <= 1 {
        0
    } else {
        u64::from(usize::BITS - (k - 1).leading_zeros())
    }
}

/// Storage charged to a codebook in the kind's natural representation:
/// random codes cost one seed parameter per word (`V`), hybrid codes one per
/// randomly coded word (`V - t`), language codes nothing since spellings
/// already live in the symbol table.
pub fn codebook_storage_bits(cb: &Codebook) -> u64 {
    match cb.kind() {
        CodeKind::Random => cb.vocab_size() as u64,
        CodeKind::Hybrid => (cb.vocab_size() - cb.t()) as u64,
        CodeKind::Language => 0,
    }
}

/// All storage options for a codebook side by side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageReport {
    pub explicit_bits: u64,
    pub per_word_seeds: u64,
    pub global_seeds: u64,
}

pub fn storage_report(cb: &Codebook) -> StorageReport {
    StorageReport {
        explicit_bits: explicit_storage_bits(cb),
        per_word_seeds: codebook_storage_bits(cb),
        global_seeds: u64::from(cb.is_regenerable()),
    }
}

/// Text form: `kind k n t V seed`, then (when `explicit` or for language
/// codes) one space-separated code per line in vocabulary order.
pub fn serialize_codebook(cb: &Codebook, explicit: bool) -> String {
    let mut out = format!(
        "{} {} {} {} {} {}\n",
        cb.kind,
        cb.k,
        cb.n,
        cb.t,
        cb.vocab_size(),
        cb.seed
    );
    if explicit || !cb.is_regenerable() {
        for w in 0..cb.vocab_size() {
            let code = cb.code(w);
            for (i, s) in code.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{s}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn deserialize_codebook(text: &str) -> Result<Codebook> {
    let bad = |m: String| Error::MalformedCodebook(m);
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("missing header".into()))?
        .split_whitespace()
        .collect();
    if header.len() != 6 {
        return Err(bad(format!("header has {} fields, expected 6", header.len())));
    }
    let kind: CodeKind = header[0]
        .parse()
        .map_err(|_| bad(format!("unknown kind {:?}", header[0])))?;
    let num = |s: &str| -> Result<u64> { s.parse().map_err(|_| bad(format!("bad number {s:?}"))) };
    let (k, n, t, v, seed) = (
        num(header[1])? as usize,
        num(header[2])? as usize,
        num(header[3])? as usize,
        num(header[4])? as usize,
        num(header[5])?,
    );
    let body: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
    if body.is_empty() && kind != CodeKind::Language {
        return match kind {
            CodeKind::Random => gen_random_code(k, n, v, seed),
            _ => gen_hybrid_code(k, n, t, v, seed),
        };
    }
    if body.len() != v {
        return Err(bad(format!("expected {v} codes, found {}", body.len())));
    }
    let codes = body
        .iter()
        .map(|l| l.split_whitespace().map(|s| num(s).map(|x| x as u32)).collect())
        .collect::<Result<Vec<Vec<u32>>>>()?;
    if kind == CodeKind::Random && codes.iter().any(|c| c.len() != n) {
        return Err(bad("random codes must have length exactly n".into()));
    }
    Codebook::from_codes(kind, k, n, t, seed, &codes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;

    fn vocab_of(words: &[&str]) -> Vocabulary {
        let counted = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.to_string(), (words.len() - i) as u64 + 10))
            .collect();
        Vocabulary::from_counts(counted, 1, 1).unwrap()
    }

    #[test]
    fn random_codes_fill_small_space() {
        let cb = gen_random_code(3, 2, 6, 7).unwrap();
        assert_eq!(cb.vocab_size(), 6);
        let distinct: HashSet<&[u32]> = (0..6).map(|w| cb.code(w)).collect();
        assert_eq!(distinct.len(), 6);
        for w in 0..6 {
            assert_eq!(cb.code(w).len(), 2);
            assert!(cb.code(w).iter().all(|&s| (1..=3).contains(&s)));
        }
        // full code space: every one of the 9 codes can be used
        let full = gen_random_code(3, 2, 9, 7).unwrap();
        let all: HashSet<&[u32]> = (0..9).map(|w| full.code(w)).collect();
        assert_eq!(all.len(), 9);
    }

    #[test]
    fn random_codes_are_reproducible() {
        let a = gen_random_code(5, 3, 100, 42).unwrap();
        let b = gen_random_code(5, 3, 100, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_random_code(5, 3, 100, 43).unwrap());
        // a prefix of the vocabulary is coded identically
        let c = gen_random_code(5, 3, 50, 42).unwrap();
        for w in 0..50 {
            assert_eq!(a.code(w), c.code(w));
        }
    }

    #[test]
    fn pigeonhole_is_enforced() {
        let err = gen_random_code(2, 2, 5, 0).unwrap_err();
        assert!(err.to_string().starts_with("code space too small"));
        assert!(gen_random_code(2, 64, 5, 0).is_ok());
    }

    #[test]
    fn stalled_sampling_is_an_error() {
        // 2^1 = 2 codes for 2 words: the second word must hit the one free
        // code; with huge V relative to space a stall becomes possible, but
        // the cap must never trigger for k^n >= 2V.
        assert!(gen_random_code(2, 1, 2, 3).is_ok());
        let err = Error::RejectionStalled {
            word: 3,
            retries: MAX_RETRIES,
        };
        assert!(err.to_string().starts_with("rejection sampling stalled"));
    }

    #[test]
    fn language_code_from_word_pieces() {
        let vocab = vocab_of(&["i", "it", "he", "she", "you", "they"]);
        let units = ["i", "t", "he", "s", "you", "y", "<", ">", "u", "n", "k", "e", "o"];
        let alphabet = SubUnitAlphabet::from_units(units, false).unwrap();
        let cb = gen_language_code(&vocab, &alphabet, 8).unwrap();
        let she = vocab.index("she").unwrap();
        assert_eq!(cb.code(she), &[4, 3]);
        assert_eq!(cb.kind(), CodeKind::Language);
        assert_eq!(cb.k(), alphabet.len());
    }

    #[test]
    fn language_code_single_character() {
        let vocab = Vocabulary::from_counts(vec![("a".into(), 1)], 0, 0).unwrap();
        let alphabet =
            SubUnitAlphabet::from_units(["a", "<", ">", "e", "o", "s", "u", "n", "k"], false)
                .unwrap();
        let cb = gen_language_code(&vocab, &alphabet, 8).unwrap();
        assert_eq!(cb.code(0), &[1]);
    }

    #[test]
    fn language_code_appends_eow() {
        let vocab = vocab_of(&["ab", "b"]);
        let alphabet = crate::corpus::extract_characters(&vocab);
        let cb = gen_language_code(&vocab, &alphabet, 8).unwrap();
        let eow = alphabet.eow().unwrap() as u32;
        assert_eq!(cb.code(0).last(), Some(&eow));
        assert_eq!(cb.code(0).len(), 3);
    }

    #[test]
    fn language_code_errors() {
        let vocab = vocab_of(&["abcdef", "b"]);
        let alphabet = crate::corpus::extract_characters(&vocab).without_eow();
        match gen_language_code(&vocab, &alphabet, 4) {
            Err(Error::CodeTooLong { word, .. }) => assert_eq!(word, "abcdef"),
            other => panic!("unexpected {other:?}"),
        }
        let vocab = vocab_of(&["ab", "zz"]);
        let alphabet = SubUnitAlphabet::from_units(["a", "b"], false).unwrap();
        assert!(matches!(
            gen_language_code(&vocab, &alphabet, 4),
            Err(Error::Unspellable { .. })
        ));
        let dup = Codebook::from_codes(CodeKind::Language, 3, 2, 0, 0, &[vec![1, 2], vec![1, 2]]);
        let err = dup.unwrap_err();
        assert!(err.to_string().starts_with("codes not uniquely decodable"));
    }

    #[test]
    fn hybrid_codes_reserve_private_symbols() {
        let cb = gen_hybrid_code(49, 12, 2000, 2500, 9).unwrap();
        assert_eq!(cb.k_eff(), 49 + 2000);
        assert_eq!(cb.code(0), &[50]);
        assert_eq!(cb.code(1999), &[2049]);
        assert_eq!(cb.code(2000).len(), 12);
        assert!(cb.code(2000).iter().all(|&s| (1..=49).contains(&s)));
        for w in 2000..2500 {
            assert!(cb.code(w).iter().all(|&s| s <= 49));
        }
    }

    #[test]
    fn hybrid_degenerate_cutoffs() {
        let r = gen_random_code(4, 3, 30, 5).unwrap();
        let h = gen_hybrid_code(4, 3, 0, 30, 5).unwrap();
        for w in 0..30 {
            assert_eq!(r.code(w), h.code(w));
        }
        let all = gen_hybrid_code(4, 3, 30, 30, 5).unwrap();
        for w in 0..30 {
            assert_eq!(all.code(w), &[(4 + w + 1) as u32]);
        }
    }

    #[test]
    fn storage_costs() {
        let cb = gen_random_code(49, 12, 10_000, 1).unwrap();
        assert_eq!(explicit_storage_bits(&cb), 720_000);
        assert_eq!(codebook_storage_bits(&cb), 10_000);
        let report = storage_report(&cb);
        assert_eq!(report.global_seeds, 1);
        let vocab = vocab_of(&["ab", "b"]);
        let alphabet = crate::corpus::extract_characters(&vocab);
        let lang = gen_language_code(&vocab, &alphabet, 8).unwrap();
        assert_eq!(codebook_storage_bits(&lang), 0);
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(49), 6);
        assert_eq!(ceil_log2(64), 6);
        assert_eq!(ceil_log2(65), 7);
    }

    #[test]
    fn serialization_round_trip() {
        let cb = gen_random_code(3, 2, 6, 11).unwrap();
        let explicit = serialize_codebook(&cb, true);
        assert_eq!(deserialize_codebook(&explicit).unwrap(), cb);
        let header = serialize_codebook(&cb, false);
        assert_eq!(header.lines().count(), 1);
        assert_eq!(deserialize_codebook(&header).unwrap(), cb);
        let hy = gen_hybrid_code(3, 3, 4, 20, 11).unwrap();
        assert_eq!(deserialize_codebook(&serialize_codebook(&hy, false)).unwrap(), hy);
    }

    #[test]
    fn truncated_codebook_is_malformed() {
        let cb = gen_random_code(3, 2, 6, 11).unwrap();
        let text = serialize_codebook(&cb, true);
        let cut: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
        let err = deserialize_codebook(&cut).unwrap_err();
        assert!(err.to_string().starts_with("malformed codebook"));
        assert!(deserialize_codebook("random 3 2").is_err());
        assert!(deserialize_codebook("").is_err());
        let out_of_range = "random 3 1 0 2 0\n1\n4\n";
        assert!(deserialize_codebook(out_of_range).is_err());
    }
}
