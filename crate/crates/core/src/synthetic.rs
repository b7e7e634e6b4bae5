//! Deterministic synthetic corpus with word classes, topical paragraphs and
//! class-marking suffixes, so that both context and spelling carry signal.
//! The bundled tiny corpus under `data/tiny` is `generate(&SyntheticSpec::default())`.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub train_tokens: usize,
    pub test_tokens: usize,
    pub nouns: usize,
    pub verbs: usize,
    pub adjectives: usize,
    pub adverbs: usize,
    pub topics: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 2018,
            train_tokens: 50_000,
            test_tokens: 8_000,
            nouns: 900,
            verbs: 600,
            adjectives: 400,
            adverbs: 120,
            topics: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticCorpus {
    pub train: String,
    pub test: String,
}

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z", "br", "st", "tr", "pl",
    "gr", "sh", "ch", "fl",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
const CODAS: &[&str] = &["", "", "", "n", "r", "l", "s", "m", "t"];

const DETERMINERS: &[&str] = &["the", "a", "this", "that", "every", "some"];
const PREPOSITIONS: &[&str] = &["in", "on", "near", "under", "with", "from", "beyond", "across"];

fn stem<R: Rng>(rng: &mut R) -> String {
    let syllables = if rng.gen_bool(0.6) { 1 } else { 2 };
    let mut s = String::new();
    for _ in 0..syllables {
        s.push_str(ONSETS.choose(rng).expect("non-empty"));
        s.push_str(VOWELS.choose(rng).expect("non-empty"));
        s.push_str(CODAS.choose(rng).expect("non-empty"));
    }
    s
}

fn make_class<R: Rng>(rng: &mut R, count: usize, suffixes: &[&str], seen: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let w = format!("{}{}", stem(rng), suffixes.choose(rng).expect("non-empty"));
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// A word class: global Zipfian sampler plus per-topic samplers over the
/// members whose home topic it is.
struct Class {
    words: Vec<String>,
    global: WeightedIndex<f64>,
    by_topic: Vec<(Vec<usize>, WeightedIndex<f64>)>,
}

fn zipf(n: usize) -> WeightedIndex<f64> {
    WeightedIndex::new((0..n).map(|r| 1.0 / (r as f64 + 1.0))).expect("positive weights")
}

impl Class {
    fn new<R: Rng>(rng: &mut R, words: Vec<String>, topics: usize) -> Self {
        let mut members = vec![Vec::new(); topics];
        for i in 0..words.len() {
            members[rng.gen_range(0..topics)].push(i);
        }
        let by_topic = members
            .into_iter()
            .map(|m| {
                let m = if m.is_empty() { vec![0] } else { m };
                let z = zipf(m.len());
                (m, z)
            })
            .collect();
        Self {
            global: zipf(words.len()),
            words,
            by_topic,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R, topic: usize, topical: f64) -> &str {
        let i = if rng.gen_bool(topical) {
            let (m, z) = &self.by_topic[topic];
            m[z.sample(rng)]
        } else {
            self.global.sample(rng)
        };
        &self.words[i]
    }
}

struct Grammar {
    nouns: Class,
    verbs: Class,
    adjectives: Class,
    adverbs: Class,
}

impl Grammar {
    fn noun_phrase<R: Rng>(&self, rng: &mut R, topic: usize, out: &mut Vec<String>) {
        out.push(DETERMINERS.choose(rng).expect("non-empty").to_string());
        if rng.gen_bool(0.35) {
            out.push(self.adjectives.sample(rng, topic, 0.6).to_string());
        }
        out.push(self.nouns.sample(rng, topic, 0.75).to_string());
    }

    fn sentence<R: Rng>(&self, rng: &mut R, topic: usize) -> Vec<String> {
        let mut s = Vec::new();
        self.noun_phrase(rng, topic, &mut s);
        s.push(self.verbs.sample(rng, topic, 0.7).to_string());
        if rng.gen_bool(0.7) {
            self.noun_phrase(rng, topic, &mut s);
        }
        if rng.gen_bool(0.4) {
            s.push(PREPOSITIONS.choose(rng).expect("non-empty").to_string());
            self.noun_phrase(rng, topic, &mut s);
        }
        if rng.gen_bool(0.25) {
            s.push(self.adverbs.sample(rng, topic, 0.5).to_string());
        }
        s
    }
}

/// Paragraphs of 3 to 8 one-line sentences sharing a topic.
fn write_text<R: Rng>(rng: &mut R, grammar: &Grammar, topics: usize, tokens: usize) -> String {
    let mut text = String::new();
    let mut count = 0;
    while count < tokens {
        let topic = rng.gen_range(0..topics);
        for _ in 0..rng.gen_range(3..=8) {
            let s = grammar.sentence(rng, topic);
            count += s.len() + 1;
            text.push_str(&s.join(" "));
            text.push('\n');
        }
    }
    text
}

pub fn generate(spec: &SyntheticSpec) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen: HashSet<String> = DETERMINERS.iter().chain(PREPOSITIONS).map(|s| s.to_string()).collect();
    let nouns = make_class(&mut rng, spec.nouns, &["o", "on", "a"], &mut seen);
    let verbs = make_class(&mut rng, spec.verbs, &["ed", "es", "ir"], &mut seen);
    let adjectives = make_class(&mut rng, spec.adjectives, &["ic", "al", "y"], &mut seen);
    let adverbs = make_class(&mut rng, spec.adverbs, &["ly"], &mut seen);
    let grammar = Grammar {
        nouns: Class::new(&mut rng, nouns, spec.topics),
        verbs: Class::new(&mut rng, verbs, spec.topics),
        adjectives: Class::new(&mut rng, adjectives, spec.topics),
        adverbs: Class::new(&mut rng, adverbs, spec.topics),
    };
    let train = write_text(&mut rng, &grammar, spec.topics, spec.train_tokens);
    let test = write_text(&mut rng, &grammar, spec.topics, spec.test_tokens);
    SyntheticCorpus { train, test }
}

/// The bundled corpus.
pub const TINY_TRAIN: &str = include_str!("../data/tiny/train.txt");
pub const TINY_TEST: &str = include_str!("../data/tiny/test.txt");
