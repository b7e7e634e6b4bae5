//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Runs sequentially so the wall-clock limits are meaningful.

mod common;

use std::collections::HashSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use west::checkpoint::Checkpoint;
use west::cli::{run, Cli};
use west::codebook::{explicit_storage_bits, gen_language_code, gen_random_code, CodeKind, Codebook};
use west::config::RunConfig;
use west::corpus::{SubUnitAlphabet, Vocabulary};
use west::factorization::{
    dense_param_count, dense_stored_count, lookup, DenseFactor, SparseFactor, Structure, WestFactor,
};
use west::model::{EmbeddingKind, HeadMode, SoftmaxHead};
use west::params::Parameters;
use west::quantization::quantize_checkpoint;
use west::report::param_report;
use west::training::{grad_check, perplexity};

use clap::Parser;
use common::*;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// 1. lookups against an explicit C × E^c product

/// A language codebook over `k - 2` letters plus the two reserved tokens as
/// whole units, for random words of at most `n - 1` letters.
fn random_language_codebook(rng: &mut ChaCha8Rng, k: usize, n: usize, max_v: usize) -> Arc<Codebook> {
    let letters: Vec<String> = (0..k - 2).map(|i| ((b'a' + i as u8) as char).to_string()).collect();
    let mut units = letters.clone();
    units.push("<eos>".into());
    units.push("<unk>".into());
    let alphabet = SubUnitAlphabet::from_units(units, true).unwrap();
    let capacity: usize = (1..n).map(|l| letters.len().pow(l as u32)).sum();
    let v = rng.gen_range(1..=capacity.min(max_v - 2));
    let mut words = HashSet::new();
    while words.len() < v {
        let len = rng.gen_range(1..n);
        let w: String = (0..len).map(|_| letters[rng.gen_range(0..letters.len())].as_str()).collect();
        words.insert(w);
    }
    let mut words: Vec<String> = words.into_iter().collect();
    words.sort();
    let counted = words.into_iter().map(|w| (w, rng.gen_range(1..100))).collect();
    let vocab = Vocabulary::from_counts(counted, 5, 5).unwrap();
    Arc::new(gen_language_code(&vocab, &alphabet, n).unwrap())
}

/// `C` as a dense `V × n(k+1)` matrix and `E^c` as `n(k+1) × d`, written out
/// directly from the codebook, the weights and the sub-matrices.
fn explicit_product(sf: &SparseFactor<f64>, df: &DenseFactor<f64>) -> Array2<f64> {
    let cb = sf.codebook();
    let (n, rows) = (cb.n(), cb.k_eff() + 1);
    let d = df.dim();
    let mut c = Array2::<f64>::zeros((cb.vocab_size(), n * rows));
    for w in 0..cb.vocab_size() {
        for (i, &sym) in cb.padded(w).iter().enumerate() {
            c[(w, i * rows + sym as usize)] = sf.lambda()[(w, i)];
        }
    }
    let mut ec = Array2::<f64>::zeros((n * rows, d));
    for i in 0..n {
        let sub = df.sub(i);
        for r in 0..rows {
            for j in 0..sub.ncols() {
                let col = match df.structure() {
                    Structure::BlockDiagonal => i * sub.ncols() + j,
                    Structure::Band => j,
                };
                ec[(i * rows + r, col)] = sub[(r, j)];
            }
        }
    }
    c.dot(&ec)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut combos = HashSet::new();
    for inst in 0..50 {
        let structure = if inst % 2 == 0 { Structure::BlockDiagonal } else { Structure::Band };
        let weighted = inst % 4 >= 2;
        let language = inst % 8 >= 4;
        let tied = rng.gen_bool(0.5);
        let k = rng.gen_range(4..=8);
        let n = rng.gen_range(2..=4);
        let cb = if language {
            random_language_codebook(&mut rng, k, n, 64)
        } else {
            let capacity = k.pow(n as u32);
            let v = rng.gen_range(1..=capacity.min(64));
            Arc::new(gen_random_code(k, n, v, rng.gen()).unwrap())
        };
        let d = match structure {
            Structure::BlockDiagonal => n * rng.gen_range(1..=16 / n),
            Structure::Band => rng.gen_range(1..=16),
        };
        let v = cb.vocab_size();
        let sf = if weighted {
            SparseFactor::with_weights(cb.clone(), Array2::from_shape_fn((v, n), |_| rng.gen_range(-2.0..2.0))).unwrap()
        } else {
            SparseFactor::new(cb.clone(), false)
        };
        let mut df = DenseFactor::zeros(structure, cb.k_eff(), n, d, tied).unwrap();
        df.init_uniform(&mut rng, 1.0);
        let oracle = explicit_product(&sf, &df);
        for w in 0..v {
            let row: Array1<f64> = lookup(&sf, &df, w).map_err(|e| e.to_string())?;
            for (a, b) in row.iter().zip(oracle.row(w)) {
                worst = worst.max((a - b).abs());
            }
        }
        combos.insert((structure, weighted, language));
    }
    ensure(combos.len() == 8, || format!("only {} combinations covered", combos.len()))?;
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("50 instances, max |lookup - C×E^c| = {worst:e}"))
}

// ---------------------------------------------------------------------------
// 2. the worked example

fn criterion_2() -> Outcome {
    // I, It, He, She, You, They
    let codes: Vec<Vec<u32>> = vec![vec![1, 2], vec![3, 3], vec![2, 1], vec![1, 3], vec![1, 1], vec![3, 2]];
    let cb = Arc::new(Codebook::from_codes(CodeKind::Language, 3, 2, 0, 0, &codes).map_err(|e| e.to_string())?);
    let e1 = ndarray::arr2(&[[0.1, 1.5], [1.0, -3.2], [-1.8, 2.0]]);
    let df = DenseFactor::<f64>::from_sub_matrices(Structure::BlockDiagonal, 2, &[e1]).map_err(|e| e.to_string())?;
    let factor = WestFactor::new(SparseFactor::new(cb, false), df).map_err(|e| e.to_string())?;
    let expected = [
        [0.1, 1.5, 1.0, -3.2],
        [-1.8, 2.0, -1.8, 2.0],
        [1.0, -3.2, 0.1, 1.5],
        [0.1, 1.5, -1.8, 2.0],
        [0.1, 1.5, 0.1, 1.5],
        [-1.8, 2.0, 1.0, -3.2],
    ];
    for (w, want) in expected.iter().enumerate() {
        let got = lookup(&factor.sparse, &factor.dense, w).map_err(|e| e.to_string())?;
        ensure(got.iter().zip(want).all(|(a, b)| a == b), || format!("row {w}: {got} != {want:?}"))?;
    }
    Ok("6×4 matrix reproduced row-exactly".into())
}

// ---------------------------------------------------------------------------
// 3. codebook statistics

fn criterion_3() -> Outcome {
    let (k, n, v) = (49, 12, 10_000);
    let cb = gen_random_code(k, n, v, 49).map_err(|e| e.to_string())?;
    let unique: HashSet<&[u32]> = (0..v).map(|w| cb.code(w)).collect();
    ensure(unique.len() == v, || format!("{} unique codes of {v}", unique.len()))?;
    let pairs = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut hits = vec![0usize; n];
    for _ in 0..pairs {
        let a = rng.gen_range(0..v);
        let mut b = rng.gen_range(0..v - 1);
        if b >= a {
            b += 1;
        }
        for i in 0..n {
            hits[i] += (cb.code(a)[i] == cb.code(b)[i]) as usize;
        }
    }
    let p = 1.0 / k as f64;
    let se = (p * (1.0 - p) / pairs as f64).sqrt();
    let worst = hits
        .iter()
        .map(|&h| ((h as f64 / pairs as f64) - p).abs() / se)
        .fold(0.0f64, f64::max);
    ensure(worst < 4.0, || format!("per-index collision frequency off by {worst:.2} SE"))?;
    Ok(format!("10000 unique codes; collision rates within {worst:.2} SE of 1/49"))
}

// ---------------------------------------------------------------------------
// 4. storage accounting

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let k: usize = rng.gen_range(2..=300);
        let n = rng.gen_range(1..=12);
        let v = rng.gen_range(1..=2000usize).min(k.saturating_pow(n as u32) / 2);
        let cb = gen_random_code(k, n, v, rng.gen()).map_err(|e| e.to_string())?;
        let bits_per_symbol = (usize::BITS - (k - 1).leading_zeros()) as u64;
        let want_bits = (v * n) as u64 * bits_per_symbol;
        ensure(explicit_storage_bits(&cb) == want_bits, || {
            format!("k={k} n={n} V={v}: {} bits, expected {want_bits}", explicit_storage_bits(&cb))
        })?;
        let d = n * rng.gen_range(1..=20);
        for structure in [Structure::BlockDiagonal, Structure::Band] {
            let untied = match structure {
                Structure::BlockDiagonal => k * d,
                Structure::Band => k * d * n,
            };
            for (tied, want) in [(false, untied), (true, untied / n)] {
                let df = DenseFactor::<f32>::zeros(structure, k, n, d, tied).map_err(|e| e.to_string())?;
                let pad_rows = if tied { 1 } else { n };
                let width = if structure == Structure::Band { d } else { d / n };
                ensure(dense_param_count(&df) == want, || {
                    format!("{structure} tied={tied} k={k} n={n} d={d}: {} != {want}", dense_param_count(&df))
                })?;
                ensure(dense_stored_count(&df) == want + pad_rows * width, || "stored count".into())?;
            }
        }
    }
    Ok("20 configs match V·n·⌈log2 k⌉, k·d, k·d·n and the tied 1/n reduction".into())
}

// ---------------------------------------------------------------------------
// 5. normalization

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (v, d) = (40, 6);
    let mut worst = 0.0f64;
    let mut heads = 0;
    for draw in 0..100 {
        let cb = Arc::new(gen_random_code(5, 3, v, draw).unwrap());
        let structure = if draw % 2 == 0 { Structure::BlockDiagonal } else { Structure::Band };
        let variants: [(bool, bool, bool); 5] =
            [(true, false, false), (false, false, false), (false, true, false), (false, false, true), (false, true, true)];
        for (full, bias, weighted) in variants {
            let mut head = if full {
                SoftmaxHead::<f64>::full(v, d)
            } else {
                let df = DenseFactor::zeros(structure, 5, 3, d, draw % 3 == 0).unwrap();
                let factor = WestFactor::new(SparseFactor::new(cb.clone(), weighted), df).unwrap();
                SoftmaxHead::west(factor, bias)
            };
            head.init(&mut rng, 2.0, 2.0);
            for p in head.params_mut() {
                for (i, x) in p.data.iter_mut().enumerate() {
                    if !p.frozen.is_frozen(i) {
                        *x = rng.gen_range(-2.0..2.0);
                    }
                }
            }
            let h = Array1::from_shape_fn(d, |_| rng.gen_range(-3.0..3.0));
            let lp = head.log_posterior(h.view()).map_err(|e| e.to_string())?;
            let total: f64 = lp.iter().map(|x| x.exp()).sum();
            worst = worst.max((total - 1.0).abs());
            heads += 1;
        }
    }
    ensure(worst <= 1e-9, || format!("|Σ P - 1| up to {worst:e}"))?;
    Ok(format!("{heads} heads, max |Σ_w P(w|h) - 1| = {worst:e}"))
}

// ---------------------------------------------------------------------------
// 6. gradients

fn criterion_6() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..10u64 {
        let structure = if seed % 2 == 0 { Structure::BlockDiagonal } else { Structure::Band };
        let model = grad_model(seed, structure, seed % 4 >= 2, true);
        let chunk = random_chunk(seed, 7, 2, 2);
        let report = grad_check(&model, &chunk, 1e-4).map_err(|e| e.to_string())?;
        ensure(report.max_rel_error < 1e-4, || format!("seed {seed}: {:e} at {:?}", report.max_rel_error, report.worst))?;
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
    }
    Ok(format!("10 seeds, {checked} scalars, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// 7, 9: compressed embedding against the baseline, then its quantization

fn embedding_params(run: &Run) -> usize {
    param_report(run.model.config()).unwrap().emb
}

fn criterion_7(tiny: &Tiny) -> (Outcome, Option<Run>) {
    let base = train_on_tiny(tiny, "", 1);
    let west = train_on_tiny(tiny, WEST_EMBEDDING, 1);
    let ratio = embedding_params(&base) as f64 / embedding_params(&west) as f64;
    let gap = west.test_ppl() / base.test_ppl() - 1.0;
    let detail = format!(
        "baseline ppl {:.2} ({} emb params), west ppl {:.2} ({} emb params, {ratio:.1}x fewer), gap {:+.1}%",
        base.test_ppl(),
        embedding_params(&base),
        west.test_ppl(),
        embedding_params(&west),
        100.0 * gap
    );
    let outcome = if ratio < 20.0 {
        Err(format!("{detail}: compression below 20x"))
    } else if gap > 0.15 {
        Err(format!("{detail}: gap above 15%"))
    } else {
        Ok(detail)
    };
    (outcome, Some(west))
}

fn criterion_9(tiny: &Tiny, run: &Run) -> Outcome {
    let ckpt = Checkpoint::from_model(&run.config, &tiny.vocab, &run.model);
    let (q, report) = quantize_checkpoint(&ckpt, 8, &[]).map_err(|e| e.to_string())?;
    let restored = Checkpoint::from_bytes(&q.to_bytes()).and_then(|c| c.to_model()).map_err(|e| e.to_string())?;
    let before = perplexity(&run.model, &tiny.test).map_err(|e| e.to_string())?;
    let after = perplexity(&restored, &tiny.test).map_err(|e| e.to_string())?;
    let degradation = after / before - 1.0;
    let detail = format!(
        "tensor records {} -> {} bytes ({:.2}x), ppl {before:.3} -> {after:.3} ({:+.3}%)",
        report.before,
        report.after,
        report.ratio(),
        100.0 * degradation
    );
    ensure(report.ratio() >= 3.5, || format!("{detail}: shrink below 3.5x"))?;
    ensure(degradation <= 0.02, || format!("{detail}: degradation above 2%"))?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 8. head ablation

fn criterion_8(tiny: &Tiny) -> Outcome {
    let heads = [
        ("char_normalized", "soft.mode = char_normalized"),
        ("west", "soft.mode = west"),
        ("west+bias", "soft.mode = west\nsoft.bias = true"),
        ("west+bias+weights", "soft.mode = west\nsoft.bias = true\nsoft.weighted = true"),
    ];
    let mut ordered = 0;
    let mut lines = Vec::new();
    for seed in 1..=3u64 {
        let ppl: Vec<f64> = heads
            .iter()
            .map(|(_, o)| train_on_tiny(tiny, &format!("{LANGUAGE_SOFTMAX}{o}"), seed).test_ppl())
            .collect();
        let ok = ppl[0] > ppl[1] && ppl[1] > ppl[2] && ppl[2] >= ppl[3];
        ordered += ok as usize;
        lines.push(format!(
            "seed {seed}: {}",
            heads
                .iter()
                .zip(&ppl)
                .map(|((name, _), p)| format!("{name} {p:.2}"))
                .collect::<Vec<_>>()
                .join(" > ")
        ));
    }
    let detail = format!("order held for {ordered}/3 seeds [{}]", lines.join("; "));
    ensure(ordered >= 2, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 10. reproducibility through the command line

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("run.conf");
    let mut cfg = common::config(WEST_EMBEDDING, 7);
    cfg.out_dir = dir.path().display().to_string();
    std::fs::write(&config, cfg.to_text()).map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    let mut printed = Vec::new();
    for name in ["a.ckpt", "b.ckpt"] {
        let out = dir.path().join(name);
        let args = ["west", "train", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
        let mut stdout = Vec::new();
        run(Cli::try_parse_from(args).map_err(|e| e.to_string())?, &mut stdout).map_err(|e| e.to_string())?;
        bytes.push(std::fs::read(&out).map_err(|e| e.to_string())?);
        printed.push(String::from_utf8(stdout).unwrap().replace(name, ""));
    }
    ensure(bytes[0] == bytes[1], || "checkpoints differ".into())?;
    ensure(printed[0] == printed[1], || "printed metrics differ".into())?;
    let echoed = Checkpoint::from_bytes(&bytes[0]).and_then(|c| c.run_config()).map_err(|e| e.to_string())?;
    ensure(echoed.model_config().embedding == EmbeddingKind::West, || "config echo".into())?;
    ensure(echoed.model_config().head == HeadMode::Full, || "config echo".into())?;
    Ok(format!("two runs wrote identical {}-byte checkpoints", bytes[0].len()))
}

fn report(id: usize, name: &str, limit: Option<Duration>, start: Instant, outcome: Outcome) -> bool {
    let elapsed = start.elapsed();
    let outcome = match (outcome, limit) {
        (Ok(d), Some(l)) if elapsed > l => Err(format!("{d}; took {elapsed:.1?}, limit {l:?}")),
        (o, _) => o,
    };
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("{tag} criterion {id:>2} {name} ({elapsed:.1?}): {detail}");
    ok
}

fn main() {
    let mut all = true;
    let quick: [(usize, &str, Option<u64>, fn() -> Outcome); 6] = [
        (1, "factorization oracle", Some(10), criterion_1),
        (2, "worked example", None, criterion_2),
        (3, "codebook statistics", Some(30), criterion_3),
        (4, "storage accounting", None, criterion_4),
        (5, "normalization", None, criterion_5),
        (6, "gradient correctness", Some(60), criterion_6),
    ];
    for (id, name, limit, f) in quick {
        let start = Instant::now();
        all &= report(id, name, limit.map(Duration::from_secs), start, f());
    }

    let tiny = tiny();
    assert!(RunConfig::parse(BASE_CONFIG).is_ok());

    let start = Instant::now();
    let (outcome, west_run) = criterion_7(&tiny);
    all &= report(7, "desk-scale training parity", Some(Duration::from_secs(300)), start, outcome);

    let start = Instant::now();
    all &= report(8, "word-normalization ablation", Some(Duration::from_secs(600)), start, criterion_8(&tiny));

    let start = Instant::now();
    let outcome = match &west_run {
        Some(run) => criterion_9(&tiny, run),
        None => Err("no trained model".into()),
    };
    all &= report(9, "quantization", None, start, outcome);

    let start = Instant::now();
    all &= report(10, "reproducibility", None, start, criterion_10());

    if !all {
        std::process::exit(1);
    }
}
