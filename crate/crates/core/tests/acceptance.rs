//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{array, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cards::analysis::pca_2d;
use cards::augment::{analyze_word, outcome_stats, OutcomeClass};
use cards::corpus::{read_lines, StsExample};
use cards::encoder::{backward, forward_cached, EncoderGrads, EncoderParams};
use cards::eval::spearman;
use cards::objective::{grad_info_nce_hard, info_nce, info_nce_hard, HardNegativeOptions};
use cards::pipeline::{encode_corpus, train, TrainConfig};
use cards::retrieval::{NegativeIndex, RetrievalConfig, Strategy};
use cards::synthetic::paraphrase_corpus;
use cards::tokenizer::Tokenizer;

use common::{brute_top_k, data_dir, gpt2_tokenizer, naive_contrastive, numeric_gradient, relative_error, spearman_oracle};

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn check(number: u32, title: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let elapsed = started.elapsed();
    let result = match (result, limit) {
        (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
        (r, _) => r,
    };
    let passed = result.is_ok();
    let detail = result.unwrap_or_else(|e| e);
    println!(
        "{} criterion {number:>2}: {title} [{elapsed:.2?}] {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    passed
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

fn table_rows(tok: &Tokenizer) -> Outcome {
    let rows: [(&str, &str, &str, OutcomeClass); 8] = [
        ("naturalistic", "natural|istic", "Natural|istic", OutcomeClass::Substitution),
        ("Charting", "Chart|ing", "chart|ing", OutcomeClass::Substitution),
        ("interpret", "interpret", "Inter|pret", OutcomeClass::Division),
        ("Neighbor", "Neigh|bor", "ne|igh|bor", OutcomeClass::Division),
        ("recommended", "recomm|ended", "Recommended", OutcomeClass::Fusion),
        ("Serious", "Ser|ious", "serious", OutcomeClass::Fusion),
        ("urgency", "urg|ency", "Ur|gency", OutcomeClass::Regrouping),
        ("Ongoing", "O|ng|oing", "ongo|ing", OutcomeClass::Regrouping),
    ];
    for (word, before, after, class) in rows {
        let rec = analyze_word(tok, word).ok_or_else(|| format!("{word} not eligible"))?;
        let got_before = tok.tokens(&rec.original_tokens.ids).join("|");
        let got_after = tok.tokens(&rec.flipped_tokens.ids).join("|");
        ensure!(
            got_before == before && got_after == after && rec.class == class,
            "{word}: got {got_before} -> {got_after} ({}), expected {before} -> {after} ({class})",
            rec.class
        );
    }
    Ok("8/8 rows".into())
}

fn criterion_1() -> Outcome {
    let tok = gpt2_tokenizer();
    table_rows(&tok)
}

fn criterion_2() -> Outcome {
    let tok = gpt2_tokenizer();
    let lines = read_lines(&data_dir().join("wiki_sample.txt")).map_err(|e| e.to_string())?;
    ensure!(lines.len() >= 10_000, "sample has only {} sentences", lines.len());
    let stats = outcome_stats(&lines, &tok, 0.15, &mut ChaCha8Rng::seed_from_u64(7)).map_err(|e| e.to_string())?;
    let sub = stats.class_share(OutcomeClass::Substitution);
    let changed = stats.changed_share();
    ensure!((sub - 85.0).abs() <= 5.0, "substitution share {sub:.2}% outside 85 ± 5");
    ensure!((changed - 14.0).abs() <= 5.0, "changed-count share {changed:.2}% outside 14 ± 5");
    Ok(format!(
        "{} sentences, {} flips: substitution {sub:.2}%, changed token count {changed:.2}%",
        lines.len(),
        stats.total()
    ))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for b in 0..100 {
        let n = rng.gen_range(1..=8);
        let d = rng.gen_range(1..=16);
        let s = rng.gen_range(1..=3);
        let tau = if b % 2 == 0 { 0.05 } else { 1.0 };
        let a = random_matrix(&mut rng, n, d);
        let p = random_matrix(&mut rng, n, d);
        let neg = random_matrix(&mut rng, n * s, d);
        let eq1 = info_nce(a.view(), p.view(), tau).map_err(|e| e.to_string())?.total;
        let eq2 = info_nce_hard(a.view(), p.view(), neg.view(), tau, HardNegativeOptions::default())
            .map_err(|e| e.to_string())?
            .total;
        let d1 = (eq1 - naive_contrastive(a.view(), p.view(), None, tau)).abs();
        let d2 = (eq2 - naive_contrastive(a.view(), p.view(), Some(neg.view()), tau)).abs();
        worst = worst.max(d1).max(d2);
        ensure!(d1 <= 1e-10 && d2 <= 1e-10, "batch {b}: differences {d1:e}, {d2:e}");
    }
    Ok(format!("100 batches, max |diff| {worst:.1e}"))
}

fn criterion_4() -> Outcome {
    let opts = HardNegativeOptions::default();
    let err = |e: cards::Error| e.to_string();
    let single = array![[0.3, -1.2, 0.5]];
    let other = array![[1.0, 0.4, -0.2]];
    let l = info_nce(single.view(), other.view(), 0.05).map_err(err)?.total;
    ensure!(l == 0.0, "N=1 loss {l}");

    for n in [2usize, 5, 8] {
        let same = Array2::from_shape_fn((n, 4), |(_, j)| j as f64 + 0.5);
        let l = info_nce(same.view(), same.view(), 0.05).map_err(err)?.total;
        ensure!((l - (n as f64).ln()).abs() <= 1e-9, "identical batch N={n}: {l} vs ln N");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(1..=6);
        let a = random_matrix(&mut rng, n, 5);
        let p = random_matrix(&mut rng, n, 5);
        for tau in [0.05, 1.0] {
            let eq1 = info_nce(a.view(), p.view(), tau).map_err(err)?;
            let eq2 = info_nce_hard(a.view(), p.view(), p.view(), tau, opts).map_err(err)?;
            for (x, y) in eq1.per_sample.iter().zip(&eq2.per_sample) {
                let d = (y - x - 2f64.ln()).abs();
                worst = worst.max(d);
                ensure!(d <= 1e-9, "duplicated negatives: {y} vs {x} + ln 2");
            }
            let neg = random_matrix(&mut rng, n, 5);
            let base = info_nce_hard(a.view(), p.view(), neg.view(), tau, opts).map_err(err)?.total;
            let mut scaled = (a.clone(), p.clone(), neg.clone());
            for (i, mut row) in scaled.0.axis_iter_mut(Axis(0)).enumerate() {
                row *= 0.1 + i as f64;
            }
            scaled.1 *= 7.5;
            scaled.2.row_mut(0).mapv_inplace(|v| v * 1e3);
            let l = info_nce_hard(scaled.0.view(), scaled.1.view(), scaled.2.view(), tau, opts)
                .map_err(err)?
                .total;
            ensure!((l - base).abs() <= 1e-9, "scale invariance: {l} vs {base}");
            let l1 = info_nce(scaled.0.view(), scaled.1.view(), tau).map_err(err)?.total;
            ensure!((l1 - eq1.total).abs() <= 1e-9, "scale invariance (no negatives): {l1} vs {}", eq1.total);
        }
    }
    Ok(format!("N=1 zero, ln N, + ln 2 (max dev {worst:.1e}), scale invariance"))
}

/// Encoder + objective loss for a fixed batch, as a function of the
/// parameters, and the analytic gradient from backward().
struct EncoderCase {
    params: EncoderParams,
    views_a: Vec<Vec<u32>>,
    views_b: Vec<Vec<u32>>,
    negatives: Vec<Vec<u32>>,
    tau: f64,
}

impl EncoderCase {
    fn stack(&self, params: &EncoderParams, views: &[Vec<u32>], seed0: u64) -> (Array2<f64>, Vec<cards::encoder::ForwardCache>) {
        let caches: Vec<_> = views
            .iter()
            .enumerate()
            .map(|(i, ids)| forward_cached(params, ids, 0.1, Some(seed0 + i as u64)).expect("forward"))
            .collect();
        let mut m = Array2::zeros((views.len(), params.dim()));
        for (i, c) in caches.iter().enumerate() {
            m.row_mut(i).assign(&c.output().0);
        }
        (m, caches)
    }

    fn loss(&self, params: &EncoderParams) -> f64 {
        let (a, _) = self.stack(params, &self.views_a, 100);
        let (p, _) = self.stack(params, &self.views_b, 200);
        let (n, _) = self.stack(params, &self.negatives, 300);
        info_nce_hard(a.view(), p.view(), n.view(), self.tau, HardNegativeOptions::default())
            .expect("loss")
            .total
    }

    fn analytic(&self) -> EncoderGrads {
        let (a, ca) = self.stack(&self.params, &self.views_a, 100);
        let (p, cp) = self.stack(&self.params, &self.views_b, 200);
        let (n, cn) = self.stack(&self.params, &self.negatives, 300);
        let (_, g) = grad_info_nce_hard(a.view(), p.view(), Some(n.view()), self.tau, HardNegativeOptions::default())
            .expect("grad");
        let mut grads = EncoderGrads::zeros(self.params.dim());
        for (c, row) in ca.iter().zip(g.anchors.axis_iter(Axis(0))) {
            backward(&self.params, c, row, &mut grads);
        }
        for (c, row) in cp.iter().zip(g.positives.axis_iter(Axis(0))) {
            backward(&self.params, c, row, &mut grads);
        }
        for (c, row) in cn.iter().zip(g.negatives.as_ref().expect("negatives").axis_iter(Axis(0))) {
            backward(&self.params, c, row, &mut grads);
        }
        grads
    }
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for inst in 0..40 {
        let n = rng.gen_range(1..=5);
        let d = rng.gen_range(2..=8);
        let tau = if inst % 2 == 0 { 0.05 } else { 1.0 };
        let a = random_matrix(&mut rng, n, d);
        let p = random_matrix(&mut rng, n, d);
        let with_neg = inst % 3 != 0;
        let s = rng.gen_range(1..=2);
        let neg = random_matrix(&mut rng, n * s, d);
        let negv = with_neg.then(|| neg.view());
        let (_, g) = grad_info_nce_hard(a.view(), p.view(), negv, tau, HardNegativeOptions::default())
            .map_err(|e| e.to_string())?;
        let lossf = |a: &Array2<f64>, p: &Array2<f64>, ng: &Array2<f64>| naive_contrastive(a.view(), p.view(), with_neg.then(|| ng.view()), tau);
        let na = numeric_gradient(&a, h, |x| lossf(x, &p, &neg));
        let np = numeric_gradient(&p, h, |x| lossf(&a, x, &neg));
        let mut errs = vec![relative_error(&g.anchors, &na), relative_error(&g.positives, &np)];
        if with_neg {
            let nn = numeric_gradient(&neg, h, |x| lossf(&a, &p, x));
            errs.push(relative_error(g.negatives.as_ref().expect("negatives"), &nn));
        }
        let e = errs.iter().copied().fold(0.0, f64::max);
        worst = worst.max(e);
        ensure!(e < 1e-4, "objective instance {inst} (tau {tau}): relative error {e:e}");
    }

    for inst in 0..10 {
        let vocab = 40;
        let d = rng.gen_range(3..=6);
        let n = rng.gen_range(2..=4);
        let mut params = EncoderParams::init(vocab, d, inst).map_err(|e| e.to_string())?;
        params.token_embeddings.mapv_inplace(|v| v * 5.0);
        let seq = |rng: &mut ChaCha8Rng| (0..rng.gen_range(1..=6)).map(|_| rng.gen_range(0..vocab as u32)).collect::<Vec<_>>();
        let case = EncoderCase {
            views_a: (0..n).map(|_| seq(&mut rng)).collect(),
            views_b: (0..n).map(|_| seq(&mut rng)).collect(),
            negatives: (0..n).map(|_| seq(&mut rng)).collect(),
            tau: if inst % 2 == 0 { 0.05 } else { 1.0 },
            params,
        };
        let grads = case.analytic();

        let mut probe = case.params.clone();
        let emb_numeric = numeric_gradient(&case.params.token_embeddings, h, |m| {
            probe.token_embeddings.assign(m);
            case.loss(&probe)
        });
        let mut emb_analytic = Array2::<f64>::zeros((vocab, d));
        for (&id, g) in &grads.token_embeddings {
            emb_analytic.row_mut(id as usize).assign(g);
        }
        let mut probe = case.params.clone();
        let proj_numeric = numeric_gradient(&case.params.projection, h, |m| {
            probe.projection.assign(m);
            case.loss(&probe)
        });
        let mut probe = case.params.clone();
        let bias2 = case.params.bias.clone().insert_axis(Axis(0));
        let bias_numeric = numeric_gradient(&bias2, h, |m| {
            probe.bias.assign(&m.row(0));
            case.loss(&probe)
        });
        let errs = [
            relative_error(&emb_analytic, &emb_numeric),
            relative_error(&grads.projection, &proj_numeric),
            relative_error(&grads.bias, bias_numeric.row(0)),
        ];
        let e = errs.iter().copied().fold(0.0, f64::max);
        worst = worst.max(e);
        ensure!(e < 1e-4, "encoder instance {inst}: relative errors {errs:?}");
    }
    Ok(format!("40 objective + 10 end-to-end encoder instances, max relative error {worst:.1e}"))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut queries = 0;
    for inst in 0..50 {
        let n = rng.gen_range(2..=2000);
        let d = rng.gen_range(1..=64);
        let mut m = Array2::from_shape_simple_fn((n, d), || rng.gen_range(-1.0f32..1.0));
        for _ in 0..n / 10 {
            let (src, dst) = (rng.gen_range(0..n), rng.gen_range(0..n));
            let row = m.row(src).to_owned();
            m.row_mut(dst).assign(&row);
        }
        let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 7 + 3).collect();
        ids.reverse();
        let index = NegativeIndex::build(&ids, m.view()).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let q = rng.gen_range(0..n);
            let k = rng.gen_range(1..=(n - 1).min(64));
            let got: Vec<(u64, f64)> = index
                .top_k(ids[q], k)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|nb| (nb.id, nb.cosine))
                .collect();
            let want = brute_top_k(&ids, index.vectors(), q, k);
            ensure!(got == want, "index {inst} (n={n}, d={d}), query {}, k={k}: {got:?} != {want:?}", ids[q]);
            ensure!(got.iter().all(|(id, _)| *id != ids[q]), "query {} returned itself", ids[q]);
            queries += 1;
        }
    }
    Ok(format!("50 indexes, {queries} queries identical to the full scan"))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 21;
    let m = Array2::from_shape_simple_fn((n, 8), || rng.gen_range(-1.0f32..1.0));
    let ids: Vec<u64> = (0..n as u64).collect();
    let index = NegativeIndex::build(&ids, m.view()).map_err(|e| e.to_string())?;

    let top = RetrievalConfig { k: 8, s: 3, strategy: Strategy::RTop };
    let first = index.sample_negatives(0, &top, &mut ChaCha8Rng::seed_from_u64(1)).map_err(|e| e.to_string())?;
    let expected: Vec<u64> = index.top_k(0, 3).map_err(|e| e.to_string())?.iter().map(|nb| nb.id).collect();
    ensure!(first == expected, "R_top is not the top-s prefix");
    for seed in 2..50 {
        let again = index.sample_negatives(0, &top, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
        ensure!(again == first, "R_top depends on the seed");
    }

    let uni = RetrievalConfig { k: 8, s: 2, strategy: Strategy::RUniform };
    let pool: HashSet<u64> = index.top_k(0, 8).map_err(|e| e.to_string())?.iter().map(|nb| nb.id).collect();
    let mut seen = HashSet::new();
    for _ in 0..2000 {
        for id in index.sample_negatives(0, &uni, &mut rng).map_err(|e| e.to_string())? {
            ensure!(pool.contains(&id), "R_uniform drew {id} outside the top-k");
            seen.insert(id);
        }
    }
    ensure!(seen == pool, "R_uniform never drew some of the top-k");

    let d_uni = RetrievalConfig { k: 8, s: 1, strategy: Strategy::DUniform };
    let draws = 10_000;
    let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
    let mut draw_rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..draws {
        let id = index.sample_negatives(5, &d_uni, &mut draw_rng).map_err(|e| e.to_string())?[0];
        ensure!(id != 5, "D_uniform returned the query");
        *counts.entry(id).or_insert(0) += 1;
    }
    let cells = (n - 1) as f64;
    let expected = draws as f64 / cells;
    let chi2: f64 = (0..n as u64)
        .filter(|&id| id != 5)
        .map(|id| {
            let c = *counts.get(&id).unwrap_or(&0) as f64;
            (c - expected).powi(2) / expected
        })
        .sum();
    let df = cells - 1.0;
    let bound = df + 3.0 * (2.0 * df).sqrt();
    ensure!(chi2 <= bound, "chi-square {chi2:.2} above {bound:.2}");
    Ok(format!("R_top fixed over 49 seeds; R_uniform ⊆ top-8; D_uniform chi2 {chi2:.2} ≤ {bound:.2} (df {df})"))
}

fn criterion_8() -> Outcome {
    let err = |e: cards::Error| e.to_string();
    let gold = [0.5, 1.0, 2.5, 3.0, 4.5];
    ensure!(spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &gold).map_err(err)? == 1.0, "increasing != 1");
    ensure!(spearman(&[5.0, 4.0, 3.0, 2.0, 1.0], &gold).map_err(err)? == -1.0, "reversed != -1");
    let tied = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).map_err(err)?;
    let oracle = spearman_oracle(&[1.0, 2.0, 2.0, 4.0], &[1.0, 2.0, 3.0, 4.0]);
    ensure!((tied - oracle).abs() <= 1e-9, "tied example {tied} vs oracle {oracle}");
    ensure!((tied - 0.9487).abs() < 1e-4, "tied example {tied} is not ≈0.9487");

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for v in 0..100 {
        let n = rng.gen_range(3..60);
        let pred: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..20) as f64) * 0.25 - 2.0).collect();
        let gold: Vec<f64> = (0..n).map(|_| rng.gen_range(0..11) as f64 * 0.5).collect();
        let Ok(r) = spearman(&pred, &gold) else { continue };
        ensure!((r - spearman_oracle(&pred, &gold)).abs() <= 1e-9, "vector {v}: disagrees with oracle");
        let transformed: Vec<f64> = pred.iter().map(|x| (x * 0.7).exp() + x.powi(3)).collect();
        let r2 = spearman(&transformed, &gold).map_err(err)?;
        ensure!((r - r2).abs() <= 1e-12, "vector {v}: {r} changed to {r2} under a monotone map");
    }
    Ok(format!("extremes exact, tied example {tied:.6}, 100 random vectors invariant"))
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const POOLS: [&[char]; 4] = [
        &[' ', ' ', '\t', '\n', 'a', 'Z', 'é', '\'', 's', '1', '.', '-'],
        &['日', '本', 'ß', 'Ω', 'ж', 'ñ', '😀', '🇺', '\u{200d}', '\u{301}', 'İ', 'ǅ'],
        &['\r', '\u{a0}', '\u{2028}', '\u{feff}', '\0', '\u{7f}', '\u{ffff}', '\u{10ffff}'],
        &['t', 'h', 'e', ' ', 'n', 'o', 'r', 'l', 'd', 'I', 'T', '\''],
    ];
    let len = rng.gen_range(0..40);
    (0..len)
        .map(|_| match rng.gen_range(0..5) {
            4 => rng.gen::<char>(),
            p => {
                let pool = POOLS[p];
                pool[rng.gen_range(0..pool.len())]
            }
        })
        .collect()
}

fn criterion_9() -> Outcome {
    let tok = gpt2_tokenizer();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..10_000 {
        let s = random_text(&mut rng);
        let back = tok.decode(&tok.encode(&s).ids).map_err(|e| e.to_string())?;
        ensure!(back == s, "random string {i} {s:?} decoded to {back:?}");
    }
    let lines = read_lines(&data_dir().join("wiki_sample.txt")).map_err(|e| e.to_string())?;
    for (i, s) in lines.iter().enumerate() {
        let back = tok.decode(&tok.encode(s).ids).map_err(|e| e.to_string())?;
        ensure!(&back == s, "wiki line {} does not round-trip", i + 1);
    }
    Ok(format!("10000 random strings and {} sample sentences", lines.len()))
}

/// Settings shared by the synthetic learning-signal runs.
fn synthetic_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        epochs: 20,
        eval_every: 25,
        k: 8,
        s: 1,
        strategy: Strategy::RUniform,
        ..TrainConfig::default()
    }
}

fn criterion_10() -> Outcome {
    let tok = gpt2_tokenizer();
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let corpus = paraphrase_corpus(200, 40, seed).map_err(|e| e.to_string())?;
        let cfg = synthetic_config(seed);
        let init = EncoderParams::init(tok.vocab_size(), cfg.dim, seed).map_err(|e| e.to_string())?;
        let vectors = encode_corpus(&init, &tok, &corpus.train, cfg.max_tokens).map_err(|e| e.to_string())?;
        let index = NegativeIndex::from_vectors(&vectors).map_err(|e| e.to_string())?;
        let hard = train(&corpus.train, &tok, Some(&index), &corpus.dev, &cfg, false).map_err(|e| e.to_string())?;
        let plain_cfg = TrainConfig { retrieval: false, ..cfg };
        let plain = train(&corpus.train, &tok, None, &corpus.dev, &plain_cfg, false).map_err(|e| e.to_string())?;
        let (start, end, base) = (hard.initial_dev_score(), hard.final_dev_score(), plain.final_dev_score());
        ensure!(end > start, "seed {seed}: dev spearman {end:.4} not above step-0 {start:.4}");
        if end >= base {
            wins += 1;
        }
        lines.push(format!("{start:.3}->{end:.3} vs {base:.3}"));
    }
    ensure!(wins >= 4, "hard negatives matched the in-batch baseline in only {wins}/5 seeds: {}", lines.join(", "));
    Ok(format!("{wins}/5 seeds; {}", lines.join(", ")))
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = paraphrase_corpus(40, 6, 11).map_err(|e| e.to_string())?;
    let corpus_path = dir.path().join("corpus.txt");
    let dev_path = dir.path().join("dev.tsv");
    let text: String = corpus.train.iter().map(|s| format!("{}\n", s.text)).collect();
    let dev: String = corpus
        .dev
        .iter()
        .map(|e: &StsExample| format!("{}\t{}\t{}\n", e.sent_a, e.sent_b, e.gold))
        .collect();
    fs::write(&corpus_path, text).map_err(|e| e.to_string())?;
    fs::write(&dev_path, dev).map_err(|e| e.to_string())?;
    let data = data_dir();
    let run = |out: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(out);
        let status = Command::new(env!("CARGO_BIN_EXE_cards"))
            .args(["--seed", "5", "--deterministic", "train", "--batch-size", "16", "--epochs", "2", "--eval-every", "3"])
            .arg("--corpus")
            .arg(&corpus_path)
            .arg("--dev")
            .arg(&dev_path)
            .arg("--vocab")
            .arg(data.join("vocab.json"))
            .arg("--merges")
            .arg(data.join("merges.txt"))
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(status.status.success(), "train failed: {}", String::from_utf8_lossy(&status.stderr));
        fs::read(out.join("metrics.jsonl")).map_err(|e| e.to_string())
    };
    let a = run("a")?;
    let b = run("b")?;
    ensure!(a == b, "metric logs differ");
    let records = a.iter().filter(|&&c| c == b'\n').count();
    ensure!(records >= 3, "only {records} metric records");
    Ok(format!("{records} records, {} bytes, identical", a.len()))
}

fn orthonormal(c: &Array2<f64>) -> bool {
    let g = c.dot(&c.t());
    (g[[0, 0]] - 1.0).abs() <= 1e-9 && (g[[1, 1]] - 1.0).abs() <= 1e-9 && g[[0, 1]].abs() <= 1e-9
}

fn criterion_12() -> Outcome {
    let err = |e: cards::Error| e.to_string();
    let fixture = array![[1.0, 0.0], [-1.0, 0.0], [0.0, 0.5], [0.0, -0.5]];
    let pca = pca_2d(fixture.view()).map_err(err)?;
    ensure!((pca.explained_variance[0] - 2.0 / 3.0).abs() <= 1e-9, "PC1 variance {}", pca.explained_variance[0]);
    ensure!((pca.explained_variance[1] - 1.0 / 6.0).abs() <= 1e-9, "PC2 variance {}", pca.explained_variance[1]);
    let axes = array![[1.0, 0.0], [0.0, 1.0]];
    ensure!((&pca.components - &axes).iter().all(|d| d.abs() <= 1e-9), "axes {:?}", pca.components);

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for t in 0..20 {
        let (n, d) = (rng.gen_range(3..=100), rng.gen_range(2..=8));
        let stretch = Array1::from_shape_fn(d, |j| 1.0 + j as f64);
        let m = random_matrix(&mut rng, n, d) * &stretch;
        let pca = pca_2d(m.view()).map_err(err)?;
        ensure!(orthonormal(&pca.components), "trial {t}: components not orthonormal");
        ensure!(pca.explained_variance[0] >= pca.explained_variance[1], "trial {t}: variances out of order");
        let proj_var = pca.projections.var_axis(Axis(0), 1.0);
        ensure!(proj_var[0] >= proj_var[1], "trial {t}: projected variance out of order");

        let mean = m.mean_axis(Axis(0)).expect("rows");
        let centered = &m - &mean;
        let cov = centered.t().dot(&centered) / (n - 1) as f64;
        let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (c, &col) in order[..2].iter().enumerate() {
            let v = eig.eigenvectors.column(col);
            let sign = if v.dot(&DMatrix::from_fn(d, 1, |i, _| pca.components[[c, i]]).column(0)) < 0.0 { -1.0 } else { 1.0 };
            for r in 0..n {
                let want: f64 = (0..d).map(|j| centered[[r, j]] * v[j] * sign).sum();
                let diff = (want - pca.projections[[r, c]]).abs();
                worst = worst.max(diff);
                ensure!(diff <= 1e-6, "trial {t}: projection differs from reference by {diff:e}");
            }
            let dv = (eig.eigenvalues[col] - pca.explained_variance[c]).abs();
            ensure!(dv <= 1e-9, "trial {t}: variance differs from reference by {dv:e}");
        }
    }
    Ok(format!("fixture exact, 20 random matrices match the reference (max {worst:.1e})"))
}

fn main() {
    let results = [
        check(1, "example-word tokenizations and classes", Some(Duration::from_secs(1)), criterion_1),
        check(2, "switch-case corpus statistics", Some(Duration::from_secs(120)), criterion_2),
        check(3, "loss oracle equivalence", Some(Duration::from_secs(10)), criterion_3),
        check(4, "analytic loss identities", None, criterion_4),
        check(5, "gradient checks", Some(Duration::from_secs(30)), criterion_5),
        check(6, "retrieval exactness", Some(Duration::from_secs(30)), criterion_6),
        check(7, "sampling strategies", None, criterion_7),
        check(8, "spearman", None, criterion_8),
        check(9, "tokenizer roundtrip", Some(Duration::from_secs(60)), criterion_9),
        check(10, "end-to-end learning signal", Some(Duration::from_secs(300)), criterion_10),
        check(11, "deterministic training", None, criterion_11),
        check(12, "PCA invariants and fixture", None, criterion_12),
    ];
    let failed = results.iter().filter(|&&ok| !ok).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
