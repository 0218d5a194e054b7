//! Reference implementations used as test oracles. Each one is written
//! directly from the definition, without sharing code with the library.

#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::{Array2, ArrayView1, ArrayView2};

use cards::tokenizer::Tokenizer;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn gpt2_tokenizer() -> Tokenizer {
    let d = data_dir();
    Tokenizer::load(&d.join("vocab.json"), &d.join("merges.txt")).expect("tokenizer files load")
}

fn cos(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Mean over i of −log(exp(c_ii/τ) / (Σ_j exp(c_ij/τ) + Σ_m exp(cos(h_i, h⁻_m)/τ))),
/// evaluated literally with no max subtraction.
pub fn naive_contrastive(a: ArrayView2<'_, f64>, p: ArrayView2<'_, f64>, neg: Option<ArrayView2<'_, f64>>, tau: f64) -> f64 {
    let n = a.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let num = (cos(a.row(i), p.row(i)) / tau).exp();
        let mut den = 0.0;
        for j in 0..n {
            den += (cos(a.row(i), p.row(j)) / tau).exp();
        }
        if let Some(neg) = neg {
            for m in 0..neg.nrows() {
                den += (cos(a.row(i), neg.row(m)) / tau).exp();
            }
        }
        total += -(num / den).ln();
    }
    total / n as f64
}

/// Central finite differences of `f` at every coordinate of `x`.
pub fn numeric_gradient(x: &Array2<f64>, h: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut grad = Array2::zeros(x.dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe);
        probe[idx] = orig - h;
        let down = f(&probe);
        probe[idx] = orig;
        grad[idx] = (up - down) / (2.0 * h);
    }
    grad
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), or the absolute difference when both are ~0.
pub fn relative_error<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.into_iter().zip(b) {
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let scale = na.sqrt().max(nb.sqrt());
    if scale < 1e-12 {
        diff.sqrt()
    } else {
        diff.sqrt() / scale
    }
}

/// Top-k by a full scan: cosine over the stored unit rows, accumulated in f64
/// in index order, sorted by descending cosine then ascending id.
pub fn brute_top_k(ids: &[u64], unit_rows: ArrayView2<'_, f32>, query: usize, k: usize) -> Vec<(u64, f64)> {
    let q = unit_rows.row(query);
    let mut all: Vec<(u64, f64)> = (0..ids.len())
        .filter(|&r| r != query)
        .map(|r| {
            let mut acc = 0.0f64;
            for (x, y) in q.iter().zip(unit_rows.row(r)) {
                acc += f64::from(*x) * f64::from(*y);
            }
            (ids[r], acc)
        })
        .collect();
    all.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    all.truncate(k);
    all
}

/// Spearman via ranks counted pairwise: rank(x) = #{less} + (#{equal} + 1) / 2.
pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
