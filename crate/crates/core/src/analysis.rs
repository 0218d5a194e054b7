//! Token-embedding bias analysis: label vocabulary entries as lower/upper
//! beginning tokens or sub-tokens, project embeddings to 2D with PCA and
//! summarize how far apart the classes sit.

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{Tokenizer, WORD_MARKER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CaseClass {
    LowerBeginning,
    UpperBeginning,
    SubToken,
    NonAlpha,
}

impl CaseClass {
    pub const ALL: [CaseClass; 4] = [
        CaseClass::LowerBeginning,
        CaseClass::UpperBeginning,
        CaseClass::SubToken,
        CaseClass::NonAlpha,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CaseClass::LowerBeginning => "lower_beginning",
            CaseClass::UpperBeginning => "upper_beginning",
            CaseClass::SubToken => "sub_token",
            CaseClass::NonAlpha => "non_alpha",
        }
    }

    /// Class of a vocabulary entry in its byte-to-unicode spelling.
    pub fn of_token(token: &str) -> CaseClass {
        let Some(first_alpha) = token.chars().filter(|&c| c != WORD_MARKER).find(|c| c.is_alphabetic()) else {
            return CaseClass::NonAlpha;
        };
        if !token.starts_with(WORD_MARKER) {
            CaseClass::SubToken
        } else if first_alpha.is_uppercase() {
            CaseClass::UpperBeginning
        } else {
            CaseClass::LowerBeginning
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLabel {
    pub token_id: u32,
    pub token: String,
    pub case_class: CaseClass,
    pub frequency: u64,
}

/// One label per vocabulary id, in id order. Frequencies count occurrences in
/// the encoded corpus, or stay zero without one.
pub fn label_tokens<S: AsRef<str> + Sync>(tokenizer: &Tokenizer, corpus: Option<&[S]>) -> Vec<TokenLabel> {
    let mut counts = vec![0u64; tokenizer.vocab_size()];
    if let Some(lines) = corpus {
        let partial: Vec<HashMap<u32, u64>> = lines
            .par_iter()
            .map(|line| {
                let mut m = HashMap::new();
                for id in tokenizer.encode(line.as_ref()).ids {
                    *m.entry(id).or_insert(0) += 1;
                }
                m
            })
            .collect();
        for m in partial {
            for (id, c) in m {
                counts[id as usize] += c;
            }
        }
    }
    tokenizer
        .vocab()
        .tokens()
        .map(|(id, token)| TokenLabel {
            token_id: id,
            token: token.to_string(),
            case_class: CaseClass::of_token(token),
            frequency: counts[id as usize],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca2d {
    /// `[n × 2]`
    pub projections: Array2<f64>,
    /// Rows are the two principal axes, `[2 × d]`.
    pub components: Array2<f64>,
    pub explained_variance: [f64; 2],
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_SWEEPS: usize = 100;
const RANK_TOL: f64 = 1e-12;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and eigenvectors (as columns), unsorted.
pub fn symmetric_eigen(matrix: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::invalid("matrix is not square"));
    }
    let mut a = matrix.to_owned();
    let mut v = Array2::<f64>::eye(n);
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _ in 0..JACOBI_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * scale {
            return Ok((a.diag().to_owned(), v));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(Error::invalid("Jacobi eigensolver did not converge"))
}

/// Top two principal components of the mean-centered rows. Covariance uses
/// the `n - 1` denominator. Each axis is signed so that its largest-magnitude
/// entry is positive.
pub fn pca_2d(matrix: ArrayView2<'_, f64>) -> Result<Pca2d> {
    let (n, d) = matrix.dim();
    if n < 3 || d < 2 {
        return Err(Error::invalid(format!("PCA needs at least 3 rows and 2 columns, got {n}x{d}")));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix contains non-finite values"));
    }
    let mean = matrix.mean_axis(Axis(0)).expect("n >= 3");
    let centered = &matrix - &mean;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    let (values, vectors) = symmetric_eigen(cov.view())?;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let top = values[order[0]].max(0.0);
    if top == 0.0 || values[order[1]] <= RANK_TOL * top {
        return Err(Error::invalid("data has rank < 2 after centering"));
    }
    let mut components = Array2::zeros((2, d));
    for (row, &col) in order[..2].iter().enumerate() {
        let mut axis = vectors.column(col).to_owned();
        let pivot = axis.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            axis.mapv_inplace(|x| -x);
        }
        components.row_mut(row).assign(&axis);
    }
    Ok(Pca2d {
        projections: centered.dot(&components.t()),
        components,
        explained_variance: [values[order[0]], values[order[1]]],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationSummary {
    /// Class and 2D centroid, for classes that have at least one token.
    pub centroids: Vec<(CaseClass, [f64; 2])>,
    /// Euclidean distance between each pair of centroids.
    pub centroid_distances: Vec<(CaseClass, CaseClass, f64)>,
    /// Mean distance of points to their own class centroid.
    pub intra_class_mean: f64,
}

pub fn separation_summary(projections: ArrayView2<'_, f64>, labels: &[TokenLabel]) -> Result<SeparationSummary> {
    if projections.nrows() != labels.len() || projections.ncols() != 2 {
        return Err(Error::invalid(format!(
            "{} projected rows of width {} for {} labels",
            projections.nrows(),
            projections.ncols(),
            labels.len()
        )));
    }
    let mut centroids = Vec::new();
    for class in CaseClass::ALL {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].case_class == class).collect();
        if rows.is_empty() {
            continue;
        }
        let sel = projections.select(Axis(0), &rows);
        let m = sel.mean_axis(Axis(0)).expect("non-empty");
        centroids.push((class, [m[0], m[1]]));
    }
    let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let mut centroid_distances = Vec::new();
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            centroid_distances.push((centroids[i].0, centroids[j].0, dist(centroids[i].1, centroids[j].1)));
        }
    }
    let lookup: HashMap<CaseClass, [f64; 2]> = centroids.iter().copied().collect();
    let intra_class_mean = labels
        .iter()
        .enumerate()
        .map(|(i, l)| dist([projections[[i, 0]], projections[[i, 1]]], lookup[&l.case_class]))
        .sum::<f64>()
        / labels.len().max(1) as f64;
    Ok(SeparationSummary {
        centroids,
        centroid_distances,
        intra_class_mean,
    })
}

/// TSV rows `token, x, y, case_class, frequency`, followed by a summary block
/// of class centroids and distances. Summary lines start with `"# "`; a token
/// column never contains a raw space, so the prefix is unambiguous.
pub fn bias_report(embeddings: ArrayView2<'_, f64>, labels: &[TokenLabel]) -> Result<String> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::invalid(format!(
            "{} embedding rows for {} token labels",
            embeddings.nrows(),
            labels.len()
        )));
    }
    let pca = pca_2d(embeddings)?;
    let summary = separation_summary(pca.projections.view(), labels)?;
    Ok(format_report(pca.projections.view(), labels, &pca, &summary))
}

fn escape(token: &str) -> String {
    token.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn format_report(proj: ArrayView2<'_, f64>, labels: &[TokenLabel], pca: &Pca2d, summary: &SeparationSummary) -> String {
    let mut out = String::from("token\tx\ty\tcase_class\tfrequency\n");
    for (i, l) in labels.iter().enumerate() {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{}\t{}",
            escape(&l.token),
            proj[[i, 0]],
            proj[[i, 1]],
            l.case_class.name(),
            l.frequency
        );
    }
    let _ = writeln!(
        out,
        "# explained_variance\t{:.6}\t{:.6}",
        pca.explained_variance[0], pca.explained_variance[1]
    );
    for (class, c) in &summary.centroids {
        let _ = writeln!(out, "# centroid\t{}\t{:.6}\t{:.6}", class.name(), c[0], c[1]);
    }
    for (a, b, d) in &summary.centroid_distances {
        let _ = writeln!(out, "# centroid_distance\t{}\t{}\t{:.6}", a.name(), b.name(), d);
    }
    let _ = writeln!(out, "# intra_class_mean_distance\t{:.6}", summary.intra_class_mean);
    out
}
