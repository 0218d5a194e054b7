//! Contrastive objectives over cosine similarities.
//!
//! For first views `h_i`, second views `h'_i` and (optionally) hard
//! negatives `h⁻_m`, sample `i` has loss
//!
//! ```text
//! l_i = -log( exp(cos(h_i, h'_i)/τ) / Σ_j [exp(cos(h_i, h'_j)/τ) + Σ_m∈neg(j) exp(cos(h_i, h⁻_m)/τ)] )
//! ```
//!
//! Every hard negative of the batch appears in every sample's denominator.
//! The reported total is the mean over the batch. Evaluation subtracts the
//! row maximum before exponentiating.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub per_sample: Vec<f64>,
}

/// Gradients of the mean loss with respect to each input matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub anchors: Array2<f64>,
    pub positives: Array2<f64>,
    pub negatives: Option<Array2<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HardNegativeOptions {
    /// Drop sample `i`'s own negatives from its denominator.
    pub exclude_self_negative: bool,
}

struct Normalized {
    unit: Array2<f64>,
    norms: Array1<f64>,
}

fn normalize(name: &str, m: ArrayView2<'_, f64>) -> Result<Normalized> {
    let mut unit = m.to_owned();
    let mut norms = Array1::zeros(m.nrows());
    for (i, mut row) in unit.rows_mut().into_iter().enumerate() {
        if !row.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("{name} row {i} has non-finite entries")));
        }
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            return Err(Error::invalid(format!("{name} row {i} has zero norm")));
        }
        row /= norm;
        norms[i] = norm;
    }
    Ok(Normalized { unit, norms })
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("temperature must be positive, got {tau}")))
    }
}

/// Gradient of `cos(a, b)` with respect to `a` is `(b̂ - cos·â) / |a|`.
fn accumulate_cos_grad(
    target: &mut Array2<f64>,
    target_unit: &Array2<f64>,
    target_norms: &Array1<f64>,
    other_unit: &Array2<f64>,
    cos: &Array2<f64>,
    weights: &Array2<f64>,
    transpose: bool,
) {
    // Non-transposed: rows of `target` index rows of `weights`;
    // transposed: rows of `target` index columns.
    for t in 0..target.nrows() {
        let mut g = target.row_mut(t);
        let nw = if transpose { weights.nrows() } else { weights.ncols() };
        for o in 0..nw {
            let (w, c) = if transpose {
                (weights[[o, t]], cos[[o, t]])
            } else {
                (weights[[t, o]], cos[[t, o]])
            };
            if w == 0.0 {
                continue;
            }
            let scale = w / target_norms[t];
            g.scaled_add(scale, &other_unit.row(o));
            g.scaled_add(-scale * c, &target_unit.row(t));
        }
    }
}

fn contrastive(
    anchors: ArrayView2<'_, f64>,
    positives: ArrayView2<'_, f64>,
    negatives: Option<ArrayView2<'_, f64>>,
    tau: f64,
    opts: HardNegativeOptions,
    want_grad: bool,
) -> Result<(LossValue, Option<LossGrads>)> {
    check_tau(tau)?;
    let n = anchors.nrows();
    if n == 0 {
        return Err(Error::invalid("batch must contain at least one sample"));
    }
    if positives.dim() != anchors.dim() {
        return Err(Error::invalid(format!(
            "anchor shape {:?} differs from positive shape {:?}",
            anchors.dim(),
            positives.dim()
        )));
    }
    let per_query = match negatives {
        Some(neg) => {
            if neg.ncols() != anchors.ncols() || neg.nrows() == 0 || neg.nrows() % n != 0 {
                return Err(Error::invalid(format!(
                    "negatives must be an [N·s × d] matrix with N = {n}, d = {}; got {:?}",
                    anchors.ncols(),
                    neg.dim()
                )));
            }
            neg.nrows() / n
        }
        None => 0,
    };

    let a = normalize("anchor", anchors)?;
    let p = normalize("positive", positives)?;
    let ng = negatives.map(|m| normalize("negative", m)).transpose()?;

    let cos_pos = a.unit.dot(&p.unit.t());
    let cos_neg = ng.as_ref().map(|ng| a.unit.dot(&ng.unit.t()));
    let m = cos_neg.as_ref().map_or(0, |c| c.ncols());
    let included = |i: usize, col: usize| !(opts.exclude_self_negative && col / per_query.max(1) == i);

    let mut per_sample = Vec::with_capacity(n);
    let mut w_pos = Array2::<f64>::zeros((n, n));
    let mut w_neg = Array2::<f64>::zeros((n, m));
    for i in 0..n {
        let mut logits: Vec<f64> = cos_pos.row(i).iter().map(|c| c / tau).collect();
        if let Some(cn) = &cos_neg {
            logits.extend((0..m).filter(|&col| included(i, col)).map(|col| cn[[i, col]] / tau));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        per_sample.push(lse - cos_pos[[i, i]] / tau);

        if want_grad {
            let coef = 1.0 / (tau * n as f64);
            for j in 0..n {
                w_pos[[i, j]] = ((cos_pos[[i, j]] / tau - lse).exp() - if i == j { 1.0 } else { 0.0 }) * coef;
            }
            if let Some(cn) = &cos_neg {
                for col in (0..m).filter(|&col| included(i, col)) {
                    w_neg[[i, col]] = (cn[[i, col]] / tau - lse).exp() * coef;
                }
            }
        }
    }
    let total = per_sample.iter().sum::<f64>() / n as f64;
    let loss = LossValue { total, per_sample };
    if !want_grad {
        return Ok((loss, None));
    }

    let mut g_a = Array2::zeros(anchors.dim());
    let mut g_p = Array2::zeros(positives.dim());
    accumulate_cos_grad(&mut g_a, &a.unit, &a.norms, &p.unit, &cos_pos, &w_pos, false);
    accumulate_cos_grad(&mut g_p, &p.unit, &p.norms, &a.unit, &cos_pos, &w_pos, true);
    let g_n = match (&ng, &cos_neg) {
        (Some(ng), Some(cn)) => {
            accumulate_cos_grad(&mut g_a, &a.unit, &a.norms, &ng.unit, cn, &w_neg, false);
            let mut g_n = Array2::zeros(ng.unit.dim());
            accumulate_cos_grad(&mut g_n, &ng.unit, &ng.norms, &a.unit, cn, &w_neg, true);
            Some(g_n)
        }
        _ => None,
    };
    Ok((
        loss,
        Some(LossGrads {
            anchors: g_a,
            positives: g_p,
            negatives: g_n,
        }),
    ))
}

/// In-batch InfoNCE with positives on the diagonal. The denominator includes
/// the positive term.
pub fn info_nce(anchors: ArrayView2<'_, f64>, positives: ArrayView2<'_, f64>, tau: f64) -> Result<LossValue> {
    contrastive(anchors, positives, None, tau, HardNegativeOptions::default(), false).map(|r| r.0)
}

/// InfoNCE with hard negatives shared across the whole batch. `negatives`
/// holds `s` rows per sample, grouped by sample.
pub fn info_nce_hard(
    anchors: ArrayView2<'_, f64>,
    positives: ArrayView2<'_, f64>,
    negatives: ArrayView2<'_, f64>,
    tau: f64,
    opts: HardNegativeOptions,
) -> Result<LossValue> {
    contrastive(anchors, positives, Some(negatives), tau, opts, false).map(|r| r.0)
}

/// Loss and analytic gradients of [`info_nce`] (no negatives) or
/// [`info_nce_hard`].
pub fn grad_info_nce_hard(
    anchors: ArrayView2<'_, f64>,
    positives: ArrayView2<'_, f64>,
    negatives: Option<ArrayView2<'_, f64>>,
    tau: f64,
    opts: HardNegativeOptions,
) -> Result<(LossValue, LossGrads)> {
    let (loss, grads) = contrastive(anchors, positives, negatives, tau, opts, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

const PROB_SUM_TOL: f64 = 1e-9;

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid(format!("{name} has negative or non-finite entries")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::invalid(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            if pi == 0.0 {
                0.0
            } else if qi == 0.0 {
                f64::INFINITY
            } else {
                pi * (pi / qi).ln()
            }
        })
        .sum()
}

/// `½·KL(p‖q) + ½·KL(q‖p)`; `+∞` when either direction lacks support.
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::invalid("distributions must share a non-empty support"));
    }
    check_distribution("p", p)?;
    check_distribution("q", q)?;
    Ok(0.5 * kl(p, q) + 0.5 * kl(q, p))
}

/// Softmax along rows, used to turn logits into the distributions compared
/// by [`symmetric_kl`].
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}
