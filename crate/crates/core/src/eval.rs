//! STS-style evaluation: Spearman rank correlation between cosine
//! similarities of encoded sentence pairs and gold scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{capitalize_first, lowercase_transform};
use crate::corpus::{truncate_tokens, StsExample};
use crate::encoder::{forward, EncoderParams};
use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

/// Fractional (average) ranks, 1-based.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("one of the inputs has zero rank variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn spearman(pred: &[f64], gold: &[f64]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predictions, {} gold scores",
            pred.len(),
            gold.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least two observations".into()));
    }
    if pred.iter().chain(gold).any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN in correlation input"));
    }
    pearson(&average_ranks(pred), &average_ranks(gold))
}

/// Text transforms applied to both sentences of every pair before encoding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalTransform {
    /// Uppercase the first letter of each sentence.
    pub capitalize_first: bool,
    /// Lowercase everything (applied after capitalization).
    pub lowercase: bool,
}

impl EvalTransform {
    pub fn apply(&self, text: &str) -> String {
        let mut out = if self.capitalize_first {
            capitalize_first(text)
        } else {
            text.to_string()
        };
        if self.lowercase {
            out = lowercase_transform(&out);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_set: Vec<(String, f64)>,
    pub average: f64,
}

/// Cosine similarity of each pair under the dropout-free encoder.
pub fn pair_similarities(
    params: &EncoderParams,
    tokenizer: &Tokenizer,
    examples: &[StsExample],
    transform: EvalTransform,
    max_tokens: usize,
) -> Result<Vec<f64>> {
    let encode = |text: &str| {
        let ids = truncate_tokens(&tokenizer.encode(&transform.apply(text)), max_tokens).ids;
        forward(params, &ids, 0.0, None)
    };
    examples
        .par_iter()
        .map(|ex| Ok(encode(&ex.sent_a)?.cosine(&encode(&ex.sent_b)?)))
        .collect()
}

/// Spearman score of one dataset.
pub fn score_dataset(
    params: &EncoderParams,
    tokenizer: &Tokenizer,
    examples: &[StsExample],
    transform: EvalTransform,
    max_tokens: usize,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty dataset"));
    }
    let pred = pair_similarities(params, tokenizer, examples, transform, max_tokens)?;
    let gold: Vec<f64> = examples.iter().map(|e| e.gold).collect();
    spearman(&pred, &gold)
}

/// Per-dataset Spearman scores and their unweighted mean.
pub fn evaluate_sts(
    params: &EncoderParams,
    tokenizer: &Tokenizer,
    datasets: &[(String, Vec<StsExample>)],
    transform: EvalTransform,
    max_tokens: usize,
) -> Result<EvalReport> {
    params.validate()?;
    if datasets.is_empty() {
        return Err(Error::invalid("no evaluation datasets given"));
    }
    let mut per_set = Vec::with_capacity(datasets.len());
    for (name, examples) in datasets {
        per_set.push((name.clone(), score_dataset(params, tokenizer, examples, transform, max_tokens)?));
    }
    let average = per_set.iter().map(|(_, s)| s).sum::<f64>() / per_set.len() as f64;
    Ok(EvalReport { per_set, average })
}
