//! Training loop: switch-case views, dropout positives, retrieved hard
//! negatives and plain SGD on the toy encoder, with periodic dev evaluation
//! and best-checkpoint selection.
//!
//! Every random choice of step `t` (batch augmentation, dropout seeds,
//! negative sampling) is drawn from stream `t` of a generator seeded with the
//! run seed, so results do not depend on whether batch assembly runs ahead on
//! a producer thread.

use std::collections::HashMap;
use std::sync::mpsc;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{augment_tokens, check_probability, lowercase_transform, AugmentConfig, AugmentVariant, CaseMode};
use crate::corpus::{truncate_tokens, Sentence, StsExample};
use crate::encoder::{backward, forward, forward_cached, EncoderGrads, EncoderParams, VectorSet};
use crate::error::{Error, Result};
use crate::eval::{score_dataset, EvalTransform};
use crate::objective::{grad_info_nce_hard, HardNegativeOptions};
use crate::retrieval::{NegativeIndex, RetrievalConfig, Strategy};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub p_sc: f64,
    pub tau: f64,
    pub k: usize,
    pub s: usize,
    pub strategy: Strategy,
    /// Use retrieved hard negatives; off reduces the objective to in-batch InfoNCE.
    pub retrieval: bool,
    pub exclude_self_negative: bool,
    pub batch_size: usize,
    pub dropout: f64,
    pub max_tokens: usize,
    pub eval_every: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub dim: usize,
    pub variant: AugmentVariant,
    /// Augment only the first view; otherwise both views are augmented
    /// independently.
    pub one_view_augment: bool,
    /// Lowercase text during training and/or evaluation.
    pub ignore_case: Option<CaseMode>,
    /// Uppercase the first letter of every dev sentence before encoding.
    pub eval_capitalize_first: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            p_sc: 0.1,
            tau: 0.05,
            k: 8,
            s: 1,
            strategy: Strategy::RUniform,
            retrieval: true,
            exclude_self_negative: false,
            batch_size: 64,
            dropout: 0.1,
            max_tokens: 32,
            eval_every: 125,
            epochs: 1,
            lr: 0.1,
            seed: 42,
            dim: 32,
            variant: AugmentVariant::Default,
            one_view_augment: true,
            ignore_case: None,
            eval_capitalize_first: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_probability("p_sc", self.p_sc)?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.batch_size == 0 || self.max_tokens == 0 || self.eval_every == 0 || self.epochs == 0 || self.dim == 0 {
            return Err(Error::invalid(
                "batch_size, max_tokens, eval_every, epochs and dim must all be at least 1",
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if self.retrieval {
            self.retrieval_config().validate()?;
        }
        Ok(())
    }

    pub fn retrieval_config(&self) -> RetrievalConfig {
        RetrievalConfig {
            k: self.k,
            s: self.s,
            strategy: self.strategy,
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            p_sc: self.p_sc,
            variant: self.variant,
            seed: self.seed,
        }
    }

    pub fn eval_transform(&self) -> EvalTransform {
        EvalTransform {
            capitalize_first: self.eval_capitalize_first,
            lowercase: self.ignore_case.is_some_and(CaseMode::in_evaluation),
        }
    }

    fn lowercase_training(&self) -> bool {
        self.variant == AugmentVariant::LowercaseAll || self.ignore_case.is_some_and(CaseMode::in_training)
    }

    /// Short name of the ablation this configuration corresponds to.
    pub fn ablation_name(&self) -> &'static str {
        let augmented = self.p_sc > 0.0 && self.variant != AugmentVariant::LowercaseAll;
        match (augmented, self.retrieval) {
            (false, false) => "simcse",
            (true, false) => "simcse+switch_case",
            (false, true) => "simcse+retrieval",
            (true, true) => "cards",
        }
    }

    /// First 16 hex digits of the SHA-256 of the JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    /// Mean training loss since the previous record; `None` before training.
    pub loss: Option<f64>,
    pub dev_score: f64,
    pub config_hash: String,
    pub ablation: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: EncoderParams,
    pub step: usize,
    pub dev_score: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub final_params: EncoderParams,
    pub log: Vec<MetricsRecord>,
}

impl TrainOutcome {
    pub fn metrics_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn final_dev_score(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.dev_score)
    }

    pub fn initial_dev_score(&self) -> f64 {
        self.log.first().map_or(f64::NAN, |r| r.dev_score)
    }
}

/// Encodes every sentence without dropout; used to build the static index
/// from the encoder before training.
pub fn encode_corpus(
    params: &EncoderParams,
    tokenizer: &Tokenizer,
    corpus: &[Sentence],
    max_tokens: usize,
) -> Result<VectorSet> {
    let rows: Vec<Vec<f64>> = corpus
        .par_iter()
        .map(|s| {
            let ids = truncate_tokens(&tokenizer.encode(&s.text), max_tokens).ids;
            forward(params, &ids, 0.0, None).map(|v| v.0.to_vec())
        })
        .collect::<Result<_>>()?;
    let d = params.dim();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let matrix = Array2::from_shape_vec((corpus.len(), d), flat).expect("rows have dimension d");
    VectorSet::from_f64(corpus.iter().map(|s| s.id).collect(), &matrix)
}

struct Item {
    view_a: Vec<u32>,
    view_b: Vec<u32>,
    seed_a: u64,
    seed_b: u64,
}

struct BatchPlan {
    step: usize,
    items: Vec<Item>,
    negatives: Vec<Vec<u32>>,
    negative_seed: u64,
}

struct Assembler<'a> {
    cfg: &'a TrainConfig,
    tokenizer: &'a Tokenizer,
    index: Option<&'a NegativeIndex>,
    texts: HashMap<u64, String>,
}

impl Assembler<'_> {
    fn tokens(&self, text: &str) -> Vec<u32> {
        truncate_tokens(&self.tokenizer.encode(text), self.cfg.max_tokens).ids
    }

    fn view(&self, text: &str, rng: &mut ChaCha8Rng) -> Vec<u32> {
        if self.cfg.variant == AugmentVariant::LowercaseAll {
            return self.tokens(text);
        }
        let seq = augment_tokens(text, self.tokenizer, &self.cfg.augment_config(), rng);
        truncate_tokens(&seq, self.cfg.max_tokens).ids
    }

    fn assemble(&self, step: usize, batch: &[u64]) -> Result<BatchPlan> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(step as u64 + 1);
        let mut items = Vec::with_capacity(batch.len());
        for id in batch {
            let text = &self.texts[id];
            let view_a = self.view(text, &mut rng);
            let view_b = if self.cfg.one_view_augment {
                self.tokens(text)
            } else {
                self.view(text, &mut rng)
            };
            let seed_a = rng.gen::<u64>();
            let seed_b = loop {
                let s = rng.gen::<u64>();
                if s != seed_a {
                    break s;
                }
            };
            items.push(Item {
                view_a,
                view_b,
                seed_a,
                seed_b,
            });
        }
        let negatives = match self.index {
            Some(index) if self.cfg.retrieval => index
                .attach_negatives(batch, &self.cfg.retrieval_config(), &mut rng)?
                .into_iter()
                .flatten()
                .map(|id| self.tokens(&self.texts[&id]))
                .collect(),
            _ => Vec::new(),
        };
        Ok(BatchPlan {
            step,
            items,
            negatives,
            negative_seed: rng.gen(),
        })
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// One SGD step; returns the batch loss.
fn sgd_step(params: &mut EncoderParams, plan: &BatchPlan, cfg: &TrainConfig) -> Result<f64> {
    let d = params.dim();
    let n = plan.items.len();
    let caches_a: Vec<_> = plan
        .items
        .iter()
        .map(|it| forward_cached(params, &it.view_a, cfg.dropout, Some(it.seed_a)))
        .collect::<Result<_>>()?;
    let caches_b: Vec<_> = plan
        .items
        .iter()
        .map(|it| forward_cached(params, &it.view_b, cfg.dropout, Some(it.seed_b)))
        .collect::<Result<_>>()?;
    let caches_n: Vec<_> = plan
        .negatives
        .iter()
        .map(|ids| forward_cached(params, ids, cfg.dropout, Some(plan.negative_seed)))
        .collect::<Result<_>>()?;

    let stack = |caches: &[crate::encoder::ForwardCache]| {
        let mut m = Array2::zeros((caches.len(), d));
        for (mut row, c) in m.axis_iter_mut(Axis(0)).zip(caches) {
            row.assign(&c.output().0);
        }
        m
    };
    let (h_a, h_b) = (stack(&caches_a), stack(&caches_b));
    let h_n = (!caches_n.is_empty()).then(|| stack(&caches_n));
    let opts = HardNegativeOptions {
        exclude_self_negative: cfg.exclude_self_negative,
    };
    let (loss, grads) = grad_info_nce_hard(h_a.view(), h_b.view(), h_n.as_ref().map(|m| m.view()), cfg.tau, opts)?;

    let mut enc_grads = EncoderGrads::zeros(d);
    for i in 0..n {
        backward(params, &caches_a[i], grads.anchors.row(i), &mut enc_grads);
        backward(params, &caches_b[i], grads.positives.row(i), &mut enc_grads);
    }
    if let Some(gn) = &grads.negatives {
        for (c, g) in caches_n.iter().zip(gn.axis_iter(Axis(0))) {
            backward(params, c, g, &mut enc_grads);
        }
    }
    enc_grads.apply_sgd(params, cfg.lr);
    Ok(loss.total)
}

/// Trains from freshly initialized parameters (see [`EncoderParams::init`]).
pub fn train(
    corpus: &[Sentence],
    tokenizer: &Tokenizer,
    index: Option<&NegativeIndex>,
    dev: &[StsExample],
    cfg: &TrainConfig,
    deterministic: bool,
) -> Result<TrainOutcome> {
    let params = EncoderParams::init(tokenizer.vocab_size(), cfg.dim, cfg.seed)?;
    train_from(params, corpus, tokenizer, index, dev, cfg, deterministic)
}

pub fn train_from(
    mut params: EncoderParams,
    corpus: &[Sentence],
    tokenizer: &Tokenizer,
    index: Option<&NegativeIndex>,
    dev: &[StsExample],
    cfg: &TrainConfig,
    deterministic: bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    if dev.is_empty() {
        return Err(Error::invalid("a dev set is required for checkpoint selection"));
    }
    if cfg.retrieval {
        let index = index.ok_or_else(|| Error::invalid("retrieval is enabled but no index was given"))?;
        if index.len() != corpus.len() || corpus.iter().any(|s| !index.contains(s.id)) {
            return Err(Error::invalid("index ids do not match the training corpus ids"));
        }
    }

    let lower = cfg.lowercase_training();
    let texts: HashMap<u64, String> = corpus
        .iter()
        .map(|s| (s.id, if lower { lowercase_transform(&s.text) } else { s.text.clone() }))
        .collect();
    if texts.len() != corpus.len() {
        return Err(Error::invalid("corpus ids are not unique"));
    }
    let assembler = Assembler {
        cfg,
        tokenizer,
        index,
        texts,
    };

    let mut batches = Vec::new();
    for epoch in 0..cfg.epochs {
        let order = epoch_order(corpus.len(), cfg.seed, epoch);
        for chunk in order.chunks(cfg.batch_size) {
            batches.push(chunk.iter().map(|&i| corpus[i].id).collect::<Vec<u64>>());
        }
    }
    let total_steps = batches.len();

    let transform = cfg.eval_transform();
    let config_hash = cfg.hash();
    let ablation = cfg.ablation_name().to_string();
    let evaluate = |p: &EncoderParams| score_dataset(p, tokenizer, dev, transform, cfg.max_tokens);

    let initial = evaluate(&params)?;
    let mut log = vec![MetricsRecord {
        step: 0,
        loss: None,
        dev_score: initial,
        config_hash: config_hash.clone(),
        ablation: ablation.clone(),
    }];
    let mut best = Checkpoint {
        params: params.clone(),
        step: 0,
        dev_score: initial,
    };
    let mut loss_sum = 0.0;
    let mut loss_steps = 0usize;

    let mut run_step = |plan: BatchPlan, params: &mut EncoderParams| -> Result<()> {
        loss_sum += sgd_step(params, &plan, cfg)?;
        loss_steps += 1;
        let step = plan.step;
        if step.is_multiple_of(cfg.eval_every) || step == total_steps {
            let score = evaluate(params)?;
            log.push(MetricsRecord {
                step,
                loss: Some(loss_sum / loss_steps as f64),
                dev_score: score,
                config_hash: config_hash.clone(),
                ablation: ablation.clone(),
            });
            loss_sum = 0.0;
            loss_steps = 0;
            if score > best.dev_score {
                best = Checkpoint {
                    params: params.clone(),
                    step,
                    dev_score: score,
                };
            }
        }
        Ok(())
    };

    if deterministic {
        for (i, batch) in batches.iter().enumerate() {
            let plan = assembler.assemble(i + 1, batch)?;
            run_step(plan, &mut params)?;
        }
    } else {
        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = mpsc::sync_channel::<Result<BatchPlan>>(4);
            let assembler = &assembler;
            let batches = &batches;
            scope.spawn(move || {
                for (i, batch) in batches.iter().enumerate() {
                    if tx.send(assembler.assemble(i + 1, batch)).is_err() {
                        break;
                    }
                }
            });
            for plan in rx {
                run_step(plan?, &mut params)?;
            }
            Ok(())
        })?;
    }

    Ok(TrainOutcome {
        best,
        final_params: params,
        log,
    })
}
