//! Template-generated paraphrase clusters for smoke-testing the training loop.
//!
//! A cluster is a (subject, verb, object, time) combination rendered through
//! five sentence templates. Dev clusters use fresh combinations of the same
//! word lists, so every dev word is seen during training but no dev sentence
//! is.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Sentence, StsExample, STS_MAX_SCORE};
use crate::error::{Error, Result};

const SUBJECTS: &[&str] = &[
    "farmer", "teacher", "doctor", "painter", "soldier", "student", "driver", "baker", "sailor", "lawyer", "nurse",
    "pilot", "singer", "writer", "miner", "hunter", "priest", "judge", "clerk", "guard", "chef", "tailor", "monk",
    "queen",
];

/// Past tense forms that double as past participles.
const VERBS: &[&str] = &[
    "carried", "painted", "repaired", "cleaned", "watched", "pushed", "followed", "visited", "found", "sold", "bought",
    "built", "opened", "burned", "washed", "moved", "touched", "checked", "lifted", "dropped", "hid", "kept", "held",
    "lost",
];

const OBJECTS: &[&str] = &[
    "boat", "wagon", "bridge", "tower", "basket", "ladder", "window", "carpet", "letter", "bottle", "barrel", "wheel",
    "lamp", "chair", "table", "fence", "garden", "engine", "statue", "coat", "drum", "bell", "rope", "sword",
];

const TIMES: &[&str] = &["morning", "evening", "night", "winter", "summer", "spring"];

const TEMPLATES: &[&str] = &[
    "The {s} {v} the {o} in the {t}.",
    "In the {t}, the {o} was {v} by the {s}.",
    "It was the {s} who {v} the {o} that {t}.",
    "That {t} the {o} had been {v} by a {s}.",
    "A {s} {v} an old {o} one {t}.",
];

pub const VARIANTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Combo {
    s: usize,
    v: usize,
    o: usize,
    t: usize,
}

fn render(c: Combo, template: &str) -> String {
    template
        .replace("{s}", SUBJECTS[c.s])
        .replace("{v}", VERBS[c.v])
        .replace("{o}", OBJECTS[c.o])
        .replace("{t}", TIMES[c.t])
}

#[derive(Debug, Clone)]
pub struct ParaphraseCorpus {
    /// Training sentences; cluster of sentence `i` is `train_cluster[i]`.
    pub train: Vec<Sentence>,
    pub train_cluster: Vec<usize>,
    /// Pairs scored 5 for same-cluster and 0 for different-cluster sentences.
    pub dev: Vec<StsExample>,
}

/// `train_clusters` clusters of [`VARIANTS`] sentences each, plus a dev set
/// from `dev_clusters` held-out clusters: all within-cluster pairs and an
/// equal number of cross-cluster pairs. Half of the cross pairs share the
/// template, so surface overlap alone does not separate the classes.
pub fn paraphrase_corpus(train_clusters: usize, dev_clusters: usize, seed: u64) -> Result<ParaphraseCorpus> {
    let capacity = SUBJECTS.len() * VERBS.len() * OBJECTS.len() * TIMES.len();
    if dev_clusters < 2 || train_clusters + dev_clusters > capacity {
        return Err(Error::invalid(format!(
            "need at least 2 dev clusters and at most {capacity} clusters in total"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut combos = Vec::with_capacity(train_clusters + dev_clusters);
    while combos.len() < train_clusters + dev_clusters {
        let c = Combo {
            s: rng.gen_range(0..SUBJECTS.len()),
            v: rng.gen_range(0..VERBS.len()),
            o: rng.gen_range(0..OBJECTS.len()),
            t: rng.gen_range(0..TIMES.len()),
        };
        if seen.insert(c) {
            combos.push(c);
        }
    }
    let (train_combos, dev_combos) = combos.split_at(train_clusters);

    let mut train = Vec::with_capacity(train_clusters * VARIANTS);
    let mut train_cluster = Vec::with_capacity(train_clusters * VARIANTS);
    for (cluster, &c) in train_combos.iter().enumerate() {
        for template in TEMPLATES {
            train.push(Sentence {
                id: train.len() as u64,
                text: render(c, template),
            });
            train_cluster.push(cluster);
        }
    }
    train.shuffle(&mut rng);
    let train_cluster = train.iter().map(|s| train_cluster[s.id as usize]).collect();

    let mut dev = Vec::new();
    for &c in dev_combos {
        for (i, first) in TEMPLATES.iter().enumerate() {
            for second in &TEMPLATES[i + 1..] {
                dev.push(StsExample {
                    sent_a: render(c, first),
                    sent_b: render(c, second),
                    gold: STS_MAX_SCORE,
                });
            }
        }
    }
    let positives = dev.len();
    for n in 0..positives {
        let a = rng.gen_range(0..dev_combos.len());
        let b = (a + rng.gen_range(1..dev_combos.len())) % dev_combos.len();
        let ta = rng.gen_range(0..VARIANTS);
        let tb = if n % 2 == 0 { ta } else { rng.gen_range(0..VARIANTS) };
        dev.push(StsExample {
            sent_a: render(dev_combos[a], TEMPLATES[ta]),
            sent_b: render(dev_combos[b], TEMPLATES[tb]),
            gold: 0.0,
        });
    }
    Ok(ParaphraseCorpus {
        train,
        train_cluster,
        dev,
    })
}
