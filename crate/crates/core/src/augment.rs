//! Switch-case augmentation: flip the case of the first letter of randomly
//! selected words, plus the ablation variants and the tokenization-outcome
//! taxonomy (substitution, division, fusion, regrouping).
//!
//! A word is a maximal run of non-whitespace characters. It is eligible when
//! its first character is a cased letter whose case flip round-trips. Each
//! eligible word consumes exactly one uniform draw from the generator;
//! ineligible words consume none.
//!
//! Outcome classification tokenizes the word on its own (no word-initial
//! marker) in both casings and compares interior token boundaries measured
//! from the end of the word, which is unaffected by the case flip.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{TokenSeq, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentVariant {
    /// Flip every selected word.
    #[default]
    Default,
    /// Flip a selected word only when the flip is a pure substitution.
    SubstitutionOnly,
    /// Keep the original casing but force the segmentation the flip would
    /// have produced, for division and regrouping words.
    ReTokenization,
    /// Ignore case during training: all training text is lowercased.
    LowercaseAll,
    /// Duplicate randomly selected words in place.
    WordRepetition,
}

impl std::str::FromStr for AugmentVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "default" => Ok(Self::Default),
            "substitution_only" | "substitution" => Ok(Self::SubstitutionOnly),
            "re_tokenization" | "retokenization" => Ok(Self::ReTokenization),
            "lowercase_all" | "lowercase" => Ok(Self::LowercaseAll),
            "word_repetition" | "repetition" => Ok(Self::WordRepetition),
            other => Err(Error::invalid(format!("unknown augmentation variant {other:?}"))),
        }
    }
}

/// Augmentation settings. `p_sc` is the per-word selection probability; the
/// word-repetition variant uses it as its repeat probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub p_sc: f64,
    pub variant: AugmentVariant,
    pub seed: u64,
}

impl AugmentConfig {
    pub fn new(p_sc: f64, variant: AugmentVariant, seed: u64) -> Result<Self> {
        let cfg = Self { p_sc, variant, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("p_sc", self.p_sc)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_sc: 0.1,
            variant: AugmentVariant::Default,
            seed: 0,
        }
    }
}

pub(crate) fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be in [0, 1], got {p}")))
    }
}

/// Byte spans of the whitespace-delimited words of `text`.
pub fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

fn single_char(mut it: impl Iterator<Item = char>) -> Option<char> {
    let first = it.next()?;
    it.next().is_none().then_some(first)
}

fn flip_char(c: char) -> Option<char> {
    let flipped = if c.is_lowercase() {
        single_char(c.to_uppercase())?
    } else if c.is_uppercase() {
        single_char(c.to_lowercase())?
    } else {
        return None;
    };
    let back = if flipped.is_lowercase() {
        single_char(flipped.to_uppercase())?
    } else {
        single_char(flipped.to_lowercase())?
    };
    (flipped != c && back == c).then_some(flipped)
}

/// Flips the case of the first letter of `word`. Returns `None` (word left
/// unchanged, ineligible) when the first character is not a cased letter.
pub fn flip_first_letter(word: &str) -> Option<String> {
    let mut chars = word.chars();
    let first = chars.next()?;
    let flipped = flip_char(first)?;
    let mut out = String::with_capacity(word.len() + 2);
    out.push(flipped);
    out.push_str(chars.as_str());
    Some(out)
}

pub fn is_eligible(word: &str) -> bool {
    word.chars().next().and_then(flip_char).is_some()
}

/// Word spans selected for flipping: one Bernoulli(`p`) draw per eligible word.
pub fn select_words<R: Rng + ?Sized>(text: &str, p: f64, rng: &mut R) -> Vec<(usize, usize)> {
    word_spans(text)
        .into_iter()
        .filter(|&(s, e)| is_eligible(&text[s..e]))
        .filter(|_| rng.gen::<f64>() < p)
        .collect()
}

fn rebuild(text: &str, mut replace: impl FnMut(&str) -> Option<String>, spans: &[(usize, usize)]) -> String {
    let mut out = String::with_capacity(text.len() + 8);
    let mut pos = 0;
    for &(s, e) in spans {
        out.push_str(&text[pos..s]);
        match replace(&text[s..e]) {
            Some(new) => out.push_str(&new),
            None => out.push_str(&text[s..e]),
        }
        pos = e;
    }
    out.push_str(&text[pos..]);
    out
}

/// Default switch-case augmentation.
pub fn switch_case<R: Rng + ?Sized>(sentence: &str, p_sc: f64, rng: &mut R) -> String {
    let selected = select_words(sentence, p_sc, rng);
    rebuild(sentence, flip_first_letter, &selected)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OutcomeClass {
    Substitution,
    Division,
    Fusion,
    Regrouping,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 4] = [
        OutcomeClass::Substitution,
        OutcomeClass::Division,
        OutcomeClass::Fusion,
        OutcomeClass::Regrouping,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            OutcomeClass::Substitution => "Substitution",
            OutcomeClass::Division => "Division",
            OutcomeClass::Fusion => "Fusion",
            OutcomeClass::Regrouping => "Regrouping",
        }
    }
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlipDirection {
    LowerToUpper,
    UpperToLower,
}

impl FlipDirection {
    pub const ALL: [FlipDirection; 2] = [FlipDirection::LowerToUpper, FlipDirection::UpperToLower];

    pub fn of(word: &str) -> Option<Self> {
        let c = word.chars().next()?;
        if c.is_lowercase() {
            Some(FlipDirection::LowerToUpper)
        } else if c.is_uppercase() {
            Some(FlipDirection::UpperToLower)
        } else {
            None
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FlipDirection::LowerToUpper => "lower->upper",
            FlipDirection::UpperToLower => "upper->lower",
        }
    }
}

fn suffix_boundaries(text: &str, tokens: &TokenSeq, which: &str) -> Result<BTreeSet<usize>> {
    let covers = tokens.offsets.first().map(|o| o.0) == Some(0)
        && tokens.offsets.last().map(|o| o.1) == Some(text.len())
        && tokens.offsets.windows(2).all(|w| w[0].1 == w[1].0);
    if !covers {
        return Err(Error::Contract(format!(
            "{which} tokens do not cover {text:?} exactly"
        )));
    }
    Ok(tokens.boundaries().map(|b| text.len() - b).collect())
}

/// Classifies the tokenization change between a word and its case-flipped
/// variant.
///
/// With `B_o` and `B_f` the interior boundary sets: equal sets are a
/// substitution, a strict refinement (`B_o ⊂ B_f`) a division, a strict
/// coarsening a fusion, and anything else a regrouping.
pub fn classify_outcome(
    original: &str,
    original_tokens: &TokenSeq,
    flipped: &str,
    flipped_tokens: &TokenSeq,
) -> Result<OutcomeClass> {
    let mut oc = original.chars();
    let mut fc = flipped.chars();
    let same_first = match (oc.next(), fc.next()) {
        (Some(a), Some(b)) => a == b || a.to_lowercase().eq(b.to_lowercase()),
        _ => false,
    };
    if !same_first || oc.as_str() != fc.as_str() {
        return Err(Error::Contract(format!(
            "{original:?} and {flipped:?} are not case variants of one word"
        )));
    }
    let bo = suffix_boundaries(original, original_tokens, "original")?;
    let bf = suffix_boundaries(flipped, flipped_tokens, "flipped")?;
    Ok(if bo == bf {
        OutcomeClass::Substitution
    } else if bo.is_subset(&bf) {
        OutcomeClass::Division
    } else if bf.is_subset(&bo) {
        OutcomeClass::Fusion
    } else {
        OutcomeClass::Regrouping
    })
}

/// One word's original and flipped tokenizations with their class.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeRecord {
    pub word: String,
    pub flipped: String,
    pub original_tokens: TokenSeq,
    pub flipped_tokens: TokenSeq,
    pub class: OutcomeClass,
    pub direction: FlipDirection,
}

impl OutcomeRecord {
    pub fn token_count_changed(&self) -> bool {
        self.original_tokens.len() != self.flipped_tokens.len()
    }
}

/// Flips and classifies a single word; `None` if the word is ineligible.
pub fn analyze_word(tokenizer: &Tokenizer, word: &str) -> Option<OutcomeRecord> {
    let flipped = flip_first_letter(word)?;
    let direction = FlipDirection::of(word)?;
    let original_tokens = tokenizer.encode(word);
    let flipped_tokens = tokenizer.encode(&flipped);
    let class = classify_outcome(word, &original_tokens, &flipped, &flipped_tokens)
        .expect("flip_first_letter yields a case variant with covering tokens");
    Some(OutcomeRecord {
        word: word.to_string(),
        flipped,
        original_tokens,
        flipped_tokens,
        class,
        direction,
    })
}

/// Tally of outcome classes by flip direction, counted per selected word.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeStats {
    counts: [[u64; 2]; 4],
    changed: u64,
    sentences: u64,
}

impl OutcomeStats {
    pub fn record(&mut self, rec: &OutcomeRecord) {
        let dir = match rec.direction {
            FlipDirection::LowerToUpper => 0,
            FlipDirection::UpperToLower => 1,
        };
        self.counts[rec.class.index()][dir] += 1;
        if rec.token_count_changed() {
            self.changed += 1;
        }
    }

    pub fn merge(mut self, other: &OutcomeStats) -> Self {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            a[0] += b[0];
            a[1] += b[1];
        }
        self.changed += other.changed;
        self.sentences += other.sentences;
        self
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn sentences(&self) -> u64 {
        self.sentences
    }

    pub fn count(&self, class: OutcomeClass, direction: FlipDirection) -> u64 {
        self.counts[class.index()][direction as usize]
    }

    pub fn class_count(&self, class: OutcomeClass) -> u64 {
        self.counts[class.index()].iter().sum()
    }

    fn pct(&self, n: u64) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            100.0 * n as f64 / total as f64
        }
    }

    /// Percentage of selected words in `class`.
    pub fn class_share(&self, class: OutcomeClass) -> f64 {
        self.pct(self.class_count(class))
    }

    pub fn share(&self, class: OutcomeClass, direction: FlipDirection) -> f64 {
        self.pct(self.count(class, direction))
    }

    /// Percentage of selected words whose token count changed.
    pub fn changed_share(&self) -> f64 {
        self.pct(self.changed)
    }

    pub fn changed_count(&self) -> u64 {
        self.changed
    }

    /// TSV report in the layout of the outcome table: one row per class and
    /// direction, per-class totals, then the changed-token-count row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("class\tdirection\tcount\tpercentage\n");
        for class in OutcomeClass::ALL {
            for dir in FlipDirection::ALL {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{:.2}\n",
                    class,
                    dir.name(),
                    self.count(class, dir),
                    self.share(class, dir)
                ));
            }
        }
        for class in OutcomeClass::ALL {
            out.push_str(&format!(
                "{}\tall\t{}\t{:.2}\n",
                class,
                self.class_count(class),
                self.class_share(class)
            ));
        }
        out.push_str(&format!(
            "ChangedTokenCount\tall\t{}\t{:.2}\n",
            self.changed,
            self.changed_share()
        ));
        out
    }
}

fn tally<S: AsRef<str>, R: Rng + ?Sized>(
    sentences: &[S],
    tokenizer: &Tokenizer,
    p_sc: f64,
    rng: &mut R,
) -> OutcomeStats {
    let mut stats = OutcomeStats::default();
    for sentence in sentences {
        let sentence = sentence.as_ref();
        stats.sentences += 1;
        for (s, e) in select_words(sentence, p_sc, rng) {
            if let Some(rec) = analyze_word(tokenizer, &sentence[s..e]) {
                stats.record(&rec);
            }
        }
    }
    stats
}

/// Selects words across the corpus exactly as [`switch_case`] would and
/// tallies the outcome class of every selected word.
pub fn outcome_stats<S: AsRef<str>, R: Rng + ?Sized>(
    sentences: &[S],
    tokenizer: &Tokenizer,
    p_sc: f64,
    rng: &mut R,
) -> Result<OutcomeStats> {
    check_probability("p_sc", p_sc)?;
    if sentences.is_empty() {
        return Err(Error::invalid("outcome statistics need a non-empty corpus"));
    }
    let stats = tally(sentences, tokenizer, p_sc, rng);
    if stats.total() == 0 {
        return Err(Error::invalid("no words were selected; percentages are undefined"));
    }
    Ok(stats)
}

/// Parallel [`outcome_stats`]: the corpus is cut into `shards` contiguous
/// shards, shard `i` drawing from stream `i` of a generator seeded with
/// `seed`. The result depends on `shards` but not on the thread count.
pub fn outcome_stats_sharded<S: AsRef<str> + Sync>(
    sentences: &[S],
    tokenizer: &Tokenizer,
    p_sc: f64,
    seed: u64,
    shards: usize,
) -> Result<OutcomeStats> {
    check_probability("p_sc", p_sc)?;
    if sentences.is_empty() {
        return Err(Error::invalid("outcome statistics need a non-empty corpus"));
    }
    let shards = shards.max(1);
    let chunk = sentences.len().div_ceil(shards);
    let stats = sentences
        .par_chunks(chunk)
        .enumerate()
        .map(|(i, part)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            tally(part, tokenizer, p_sc, &mut rng)
        })
        .collect::<Vec<_>>()
        .iter()
        .fold(OutcomeStats::default(), |acc, s| acc.merge(s));
    if stats.total() == 0 {
        return Err(Error::invalid("no words were selected; percentages are undefined"));
    }
    Ok(stats)
}

/// Switch-case restricted to words whose flip is a substitution.
pub fn augment_substitution_only<R: Rng + ?Sized>(
    sentence: &str,
    tokenizer: &Tokenizer,
    p_sc: f64,
    rng: &mut R,
) -> String {
    let selected = select_words(sentence, p_sc, rng);
    rebuild(
        sentence,
        |word| {
            analyze_word(tokenizer, word)
                .filter(|rec| rec.class == OutcomeClass::Substitution)
                .map(|rec| rec.flipped)
        },
        &selected,
    )
}

/// Encodes `text` chunk by chunk, where each chunk is a whitespace run plus
/// the following word. Equal to `tokenizer.encode(text)`; the chunking lets
/// callers substitute the encoding of individual words.
fn encode_by_words(
    text: &str,
    tokenizer: &Tokenizer,
    mut word_override: impl FnMut(&str, &str) -> Option<TokenSeq>,
) -> TokenSeq {
    let mut out = TokenSeq::default();
    let mut pos = 0;
    for (s, e) in word_spans(text) {
        let chunk = match word_override(&text[pos..s], &text[s..e]) {
            Some(seq) => seq,
            None => tokenizer.encode(&text[pos..e]),
        };
        out.extend_shifted(&chunk, pos);
        pos = e;
    }
    if pos < text.len() {
        out.extend_shifted(&tokenizer.encode(&text[pos..]), pos);
    }
    out
}

/// Re-tokenization variant: selected division and regrouping words keep
/// their case but are segmented at the boundaries the flipped word gets.
/// Each forced segment is encoded independently; the leading whitespace of
/// the word stays attached to the first segment.
pub fn augment_retokenization<R: Rng + ?Sized>(
    sentence: &str,
    tokenizer: &Tokenizer,
    p_sc: f64,
    rng: &mut R,
) -> TokenSeq {
    let selected: BTreeSet<usize> = select_words(sentence, p_sc, rng).into_iter().map(|(s, _)| s).collect();
    let base = sentence.as_ptr() as usize;
    encode_by_words(sentence, tokenizer, |ws, word| {
        let start = word.as_ptr() as usize - base;
        if !selected.contains(&start) {
            return None;
        }
        let rec = analyze_word(tokenizer, word)?;
        if !matches!(rec.class, OutcomeClass::Division | OutcomeClass::Regrouping) {
            return None;
        }
        forced_segmentation(tokenizer, ws, word, &rec)
    })
}

fn forced_segmentation(tokenizer: &Tokenizer, ws: &str, word: &str, rec: &OutcomeRecord) -> Option<TokenSeq> {
    let cuts: Vec<usize> = rec
        .flipped_tokens
        .boundaries()
        .map(|b| word.len() as isize - (rec.flipped.len() - b) as isize)
        .filter(|&c| c > 0)
        .map(|c| c as usize)
        .collect();
    if cuts.iter().any(|&c| !word.is_char_boundary(c)) {
        log::debug!("forced segmentation of {word:?} splits a character; using the plain encoding");
        return None;
    }
    let mut out = TokenSeq::default();
    let mut prev = 0;
    for (i, end) in cuts.iter().copied().chain(std::iter::once(word.len())).enumerate() {
        let (piece, shift) = if i == 0 {
            (format!("{ws}{}", &word[..end]), 0)
        } else {
            (word[prev..end].to_string(), ws.len() + prev)
        };
        out.extend_shifted(&tokenizer.encode(&piece), shift);
        prev = end;
    }
    Some(out)
}

/// Lowercases every cased letter.
pub fn lowercase_transform(sentence: &str) -> String {
    sentence.to_lowercase()
}

/// Uppercases the first character of the sentence when it is a lowercase letter.
pub fn capitalize_first(sentence: &str) -> String {
    let mut chars = sentence.chars();
    match chars.next() {
        Some(c) if c.is_lowercase() => c.to_uppercase().chain(chars).collect(),
        _ => sentence.to_string(),
    }
}

/// Where case is ignored (all text lowercased).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseMode {
    Train,
    Eval,
    Both,
}

impl CaseMode {
    pub fn in_training(self) -> bool {
        matches!(self, CaseMode::Train | CaseMode::Both)
    }

    pub fn in_evaluation(self) -> bool {
        matches!(self, CaseMode::Eval | CaseMode::Both)
    }
}

/// Duplicates each word in place with probability `repeat_prob`.
pub fn word_repetition<R: Rng + ?Sized>(sentence: &str, repeat_prob: f64, rng: &mut R) -> Result<String> {
    check_probability("repeat_prob", repeat_prob)?;
    let spans: Vec<_> = word_spans(sentence)
        .into_iter()
        .filter(|_| rng.gen::<f64>() < repeat_prob)
        .collect();
    Ok(rebuild(sentence, |w| Some(format!("{w} {w}")), &spans))
}

/// Token ids of the augmented view of `sentence` under `cfg.variant`.
pub fn augment_tokens<R: Rng + ?Sized>(
    sentence: &str,
    tokenizer: &Tokenizer,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> TokenSeq {
    match cfg.variant {
        AugmentVariant::Default => tokenizer.encode(&switch_case(sentence, cfg.p_sc, rng)),
        AugmentVariant::SubstitutionOnly => {
            tokenizer.encode(&augment_substitution_only(sentence, tokenizer, cfg.p_sc, rng))
        }
        AugmentVariant::ReTokenization => augment_retokenization(sentence, tokenizer, cfg.p_sc, rng),
        AugmentVariant::LowercaseAll => tokenizer.encode(&lowercase_transform(sentence)),
        AugmentVariant::WordRepetition => tokenizer.encode(
            &word_repetition(sentence, cfg.p_sc, rng).expect("p_sc validated with the config"),
        ),
    }
}
