//! Byte-level BPE tokenizer compatible with the GPT-2 / RoBERTa `vocab.json` +
//! `merges.txt` file pair.
//!
//! Text is split into pre-tokens with the standard byte-level pattern (a
//! single leading space is folded into the following word), every byte is
//! mapped to a printable code point, and merges are applied lowest rank first.
//! All 256 bytes are part of the alphabet, so there is no unknown-token path.
//!
//! [`Tokenizer::encode_with_merge_dropout`] implements BPE-dropout: every
//! candidate merge is skipped independently with probability `p_drop` at each
//! merge step.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use fancy_regex::Regex;
use rand::Rng;

use crate::error::{Error, Result};

/// Marker for a word-initial space in the byte-level alphabet (byte 0x20).
pub const WORD_MARKER: char = 'Ġ';

const PRETOKEN_PATTERN: &str =
    r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

/// Bijection between token strings and contiguous ids.
#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocab {
    pub fn new(token_to_id: HashMap<String, u32>) -> Result<Self> {
        let n = token_to_id.len();
        let mut id_to_token = vec![None; n];
        for (token, &id) in &token_to_id {
            let slot = id_to_token.get_mut(id as usize).ok_or_else(|| {
                Error::invalid(format!(
                    "token {token:?} has id {id}, ids must be contiguous in 0..{n}"
                ))
            })?;
            if slot.is_some() {
                return Err(Error::invalid(format!("id {id} assigned to more than one token")));
            }
            *slot = Some(token.clone());
        }
        let id_to_token = id_to_token.into_iter().map(|t| t.expect("all slots filled")).collect();
        Ok(Self {
            token_to_id,
            id_to_token,
        })
    }

    pub fn from_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: HashMap<String, u32> = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        Self::new(map)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> impl Iterator<Item = (u32, &str)> {
        self.id_to_token.iter().enumerate().map(|(i, t)| (i as u32, t.as_str()))
    }
}

/// Ordered merge rules; position in the list is the rank.
#[derive(Debug, Clone, Default)]
pub struct MergeRules {
    pairs: Vec<(String, String)>,
}

impl MergeRules {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for (rank, pair) in pairs.iter().enumerate() {
            if !seen.insert(pair) {
                return Err(Error::invalid(format!(
                    "duplicate merge ({} {}) at rank {rank}",
                    pair.0, pair.1
                )));
            }
        }
        Ok(Self { pairs })
    }

    /// Parses the text format: one `left right` pair per line; a first line
    /// starting with `#` is a header; blank lines are skipped.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if idx == 0 && line.starts_with('#') {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    pairs.push((a.to_string(), b.to_string()))
                }
                _ => {
                    return Err(Error::parse(
                        path,
                        line_no,
                        format!("expected `left right` merge pair, got {line:?}"),
                    ))
                }
            }
        }
        Self::new(pairs)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }
}

/// Token ids with the byte span each token covers in the encoded text.
///
/// Spans are byte offsets: a single multi-byte character may be split across
/// several byte-level tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub offsets: Vec<(usize, usize)>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Interior token boundaries as byte offsets into the source.
    pub fn boundaries(&self) -> impl Iterator<Item = usize> + '_ {
        self.offsets.iter().skip(1).map(|&(start, _)| start)
    }

    /// Appends `other`, shifting its offsets by `shift` bytes.
    pub fn extend_shifted(&mut self, other: &TokenSeq, shift: usize) {
        self.ids.extend_from_slice(&other.ids);
        self.offsets
            .extend(other.offsets.iter().map(|&(s, e)| (s + shift, e + shift)));
    }
}

/// The 256-entry byte to printable code point table of byte-level BPE.
///
/// Printable Latin-1 bytes map to themselves; the remaining bytes are assigned
/// code points from 256 upwards in byte order.
pub fn bytes_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let printable = |b: u32| (0x21..=0x7e).contains(&b) || (0xa1..=0xac).contains(&b) || (0xae..=0xff).contains(&b);
    let mut next = 256u32;
    for b in 0..256u32 {
        let cp = if printable(b) {
            b
        } else {
            let cp = next;
            next += 1;
            cp
        };
        table[b as usize] = char::from_u32(cp).expect("code points below 0x200 are valid");
    }
    table
}

#[derive(Debug, Clone, Copy)]
struct Merge {
    rank: u32,
    merged: u32,
}

#[derive(Debug, Clone, Copy)]
struct Symbol {
    id: u32,
    start: usize,
    end: usize,
}

/// Immutable byte-level BPE tokenizer.
#[derive(Debug)]
pub struct Tokenizer {
    vocab: Vocab,
    merges: HashMap<(u32, u32), Merge>,
    merge_count: usize,
    byte_ids: [u32; 256],
    byte_decoder: HashMap<char, u8>,
    pretokenizer: Regex,
}

impl Tokenizer {
    /// Loads a `vocab.json` / `merges.txt` pair.
    pub fn load(vocab_file: &Path, merges_file: &Path) -> Result<Self> {
        let vocab = Vocab::from_json(vocab_file)?;
        let merges = MergeRules::from_file(merges_file)?;
        Self::new(vocab, merges)
    }

    pub fn new(vocab: Vocab, rules: MergeRules) -> Result<Self> {
        let encoder = bytes_to_unicode();
        let mut byte_ids = [0u32; 256];
        let mut byte_decoder = HashMap::with_capacity(256);
        for (b, &c) in encoder.iter().enumerate() {
            let id = vocab.id(c.encode_utf8(&mut [0; 4])).ok_or_else(|| {
                Error::invalid(format!("vocabulary lacks the single-byte token for byte {b:#04x}"))
            })?;
            byte_ids[b] = id;
            byte_decoder.insert(c, b as u8);
        }

        let mut merges = HashMap::with_capacity(rules.len());
        for (rank, (a, b)) in rules.pairs().iter().enumerate() {
            let lookup = |t: &str| {
                vocab.id(t).ok_or_else(|| {
                    Error::invalid(format!("merge rank {rank} ({a} {b}) references unknown token {t:?}"))
                })
            };
            let left = lookup(a)?;
            let right = lookup(b)?;
            let merged = lookup(&format!("{a}{b}"))?;
            merges.insert(
                (left, right),
                Merge {
                    rank: rank as u32,
                    merged,
                },
            );
        }

        Ok(Self {
            vocab,
            merges,
            merge_count: rules.len(),
            byte_ids,
            byte_decoder,
            pretokenizer: Regex::new(PRETOKEN_PATTERN).expect("static pattern compiles"),
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merge_count(&self) -> usize {
        self.merge_count
    }

    /// Byte spans of the pre-tokens of `text`, in order, covering it exactly.
    pub fn pretokenize(&self, text: &str) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut pos = 0;
        for m in self.pretokenizer.find_iter(text) {
            // The pattern is lookahead-only, so matching cannot hit the
            // backtrack limit; fall back to one span if it ever does.
            let Ok(m) = m else { break };
            spans.push((m.start(), m.end()));
            pos = m.end();
        }
        if pos < text.len() {
            spans.push((pos, text.len()));
        }
        spans
    }

    pub fn encode(&self, text: &str) -> TokenSeq {
        self.encode_inner(text, &mut |_| false, None)
    }

    /// BPE-dropout encoding. Pre-tokens whose text (without the leading
    /// space) is in `exempt` are encoded without dropout.
    pub fn encode_with_merge_dropout<R: Rng + ?Sized>(
        &self,
        text: &str,
        p_drop: f64,
        rng: &mut R,
        exempt: Option<&HashSet<String>>,
    ) -> Result<TokenSeq> {
        if !(0.0..=1.0).contains(&p_drop) {
            return Err(Error::invalid(format!("p_drop must be in [0, 1], got {p_drop}")));
        }
        if p_drop == 0.0 {
            return Ok(self.encode(text));
        }
        let mut drop = |_: u32| rng.gen_bool(p_drop);
        Ok(self.encode_inner(text, &mut drop, exempt))
    }

    fn encode_inner(
        &self,
        text: &str,
        drop: &mut dyn FnMut(u32) -> bool,
        exempt: Option<&HashSet<String>>,
    ) -> TokenSeq {
        let mut out = TokenSeq::default();
        for (start, end) in self.pretokenize(text) {
            let piece = &text[start..end];
            let exempted = exempt.is_some_and(|set| set.contains(piece.trim_start_matches(' ')));
            let symbols = if exempted {
                self.merge_word(piece.as_bytes(), &mut |_| false)
            } else {
                self.merge_word(piece.as_bytes(), drop)
            };
            for sym in symbols {
                out.ids.push(sym.id);
                out.offsets.push((start + sym.start, start + sym.end));
            }
        }
        out
    }

    fn merge_word(&self, bytes: &[u8], drop: &mut dyn FnMut(u32) -> bool) -> Vec<Symbol> {
        let mut symbols: Vec<Symbol> = bytes
            .iter()
            .enumerate()
            .map(|(i, &b)| Symbol {
                id: self.byte_ids[b as usize],
                start: i,
                end: i + 1,
            })
            .collect();

        while symbols.len() > 1 {
            let mut best: Option<(usize, Merge)> = None;
            for i in 0..symbols.len() - 1 {
                let Some(&merge) = self.merges.get(&(symbols[i].id, symbols[i + 1].id)) else {
                    continue;
                };
                if drop(merge.rank) {
                    continue;
                }
                if best.is_none_or(|(_, b)| merge.rank < b.rank) {
                    best = Some((i, merge));
                }
            }
            let Some((i, merge)) = best else { break };
            symbols[i] = Symbol {
                id: merge.merged,
                start: symbols[i].start,
                end: symbols[i + 1].end,
            };
            symbols.remove(i + 1);
        }
        symbols
    }

    /// Raw bytes of a token sequence.
    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut bytes = Vec::with_capacity(ids.len() * 4);
        for &id in ids {
            let token = self
                .vocab
                .token(id)
                .ok_or_else(|| Error::invalid(format!("unknown token id {id}")))?;
            for c in token.chars() {
                let b = self.byte_decoder.get(&c).ok_or_else(|| {
                    Error::invalid(format!("token {token:?} (id {id}) has a character outside the byte alphabet"))
                })?;
                bytes.push(*b);
            }
        }
        Ok(bytes)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        String::from_utf8(self.decode_bytes(ids)?)
            .map_err(|e| Error::invalid(format!("decoded bytes are not valid UTF-8: {e}")))
    }

    /// Token strings (byte-level alphabet) for `ids`; unknown ids render as `<id>`.
    pub fn tokens(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.vocab.token(id).map_or_else(|| format!("<{id}>"), str::to_string))
            .collect()
    }
}
