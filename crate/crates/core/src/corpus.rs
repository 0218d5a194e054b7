//! Corpus cleaning and the plain-text / TSV dataset formats.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::TokenSeq;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsExample {
    pub sent_a: String,
    pub sent_b: String,
    pub gold: f64,
}

pub const STS_MAX_SCORE: f64 = 5.0;

/// Removes exact duplicates (first occurrence kept) and lines with fewer than
/// `min_words` whitespace-separated words. Empty lines are always dropped.
/// Ids are assigned sequentially after filtering.
pub fn clean_corpus<I, S>(lines: I, min_words: usize) -> Vec<Sentence>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in lines {
        let text: String = line.into();
        if text.is_empty() || text.split_whitespace().count() < min_words {
            continue;
        }
        if seen.insert(text.clone()) {
            out.push(Sentence {
                id: out.len() as u64,
                text,
            });
        }
    }
    out
}

/// Reads one sentence per line (trailing `\r` stripped).
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .map(|l| {
            l.map(|mut s| {
                if s.ends_with('\r') {
                    s.pop();
                }
                s
            })
            .map_err(|e| Error::io(path, e))
        })
        .collect()
}

pub fn load_corpus(path: &Path, min_words: usize) -> Result<Vec<Sentence>> {
    Ok(clean_corpus(read_lines(path)?, min_words))
}

/// Keeps the first `max_tokens` tokens.
pub fn truncate_tokens(seq: &TokenSeq, max_tokens: usize) -> TokenSeq {
    let n = seq.len().min(max_tokens);
    TokenSeq {
        ids: seq.ids[..n].to_vec(),
        offsets: seq.offsets[..n].to_vec(),
    }
}

/// Parses `sentence_a<TAB>sentence_b<TAB>score` lines.
pub fn parse_sts(text: &str, has_header: bool, path: &Path) -> Result<Vec<StsExample>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if idx == 0 && has_header {
            continue;
        }
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [a, b, score] = fields[..] else {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        };
        let gold: f64 = score
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("score {score:?} is not a number")))?;
        if !(0.0..=STS_MAX_SCORE).contains(&gold) {
            return Err(Error::invalid(format!(
                "{}:{line_no}: score {gold} outside [0, {STS_MAX_SCORE}]",
                path.display()
            )));
        }
        out.push(StsExample {
            sent_a: a.to_string(),
            sent_b: b.to_string(),
            gold,
        });
    }
    Ok(out)
}

pub fn load_sts(path: &Path, has_header: bool) -> Result<Vec<StsExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sts(&text, has_header, path)
}
