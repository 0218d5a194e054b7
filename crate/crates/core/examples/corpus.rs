//! Corpus cleaning and STS file parsing.

use std::path::Path;

use cards::corpus::{clean_corpus, parse_sts};

fn main() -> cards::Result<()> {
    let raw = ["  A sentence.  ", "", "A sentence.", "Too short", "Another sentence here."];
    for s in clean_corpus(raw, 3) {
        println!("{}\t{}", s.id, s.text);
    }

    let tsv = "sentence_a\tsentence_b\tscore\nA man plays.\tA man is playing.\t4.8\nA cat.\tThe stock fell.\t0.2\n";
    for ex in parse_sts(tsv, true, Path::new("inline.tsv"))? {
        println!("{:.1}  {} | {}", ex.gold, ex.sent_a, ex.sent_b);
    }
    match parse_sts("a\tb\t7.0\n", false, Path::new("bad.tsv")) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
