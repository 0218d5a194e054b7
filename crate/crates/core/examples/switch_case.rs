//! Switch-case augmentation: flip first letters, classify how the word's
//! tokenization changes, and measure outcome shares over a corpus.
//!
//!     cargo run --release --example switch_case

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cards::augment::{analyze_word, outcome_stats, switch_case, OutcomeClass};
use cards::corpus::read_lines;
use cards::tokenizer::Tokenizer;

fn main() -> cards::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let tok = Tokenizer::load(&data.join("vocab.json"), &data.join("merges.txt"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sentence = "the naturalistic painting was recommended by an ongoing survey";
    println!("{}", switch_case(sentence, 0.5, &mut rng));

    for word in ["naturalistic", "interpret", "recommended", "urgency", "Ongoing"] {
        let rec = analyze_word(&tok, word).expect("eligible word");
        println!(
            "{:>14} {:<24} -> {:<24} {}",
            word,
            tok.tokens(&rec.original_tokens.ids).join("|"),
            tok.tokens(&rec.flipped_tokens.ids).join("|"),
            rec.class
        );
    }

    let lines = read_lines(&data.join("wiki_sample.txt"))?;
    let stats = outcome_stats(&lines, &tok, 0.15, &mut ChaCha8Rng::seed_from_u64(7))?;
    println!("\n{} sentences, {} flipped words", stats.sentences(), stats.total());
    for class in OutcomeClass::ALL {
        println!("{class:<13} {:5.1}%", stats.class_share(class));
    }
    println!("token count changed {:5.1}%", stats.changed_share());
    Ok(())
}
