//! Byte-level BPE: encode, decode and sample segmentations with merge dropout.
//!
//!     cargo run --example tokenize -- "Some text to split"

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cards::tokenizer::Tokenizer;

fn main() -> cards::Result<()> {
    let text = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "The story of the first book continues.".to_string());
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let tok = Tokenizer::load(&data.join("vocab.json"), &data.join("merges.txt"))?;
    println!("vocab {} tokens, {} merges", tok.vocab_size(), tok.merge_count());

    let seq = tok.encode(&text);
    println!("ids    {:?}", seq.ids);
    println!("tokens {:?}", tok.tokens(&seq.ids));
    assert_eq!(tok.decode(&seq.ids)?, text);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..3 {
        let dropped = tok.encode_with_merge_dropout(&text, 0.1, &mut rng, None)?;
        println!("p=0.1  {:?}", tok.tokens(&dropped.ids));
    }
    Ok(())
}
