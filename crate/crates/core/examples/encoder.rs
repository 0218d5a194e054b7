//! Toy sentence encoder: dropout-perturbed forward passes and the vector file
//! formats.

use std::path::Path;

use ndarray::Array2;

use cards::encoder::{forward, forward_pair, EncoderParams, VectorSet};
use cards::tokenizer::Tokenizer;

fn main() -> cards::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let tok = Tokenizer::load(&data.join("vocab.json"), &data.join("merges.txt"))?;
    let params = EncoderParams::init(tok.vocab_size(), 32, 0)?;

    let ids = tok.encode("A short example sentence.").ids;
    let clean = forward(&params, &ids, 0.0, None)?;
    let (a, b) = forward_pair(&params, &ids, 0.1, 1, 2)?;
    println!("two dropout views: cos {:.4}", a.cosine(&b));
    println!("view vs. no dropout: cos {:.4}", a.cosine(&clean));

    let matrix = Array2::from_shape_fn((2, 32), |(i, j)| if i == 0 { clean.0[j] } else { a.0[j] });
    let set = VectorSet::from_f64(vec![7, 8], &matrix)?;
    let text = set.to_text();
    println!("{}", text.lines().next().unwrap_or_default());
    let dir = std::env::temp_dir();
    set.save_binary(&dir.join("cards_example.vec"))?;
    assert_eq!(VectorSet::load(&dir.join("cards_example.vec"))?, set);
    params.save(&dir.join("cards_example.ckpt"))?;
    println!("checkpoint reloads: {}", EncoderParams::load(&dir.join("cards_example.ckpt")).is_ok());
    Ok(())
}
