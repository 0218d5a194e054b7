//! Token-embedding bias analysis: label the vocabulary by case class, project
//! embeddings to 2D and print the class separation summary.
//!
//!     cargo run --release --example token_bias -- [checkpoint]

use std::path::{Path, PathBuf};

use cards::analysis::{label_tokens, pca_2d, separation_summary, CaseClass};
use cards::corpus::read_lines;
use cards::encoder::EncoderParams;
use cards::tokenizer::Tokenizer;

fn main() -> cards::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let tok = Tokenizer::load(&data.join("vocab.json"), &data.join("merges.txt"))?;
    let params = match std::env::args().nth(1) {
        Some(p) => EncoderParams::load(&PathBuf::from(p))?,
        None => EncoderParams::init(tok.vocab_size(), 32, 0)?,
    };
    let corpus = read_lines(&data.join("wiki_sample.txt"))?;
    let labels = label_tokens(&tok, Some(&corpus));
    for class in CaseClass::ALL {
        let n = labels.iter().filter(|l| l.case_class == class).count();
        println!("{:<16} {n}", class.name());
    }
    let pca = pca_2d(params.token_embeddings.view())?;
    println!("explained variance {:.5} {:.5}", pca.explained_variance[0], pca.explained_variance[1]);
    let summary = separation_summary(pca.projections.view(), &labels)?;
    for (a, b, d) in &summary.centroid_distances {
        println!("{:<16} {:<16} {d:.5}", a.name(), b.name());
    }
    println!("intra-class mean distance {:.5}", summary.intra_class_mean);
    Ok(())
}
