//! Spearman-scored STS evaluation of an encoder, with the case transforms.

use std::path::Path;

use cards::corpus::StsExample;
use cards::encoder::EncoderParams;
use cards::eval::{evaluate_sts, spearman, EvalTransform};
use cards::synthetic::paraphrase_corpus;
use cards::tokenizer::Tokenizer;

fn main() -> cards::Result<()> {
    println!("ties: {:.4}", spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 2.0, 3.0, 4.0])?);

    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let tok = Tokenizer::load(&data.join("vocab.json"), &data.join("merges.txt"))?;
    let params = EncoderParams::init(tok.vocab_size(), 32, 0)?;
    let dev: Vec<StsExample> = paraphrase_corpus(10, 20, 0)?.dev;
    let sets = vec![("synthetic".to_string(), dev)];
    for transform in [
        EvalTransform::default(),
        EvalTransform { capitalize_first: true, lowercase: false },
        EvalTransform { capitalize_first: false, lowercase: true },
    ] {
        let report = evaluate_sts(&params, &tok, &sets, transform, 32)?;
        println!("{transform:?}: avg {:.4}", report.average);
    }
    Ok(())
}
