//! Trains the toy encoder on synthetic paraphrase clusters, once with
//! retrieved hard negatives and once with in-batch negatives only, and prints
//! dev Spearman for both.
//!
//!     cargo run --release --example train_toy -- [seeds] [epochs] [lr]

use std::path::Path;
use std::time::Instant;

use cards::pipeline::{encode_corpus, train, TrainConfig};
use cards::retrieval::NegativeIndex;
use cards::synthetic::paraphrase_corpus;
use cards::encoder::EncoderParams;
use cards::tokenizer::Tokenizer;

fn main() -> cards::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds: u64 = args.first().map_or(5, |s| s.parse().expect("seeds"));
    let epochs: usize = args.get(1).map_or(10, |s| s.parse().expect("epochs"));
    let lr: f64 = args.get(2).map_or(0.1, |s| s.parse().expect("lr"));

    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let tok = Tokenizer::load(&data.join("vocab.json"), &data.join("merges.txt"))?;

    for seed in 0..seeds {
        let started = Instant::now();
        let corpus = paraphrase_corpus(200, 40, seed)?;
        let base = TrainConfig {
            seed,
            epochs,
            lr,
            eval_every: 25,
            ..TrainConfig::default()
        };
        let init = EncoderParams::init(tok.vocab_size(), base.dim, seed)?;
        let vectors = encode_corpus(&init, &tok, &corpus.train, base.max_tokens)?;
        let index = NegativeIndex::from_vectors(&vectors)?;

        let hard = train(&corpus.train, &tok, Some(&index), &corpus.dev, &base, false)?;
        let plain_cfg = TrainConfig {
            retrieval: false,
            ..base.clone()
        };
        let plain = train(&corpus.train, &tok, None, &corpus.dev, &plain_cfg, false)?;
        println!(
            "seed {seed}: step0 {:.4}  hard-negatives {:.4} (best {:.4} @ {})  in-batch {:.4} (best {:.4} @ {})  [{:.1?}]",
            hard.initial_dev_score(),
            hard.final_dev_score(),
            hard.best.dev_score,
            hard.best.step,
            plain.final_dev_score(),
            plain.best.dev_score,
            plain.best.step,
            started.elapsed()
        );
    }
    Ok(())
}
