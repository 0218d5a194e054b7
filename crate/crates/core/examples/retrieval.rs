//! Static hard-negative index: exact top-k cosine search and the three
//! negative sampling strategies.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cards::retrieval::{NegativeIndex, RetrievalConfig, Strategy};

fn main() -> cards::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 1000;
    let vectors = Array2::from_shape_simple_fn((n, 16), || rng.gen_range(-1.0f32..1.0));
    let ids: Vec<u64> = (0..n as u64).map(|i| 10_000 + i).collect();
    let index = NegativeIndex::build(&ids, vectors.view())?;
    println!("{} vectors, d={}, provenance {}", index.len(), index.dim(), &index.provenance_hex()[..16]);

    for nb in index.top_k(10_000, 5)? {
        println!("  {} {:.4}", nb.id, nb.cosine);
    }
    for strategy in [Strategy::RTop, Strategy::RUniform, Strategy::DUniform] {
        let cfg = RetrievalConfig { k: 8, s: 2, strategy };
        let negs = index.sample_negatives(10_000, &cfg, &mut rng)?;
        println!("{strategy:<10} {negs:?}");
    }

    let path = std::env::temp_dir().join("cards_example.idx");
    index.save(&path)?;
    let reloaded = NegativeIndex::load(&path)?;
    assert_eq!(reloaded.provenance(), index.provenance());
    Ok(())
}
