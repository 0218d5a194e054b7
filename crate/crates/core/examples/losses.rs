//! Contrastive objectives with and without hard negatives, their analytic
//! gradients, and the symmetric KL used for consistency baselines.

use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cards::objective::{grad_info_nce_hard, info_nce, info_nce_hard, symmetric_kl, HardNegativeOptions};

fn main() -> cards::Result<()> {
    let h = array![[1.0, 0.0], [0.0, 1.0]];
    println!("2x2 identity batch, tau=1: {:.6}", info_nce(h.view(), h.view(), 1.0)?.total);
    let with_dup = info_nce_hard(h.view(), h.view(), h.view(), 1.0, HardNegativeOptions::default())?;
    println!("same batch as hard negatives: {:.6} (adds ln 2)", with_dup.total);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut random = |r, c| Array2::from_shape_simple_fn((r, c), || rng.gen_range(-1.0..1.0));
    let (a, p, n) = (random(4, 8), random(4, 8), random(4, 8));
    let (loss, grads) = grad_info_nce_hard(a.view(), p.view(), Some(n.view()), 0.05, HardNegativeOptions::default())?;
    println!("random batch loss {:.4}, per sample {:?}", loss.total, loss.per_sample);
    println!("|dL/dA| = {:.4}", grads.anchors.iter().map(|g| g * g).sum::<f64>().sqrt());

    println!("symmetric KL {:.4}", symmetric_kl(&[0.75, 0.25], &[0.25, 0.75])?);
    println!("without shared support {}", symmetric_kl(&[1.0, 0.0], &[0.5, 0.5])?);
    Ok(())
}
