//! Positive thresholding, margin-filtered negatives and Circle Loss on a
//! random batch.

use headpose::mining::{circle_loss, find_positive_pairs, mine_negative_triplets, EmbeddingBatch, LossConfig};
use headpose::so3::RotationMatrix;
use headpose::synth::Source;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> headpose::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = LossConfig::default();
    let n = 16;
    let mut poses = Vec::new();
    let mut sources = Vec::new();
    for _ in 0..n / 2 {
        let r = RotationMatrix::random(&mut rng);
        poses.extend([r, r]);
        sources.extend([Source::AnchorPool, Source::PositivePool]);
    }
    let mut v = Array2::from_shape_fn((n, 8), |_| rng.gen::<f64>() - 0.5);
    for mut row in v.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    let emb = EmbeddingBatch::new(v, poses, sources)?;
    let pairs = find_positive_pairs(emb.poses(), emb.sources(), &cfg)?;
    let set = mine_negative_triplets(&emb, &pairs, &cfg)?;
    println!("{} positive pairs, {} triplets over {} anchors", pairs.len(), set.triplets.len(), set.anchors.len());
    let (loss, grad) = circle_loss(&emb, &set, &cfg)?;
    println!("circle loss {loss:.4}, gradient norm {:.4}", grad.iter().map(|g| g * g).sum::<f64>().sqrt());
    Ok(())
}
