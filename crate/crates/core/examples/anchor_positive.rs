//! Generates a positive for an anchor: another identity shown at exactly
//! the anchor's pose.

use headpose::corpus::frontal_range;
use headpose::synth::{generate_positive, render, sample_identity};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> headpose::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let anchor_scene = sample_identity(10);
    let positive_scene = sample_identity(1_000_010);
    let pose = frontal_range().sample(&mut rng);
    let anchor = render(&anchor_scene, &pose, 64)?;
    let positive = generate_positive(&pose, &positive_scene, 64)?;
    let same_id = render(&anchor_scene, &pose, 64)?;
    println!("labels equal: {}", positive.pose == pose);
    println!("anchor vs positive pixel difference: {:.4}", anchor.mean_abs_diff(&positive.image));
    println!("anchor vs itself: {:.4}", anchor.mean_abs_diff(&same_id));
    let dir = std::env::temp_dir();
    anchor.save(&dir.join("anchor.bin"))?;
    positive.image.save(&dir.join("positive.bin"))?;
    println!("rasters written to {}", dir.display());
    Ok(())
}
