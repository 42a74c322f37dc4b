//! Rotating or flipping an image moves its label in lockstep, and geodesic
//! distances between labels survive the move.

use headpose::augment::{apply_paired, Augmentation};
use headpose::so3::{geodesic_distance, rotation_to_euler};
use headpose::corpus::frontal_range;
use headpose::synth::{render, sample_identity};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> headpose::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let scene = sample_identity(3);
    let range = frontal_range();
    let (pa, pb) = (range.sample(&mut rng), range.sample(&mut rng));
    let img = render(&scene, &pa, 64)?;
    let augs = [
        Augmentation::Rotate { phi: 0.6 },
        Augmentation::Flip { theta: 1.1 },
        Augmentation::Compose { phi: -2.0, theta: 0.3 },
    ];
    for aug in augs {
        let (out, label) = apply_paired(&img, &pa, &aug);
        let truth = render(&scene, &label, 64);
        let e = rotation_to_euler(&label).to_degrees();
        println!("{aug:?}");
        println!("  new label (yaw, pitch, roll) = ({:.1}, {:.1}, {:.1})", e[0], e[1], e[2]);
        println!(
            "  d before {:.6}  d after {:.6}",
            geodesic_distance(&pa, &pb),
            geodesic_distance(&label, &aug.transform_pose(&pb))
        );
        if let (Ok(truth), Augmentation::Rotate { .. }) = (truth, aug) {
            println!("  pixel residual vs re-render: {:.4}", out.mean_abs_diff(&truth));
        }
    }
    Ok(())
}
