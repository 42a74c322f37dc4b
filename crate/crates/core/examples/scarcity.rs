//! How rare a natural anchor-positive pair is when all three angles must
//! match within a small window.

use headpose::mining::estimate_anchor_positive_rate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> headpose::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 1_000_000;
    for window in [10.0, 20.0, 40.0] {
        let p = estimate_anchor_positive_rate(n, window, &mut rng)?;
        let expected = (window / 360.0f64).powi(3);
        println!("window {window:>4} deg: estimated {p:.3e}, expected {expected:.3e}");
    }
    Ok(())
}
