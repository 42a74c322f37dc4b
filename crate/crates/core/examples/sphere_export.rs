//! Writes sphere projections of a frontal pool and its fully augmented
//! variant for external plotting. The z projection (the camera axis) is
//! untouched by in-plane transforms; the x and y projections spread out.

use headpose::augment::{make_test_variant, TestVariant};
use headpose::corpus::{frontal_range, render_pool};
use headpose::eval::{export_sphere_points, variant_rng};
use headpose::so3::{sphere_project, Axis};

fn main() -> headpose::Result<()> {
    let samples = render_pool(1..21, 400, &frontal_range(), 16, 0)?;
    let pairs: Vec<_> = samples.iter().map(|s| (s.image.clone(), s.pose)).collect();
    let fa = make_test_variant(&pairs, TestVariant::Fa, &mut variant_rng(0, TestVariant::Fa))?;
    let dir = std::env::temp_dir();
    for (name, poses) in [
        ("original", pairs.iter().map(|p| p.1).collect::<Vec<_>>()),
        ("fa", fa.iter().map(|p| p.1).collect()),
    ] {
        for (k, axis) in [Axis::X, Axis::Y, Axis::Z].into_iter().enumerate() {
            let out = dir.join(format!("sphere_{name}_{k}.csv"));
            export_sphere_points(&poses, axis, &out)?;
            let c: Vec<f64> = poses.iter().map(|r| sphere_project(r, axis)[k]).collect();
            let (lo, hi) = c.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
            println!("{name:>8} {axis:?}: own component in [{lo:+.3}, {hi:+.3}] -> {}", out.display());
        }
    }
    Ok(())
}
