//! Geometric transformations applied jointly to images and pose labels.
//!
//! A clockwise in-plane rotation by `phi` maps the label `R` to
//! `R_roll(phi) · R`; a reflection across the line through the image centre
//! at angle `theta` (counter-clockwise from +x) maps it to
//! `Flip_theta · R · Flip_X`. Both maps preserve geodesic distances between
//! labels, so a shared augmentation keeps every anchor/positive/negative
//! relation of a batch intact.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Raster, CHANNELS};
use crate::so3::{mat_mul, roll_matrix, Mat3, RotationMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Augmentation {
    /// Clockwise rotation by `phi` radians.
    Rotate { phi: f64 },
    /// Reflection across the line at `theta` radians counter-clockwise from +x.
    Flip { theta: f64 },
    /// Rotation followed by reflection.
    Compose { phi: f64, theta: f64 },
}

impl Augmentation {
    pub fn transform_pose(&self, r: &RotationMatrix) -> RotationMatrix {
        match *self {
            Augmentation::Rotate { phi } => rotate_pose(r, phi),
            Augmentation::Flip { theta } => flip_pose(r, theta),
            Augmentation::Compose { phi, theta } => flip_pose(&rotate_pose(r, phi), theta),
        }
    }

    /// 2×2 map taking output-image coordinates (centred, y up) to input coordinates.
    fn inverse_plane_map(&self) -> [[f64; 2]; 2] {
        // Clockwise rotation: p_out = C p_in with C = [[c, s], [-s, c]], so p_in = Cᵀ p_out.
        let rot_inv = |phi: f64| {
            let (s, c) = phi.sin_cos();
            [[c, -s], [s, c]]
        };
        // Reflections are their own inverse.
        let reflect = |theta: f64| {
            let (s, c) = (2.0 * theta).sin_cos();
            [[c, s], [s, -c]]
        };
        match *self {
            Augmentation::Rotate { phi } => rot_inv(phi),
            Augmentation::Flip { theta } => reflect(theta),
            Augmentation::Compose { phi, theta } => {
                // p_out = F C p_in  =>  p_in = Cᵀ F p_out
                let a = rot_inv(phi);
                let b = reflect(theta);
                [
                    [
                        a[0][0] * b[0][0] + a[0][1] * b[1][0],
                        a[0][0] * b[0][1] + a[0][1] * b[1][1],
                    ],
                    [
                        a[1][0] * b[0][0] + a[1][1] * b[1][0],
                        a[1][0] * b[0][1] + a[1][1] * b[1][1],
                    ],
                ]
            }
        }
    }
}

/// Label of an image rotated clockwise by `phi`.
pub fn rotate_pose(r: &RotationMatrix, phi: f64) -> RotationMatrix {
    RotationMatrix::from_trusted(mat_mul(&roll_matrix(phi), r.matrix()))
}

pub fn flip_matrix(theta: f64) -> Mat3 {
    let (s, c) = (2.0 * theta).sin_cos();
    [[c, s, 0.0], [s, -c, 0.0], [0.0, 0.0, 1.0]]
}

pub const FLIP_X: Mat3 = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Label of an image reflected across the line at `theta`.
pub fn flip_pose(r: &RotationMatrix, theta: f64) -> RotationMatrix {
    let m = mat_mul(&mat_mul(&flip_matrix(theta), r.matrix()), &FLIP_X);
    RotationMatrix::from_trusted(m)
}

/// Resamples `img` under the augmentation: bilinear, zero fill, same size.
pub fn transform_raster(img: &Raster, aug: &Augmentation) -> Raster {
    let (w, h) = (img.width(), img.height());
    let m = aug.inverse_plane_map();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut out = vec![0.0f32; w * h * CHANNELS];
    for row in 0..h {
        let y = cy - (row as f64 + 0.5);
        for col in 0..w {
            let x = (col as f64 + 0.5) - cx;
            let xi = m[0][0] * x + m[0][1] * y;
            let yi = m[1][0] * x + m[1][1] * y;
            let u = xi + cx - 0.5;
            let v = cy - yi - 0.5;
            let rgb = img.sample_bilinear(u, v);
            let i = (row * w + col) * CHANNELS;
            for k in 0..CHANNELS {
                out[i + k] = rgb[k] as f32;
            }
        }
    }
    Raster::from_clamped(w, h, out)
}

/// Transforms an image and its label together.
pub fn apply_paired(img: &Raster, r: &RotationMatrix, aug: &Augmentation) -> (Raster, RotationMatrix) {
    (transform_raster(img, aug), aug.transform_pose(r))
}

/// Stochastic geometric augmentation for training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub p_rotate: f64,
    pub rotate_range: (f64, f64),
    pub p_flip: f64,
    pub flip_range: (f64, f64),
}

impl Default for AugmentPolicy {
    /// Rotate clockwise by up to 90° half the time; flip across a line
    /// between 0° and 90° with probability 0.3, independently.
    fn default() -> Self {
        AugmentPolicy {
            p_rotate: 0.5,
            rotate_range: (0.0, FRAC_PI_2),
            p_flip: 0.3,
            flip_range: (0.0, FRAC_PI_2),
        }
    }
}

impl AugmentPolicy {
    pub fn none() -> Self {
        AugmentPolicy {
            p_rotate: 0.0,
            p_flip: 0.0,
            ..Default::default()
        }
    }

    pub fn rotate_only() -> Self {
        AugmentPolicy {
            p_flip: 0.0,
            ..Default::default()
        }
    }

    pub fn flip_only() -> Self {
        AugmentPolicy {
            p_rotate: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !prob_ok(self.p_rotate) || !prob_ok(self.p_flip) {
            return Err(Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        if !range_ok(self.rotate_range) || !range_ok(self.flip_range) {
            return Err(Error::Config("augmentation ranges must be finite with lo <= hi".into()));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Draws rotation and flip independently; `None` when neither fires.
pub fn sample_augmentation<R: Rng + ?Sized>(policy: &AugmentPolicy, rng: &mut R) -> Option<Augmentation> {
    let phi = (rng.gen::<f64>() < policy.p_rotate).then(|| uniform(rng, policy.rotate_range));
    let theta = (rng.gen::<f64>() < policy.p_flip).then(|| uniform(rng, policy.flip_range));
    match (phi, theta) {
        (Some(phi), Some(theta)) => Some(Augmentation::Compose { phi, theta }),
        (Some(phi), None) => Some(Augmentation::Rotate { phi }),
        (None, Some(theta)) => Some(Augmentation::Flip { theta }),
        (None, None) => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestVariant {
    Original,
    /// Slightly augmented: 10° clockwise, then a flip across the 85° line.
    Sa,
    /// Fully augmented: random rotation in (−180°, 180°] and flip line in [0°, 90°].
    Fa,
}

impl TestVariant {
    pub const ALL: [TestVariant; 3] = [TestVariant::Original, TestVariant::Sa, TestVariant::Fa];

    pub fn name(&self) -> &'static str {
        match self {
            TestVariant::Original => "original",
            TestVariant::Sa => "sa",
            TestVariant::Fa => "fa",
        }
    }
}

impl std::fmt::Display for TestVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TestVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(TestVariant::Original),
            "sa" => Ok(TestVariant::Sa),
            "fa" => Ok(TestVariant::Fa),
            other => Err(Error::Config(format!("unknown test variant {other:?}"))),
        }
    }
}

pub const SA_AUGMENTATION: Augmentation = Augmentation::Compose {
    phi: 10.0 * PI / 180.0,
    theta: 85.0 * PI / 180.0,
};

/// Per-sample augmentation for a test variant; `None` for the original set.
pub fn variant_augmentation<R: Rng + ?Sized>(variant: TestVariant, rng: &mut R) -> Option<Augmentation> {
    match variant {
        TestVariant::Original => None,
        TestVariant::Sa => Some(SA_AUGMENTATION),
        TestVariant::Fa => {
            let phi = PI - 2.0 * PI * rng.gen::<f64>();
            let theta = FRAC_PI_2 * rng.gen::<f64>();
            Some(Augmentation::Compose { phi, theta })
        }
    }
}

/// Materializes a test variant; the original variant returns clones.
pub fn make_test_variant<R: Rng + ?Sized>(
    samples: &[(Raster, RotationMatrix)],
    variant: TestVariant,
    rng: &mut R,
) -> Result<Vec<(Raster, RotationMatrix)>> {
    if samples.is_empty() {
        return Err(Error::Empty("test set"));
    }
    Ok(samples
        .iter()
        .map(|(img, r)| match variant_augmentation(variant, rng) {
            Some(aug) => apply_paired(img, r, &aug),
            None => (img.clone(), *r),
        })
        .collect())
}
