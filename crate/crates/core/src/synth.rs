//! Procedural head renderer and anchor-positive generation.
//!
//! A "head" is a cloud of coloured discs on and around the unit sphere:
//! skin and hair points, facial landmarks, and a couple of deliberately
//! one-sided features (an earring on the left ear, a hair tuft on the right)
//! so that no reflection maps the head onto itself. Identities differ in
//! colouring, hairline and small geometric jitter but share the layout,
//! which is what makes pose learnable across identities.
//!
//! Rendering is orthographic along z (camera on +z, x right, y up) with
//! painter's-order depth sorting and anti-aliased disc splats.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::{transform_raster, Augmentation};
use crate::error::{Error, Result};
use crate::raster::{Raster, CHANNELS};
use crate::so3::{euler_to_rotation, rotation_to_euler, EulerAngles, RotationMatrix, Vec3};

pub const MIN_POINTS: usize = 32;
pub const MIN_RENDER_SIZE: usize = 16;

/// Pixels per object unit, as a fraction of the image side. The largest
/// splat extent stays inside the inscribed circle, so in-plane rotations
/// never clip the head.
const PROJECTION_SCALE: f64 = 0.34;
const SPHERE_POINTS: usize = 72;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenePoint {
    pub position: Vec3,
    pub color: [f32; 3],
    /// Disc radius in object units (the head has radius 1).
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadScene {
    pub identity_seed: u64,
    pub points: Vec<ScenePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    AnchorPool,
    PositivePool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSample {
    pub image: Raster,
    pub pose: RotationMatrix,
    pub identity_seed: u64,
    pub source: Source,
}

fn jitter<R: Rng>(rng: &mut R, amount: f64) -> f64 {
    rng.gen_range(-amount..=amount)
}

fn vary(color: [f32; 3], rng: &mut impl Rng, amount: f32) -> [f32; 3] {
    color.map(|c| (c + rng.gen_range(-amount..=amount)).clamp(0.0, 1.0))
}

/// Builds the scene for an identity; the same seed always yields the same head.
pub fn sample_identity(seed: u64) -> HeadScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1d3a_77c0_ffee);

    let skin_r = rng.gen_range(0.55f32..0.95);
    let skin = [
        skin_r,
        skin_r * rng.gen_range(0.62f32..0.8),
        skin_r * rng.gen_range(0.42f32..0.62),
    ];
    let hair_palette: [[f32; 3]; 5] = [
        [0.08, 0.06, 0.05],
        [0.32, 0.2, 0.1],
        [0.75, 0.6, 0.3],
        [0.6, 0.25, 0.1],
        [0.5, 0.5, 0.52],
    ];
    let hair = vary(hair_palette[rng.gen_range(0..hair_palette.len())], &mut rng, 0.06);
    let hairline = rng.gen_range(0.15..0.5);
    let back_hair = rng.gen_range(-0.45..-0.1);
    let base_radius = rng.gen_range(0.27..0.32);

    let mut points = Vec::with_capacity(SPHERE_POINTS + 12);
    let golden = PI * (3.0 - 5f64.sqrt());
    for i in 0..SPHERE_POINTS {
        let y = 1.0 - 2.0 * (i as f64 + 0.5) / SPHERE_POINTS as f64;
        let ring = (1.0 - y * y).sqrt();
        let a = golden * i as f64;
        let mut p = [ring * a.cos(), y, ring * a.sin()];
        for c in p.iter_mut() {
            *c += jitter(&mut rng, 0.04);
        }
        let is_hair = p[1] > hairline || p[2] < back_hair;
        let color = vary(if is_hair { hair } else { skin }, &mut rng, 0.035);
        points.push(ScenePoint {
            position: p,
            color,
            radius: base_radius + jitter(&mut rng, 0.025),
        });
    }

    let eye_dx = rng.gen_range(0.28..0.38);
    let eye_y = rng.gen_range(0.15..0.28);
    let eye = vary([0.1, 0.08, 0.12], &mut rng, 0.06);
    let lip = vary([0.75, 0.2, 0.22], &mut rng, 0.08);
    let nose = skin.map(|c| (c * 0.85).clamp(0.0, 1.0));
    let ring_color = [
        [0.15f32, 0.85, 0.3],
        [0.2, 0.45, 0.95],
        [0.95, 0.85, 0.15],
    ][rng.gen_range(0..3)];

    let mut feature = |position: Vec3, color: [f32; 3], radius: f64| {
        points.push(ScenePoint {
            position,
            color,
            radius,
        })
    };
    // Landmarks sit slightly above the skin so they paint over it.
    let lifted = |d: Vec3, height: f64| {
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        d.map(|c| c * height / n)
    };
    feature(lifted([-eye_dx, eye_y, 0.9], 1.08), eye, 0.15);
    feature(lifted([eye_dx, eye_y, 0.9], 1.08), eye, 0.15);
    feature(lifted([0.0, -0.05, 1.0], 1.14), nose, 0.15);
    feature(lifted([-0.13, -0.42, 0.9], 1.07), lip, 0.15);
    feature(lifted([0.13, -0.42, 0.9], 1.07), lip, 0.15);
    feature([-1.04, 0.0, -0.05], skin, 0.2);
    feature([1.04, 0.0, -0.05], skin, 0.2);
    // One-sided features.
    feature([-1.06, -0.3, 0.02], ring_color, 0.11);
    feature([0.45, 0.85, 0.4], hair.map(|c| (c * 1.3 + 0.05).min(1.0)), 0.2);

    HeadScene {
        identity_seed: seed,
        points,
    }
}

/// Orthographic splat rendering of `scene` at `pose` onto a black square image.
pub fn render(scene: &HeadScene, pose: &RotationMatrix, size: usize) -> Result<Raster> {
    if size < MIN_RENDER_SIZE {
        return Err(Error::InvalidRaster(format!(
            "render size {size} is below {MIN_RENDER_SIZE}"
        )));
    }
    let scale = PROJECTION_SCALE * size as f64;
    let centre = size as f64 / 2.0;

    let mut projected: Vec<(f64, Vec3, &ScenePoint)> = scene
        .points
        .iter()
        .map(|p| {
            let q = pose.apply(&p.position);
            (q[2], q, p)
        })
        .collect();
    projected.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut data = vec![0.0f32; size * size * CHANNELS];
    for (_, q, point) in projected {
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt().max(1e-9);
        let shade = (0.45 + 0.55 * (q[2] / n).max(0.0)) as f32;
        let color = point.color.map(|c| c * shade);

        let px = centre + q[0] * scale;
        let py = centre - q[1] * scale;
        let r = point.radius * scale;
        let lo_c = ((px - r - 1.0).floor().max(0.0)) as usize;
        let hi_c = ((px + r + 1.0).ceil().min(size as f64)) as usize;
        let lo_r = ((py - r - 1.0).floor().max(0.0)) as usize;
        let hi_r = ((py + r + 1.0).ceil().min(size as f64)) as usize;
        for row in lo_r..hi_r {
            let dy = row as f64 + 0.5 - py;
            for col in lo_c..hi_c {
                let dx = col as f64 + 0.5 - px;
                let coverage = (r + 0.5 - (dx * dx + dy * dy).sqrt()).clamp(0.0, 1.0) as f32;
                if coverage <= 0.0 {
                    continue;
                }
                let i = (row * size + col) * CHANNELS;
                for k in 0..CHANNELS {
                    data[i + k] = data[i + k] * (1.0 - coverage) + color[k] * coverage;
                }
            }
        }
    }
    Ok(Raster::from_clamped(size, size, data))
}

/// Uniform box in Euler coordinates, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRange {
    pub yaw: (f64, f64),
    pub pitch: (f64, f64),
    pub roll: (f64, f64),
}

impl PoseRange {
    /// The yaw/pitch grid a yaw-and-pitch controllable generator covers; roll is zero.
    #[allow(clippy::approx_constant)]
    pub const GENERATOR: PoseRange = PoseRange {
        yaw: (-3.14, 3.0),
        pitch: (-1.5, 0.1),
        roll: (0.0, 0.0),
    };

    pub fn with_roll(self, lo: f64, hi: f64) -> PoseRange {
        PoseRange {
            roll: (lo, hi),
            ..self
        }
    }

    pub fn sample_euler<R: Rng + ?Sized>(&self, rng: &mut R) -> EulerAngles {
        let mut draw = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.gen::<f64>();
        let yaw = draw(self.yaw);
        let pitch = draw(self.pitch);
        let roll = draw(self.roll);
        EulerAngles::new(yaw, pitch, roll)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RotationMatrix {
        euler_to_rotation(&self.sample_euler(rng)).expect("finite angles")
    }
}

/// Positive for an anchor: render the other identity at the anchor's yaw and
/// pitch with zero roll, then rotate the picture by the anchor's roll. The
/// returned label is the anchor's own matrix.
pub fn generate_positive(
    anchor_pose: &RotationMatrix,
    positive_identity: &HeadScene,
    size: usize,
) -> Result<RenderedSample> {
    let e = rotation_to_euler(anchor_pose);
    let upright = euler_to_rotation(&EulerAngles::new(e.yaw, e.pitch, 0.0))?;
    let mut image = render(positive_identity, &upright, size)?;
    if e.roll != 0.0 {
        image = transform_raster(&image, &Augmentation::Rotate { phi: e.roll });
    }
    Ok(RenderedSample {
        image,
        pose: *anchor_pose,
        identity_seed: positive_identity.identity_seed,
        source: Source::PositivePool,
    })
}

/// Probabilities and magnitudes of the pixel-level augmentations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelAugment {
    pub p_brightness: f64,
    pub brightness: f32,
    pub p_contrast: f64,
    pub contrast: (f32, f32),
    pub p_gamma: f64,
    pub gamma: (f32, f32),
    pub p_channel_shuffle: f64,
    pub p_noise: f64,
    pub noise_std: f32,
    pub p_blur: f64,
    pub blur_sigma: (f64, f64),
    pub p_translate: f64,
    pub max_shift: i64,
    pub p_downsample: f64,
    pub p_dropout: f64,
    pub dropout_size: usize,
}

impl Default for PixelAugment {
    fn default() -> Self {
        PixelAugment {
            p_brightness: 0.3,
            brightness: 0.1,
            p_contrast: 0.3,
            contrast: (0.8, 1.2),
            p_gamma: 0.2,
            gamma: (0.8, 1.25),
            p_channel_shuffle: 0.05,
            p_noise: 0.3,
            noise_std: 0.02,
            p_blur: 0.15,
            blur_sigma: (0.3, 0.8),
            p_translate: 0.3,
            max_shift: 1,
            p_downsample: 0.1,
            p_dropout: 0.15,
            dropout_size: 4,
        }
    }
}

impl PixelAugment {
    pub fn disabled() -> Self {
        PixelAugment {
            p_brightness: 0.0,
            p_contrast: 0.0,
            p_gamma: 0.0,
            p_channel_shuffle: 0.0,
            p_noise: 0.0,
            p_blur: 0.0,
            p_translate: 0.0,
            p_downsample: 0.0,
            p_dropout: 0.0,
            ..Default::default()
        }
    }
}

fn map_values(img: &Raster, f: impl Fn(f32) -> f32) -> Raster {
    let data = img.data().iter().map(|&v| f(v)).collect();
    Raster::from_clamped(img.width(), img.height(), data)
}

pub fn brightness_shift(img: &Raster, delta: f32) -> Raster {
    map_values(img, |v| v + delta)
}

/// Scales deviations from the image mean.
pub fn contrast(img: &Raster, factor: f32) -> Raster {
    let mean = img.data().iter().sum::<f32>() / img.data().len() as f32;
    map_values(img, |v| mean + (v - mean) * factor)
}

pub fn gamma_correct(img: &Raster, gamma: f32) -> Raster {
    map_values(img, |v| v.powf(gamma))
}

pub fn channel_shuffle(img: &Raster, perm: [usize; 3]) -> Raster {
    let mut out = img.clone();
    for (dst, src) in out.data_mut().chunks_exact_mut(CHANNELS).zip(img.data().chunks_exact(CHANNELS)) {
        for k in 0..CHANNELS {
            dst[k] = src[perm[k]];
        }
    }
    out
}

pub fn gaussian_noise<R: Rng + ?Sized>(img: &Raster, std: f32, rng: &mut R) -> Raster {
    let normal = Normal::new(0.0f32, std.max(0.0)).expect("non-negative std");
    let data = img.data().iter().map(|&v| v + normal.sample(rng)).collect();
    Raster::from_clamped(img.width(), img.height(), data)
}

pub fn gaussian_blur(img: &Raster, sigma: f64) -> Raster {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / total).collect();
    let (w, h) = (img.width() as i64, img.height() as i64);

    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut out = vec![0.0f32; src.len()];
        for row in 0..h {
            for col in 0..w {
                let mut acc = [0.0f64; 3];
                for (ki, k) in kernel.iter().enumerate() {
                    let off = ki as i64 - radius;
                    let (c, r) = if horizontal { (col + off, row) } else { (col, row + off) };
                    // Clamp-to-edge keeps the total weight at one.
                    let c = c.clamp(0, w - 1);
                    let r = r.clamp(0, h - 1);
                    let i = ((r * w + c) as usize) * CHANNELS;
                    for ch in 0..CHANNELS {
                        acc[ch] += k * src[i + ch] as f64;
                    }
                }
                let i = ((row * w + col) as usize) * CHANNELS;
                for ch in 0..CHANNELS {
                    out[i + ch] = acc[ch] as f32;
                }
            }
        }
        out
    };
    let tmp = pass(img.data(), true);
    Raster::from_clamped(img.width(), img.height(), pass(&tmp, false))
}

/// Integer shift with zero fill; positive `dx` moves content right, positive `dy` down.
pub fn translate(img: &Raster, dx: i64, dy: i64) -> Raster {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut out = vec![0.0f32; img.data().len()];
    for row in 0..h {
        for col in 0..w {
            let (sc, sr) = (col - dx, row - dy);
            if sc < 0 || sr < 0 || sc >= w || sr >= h {
                continue;
            }
            let src = ((sr * w + sc) as usize) * CHANNELS;
            let dst = ((row * w + col) as usize) * CHANNELS;
            out[dst..dst + CHANNELS].copy_from_slice(&img.data()[src..src + CHANNELS]);
        }
    }
    Raster::from_clamped(img.width(), img.height(), out)
}

/// Block-average by `factor` then replicate back up to the original size.
pub fn downsample_upsample(img: &Raster, factor: usize) -> Raster {
    if factor <= 1 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    for br in (0..h).step_by(factor) {
        for bc in (0..w).step_by(factor) {
            let rows = br..(br + factor).min(h);
            let cols = bc..(bc + factor).min(w);
            let n = (rows.len() * cols.len()) as f32;
            let mut acc = [0.0f32; 3];
            for r in rows.clone() {
                for c in cols.clone() {
                    let p = img.pixel(c, r);
                    for k in 0..3 {
                        acc[k] += p[k];
                    }
                }
            }
            let avg = acc.map(|a| a / n);
            for r in rows.clone() {
                for c in cols.clone() {
                    out.set_pixel(c, r, avg);
                }
            }
        }
    }
    out
}

/// Zeroes square patches given by their top-left corner; patches are clipped to the frame.
pub fn coarse_dropout(img: &Raster, patches: &[(usize, usize)], size: usize) -> Raster {
    let mut out = img.clone();
    for &(col0, row0) in patches {
        for r in row0..(row0 + size).min(img.height()) {
            for c in col0..(col0 + size).min(img.width()) {
                out.set_pixel(c, r, [0.0; 3]);
            }
        }
    }
    out
}

/// Applies an independently drawn subset of the pixel augmentations. The pose
/// label is never affected.
pub fn pixel_augment<R: Rng + ?Sized>(img: &Raster, cfg: &PixelAugment, rng: &mut R) -> Raster {
    let mut out = img.clone();
    if rng.gen::<f64>() < cfg.p_translate {
        let m = cfg.max_shift;
        out = translate(&out, rng.gen_range(-m..=m), rng.gen_range(-m..=m));
    }
    if rng.gen::<f64>() < cfg.p_downsample {
        out = downsample_upsample(&out, 2);
    }
    if rng.gen::<f64>() < cfg.p_blur {
        let (lo, hi) = cfg.blur_sigma;
        out = gaussian_blur(&out, lo + (hi - lo) * rng.gen::<f64>());
    }
    if rng.gen::<f64>() < cfg.p_brightness {
        let b = cfg.brightness;
        out = brightness_shift(&out, rng.gen_range(-b..=b));
    }
    if rng.gen::<f64>() < cfg.p_contrast {
        let (lo, hi) = cfg.contrast;
        out = contrast(&out, rng.gen_range(lo..=hi));
    }
    if rng.gen::<f64>() < cfg.p_gamma {
        let (lo, hi) = cfg.gamma;
        out = gamma_correct(&out, rng.gen_range(lo..=hi));
    }
    if rng.gen::<f64>() < cfg.p_channel_shuffle {
        let mut perm = [0usize, 1, 2];
        perm.shuffle(rng);
        out = channel_shuffle(&out, perm);
    }
    if rng.gen::<f64>() < cfg.p_noise {
        out = gaussian_noise(&out, cfg.noise_std, rng);
    }
    if rng.gen::<f64>() < cfg.p_dropout && cfg.dropout_size < out.width().min(out.height()) {
        let s = cfg.dropout_size;
        let patch = (rng.gen_range(0..=out.width() - s), rng.gen_range(0..=out.height() - s));
        out = coarse_dropout(&out, &[patch], s);
    }
    out
}
