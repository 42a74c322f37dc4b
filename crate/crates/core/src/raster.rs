//! RGB float images and their flat binary file format.
//!
//! On disk a raster is three little-endian `u32` values (width, height,
//! channels) followed by `width * height * channels` little-endian `f32`
//! samples in row-major, channel-interleaved order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;
pub const MIN_SIDE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::InvalidRaster(format!(
                "{width}x{height} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if data.len() != width * height * CHANNELS {
            return Err(Error::SizeMismatch {
                expected: width * height * CHANNELS,
                got: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidRaster(format!("sample {v} outside [0, 1]")));
        }
        Ok(Raster { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Raster::new(width, height, vec![value; width * height * CHANNELS])
    }

    pub fn black(width: usize, height: usize) -> Result<Self> {
        Raster::filled(width, height, 0.0)
    }

    /// Used internally where values are produced by range-preserving operations.
    pub(crate) fn from_clamped(width: usize, height: usize, mut data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height * CHANNELS);
        for v in data.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Raster { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixel(&self, col: usize, row: usize) -> [f32; 3] {
        let i = (row * self.width + col) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, col: usize, row: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * CHANNELS;
        for (k, v) in rgb.iter().enumerate() {
            self.data[i + k] = v.clamp(0.0, 1.0);
        }
    }

    /// Mean absolute difference over every sample; panics on shape mismatch.
    pub fn mean_abs_diff(&self, other: &Raster) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let total: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        total / self.data.len() as f64
    }

    /// Box-filter downsampling by an integer factor, flattened to features
    /// centred on zero (row-major, channel-interleaved).
    pub fn pooled_features(&self, factor: usize) -> Result<Vec<f64>> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::Config(format!(
                "cannot pool {}x{} by {factor}",
                self.width, self.height
            )));
        }
        let w = self.width / factor;
        let h = self.height / factor;
        let mut out = vec![0.0f64; w * h * CHANNELS];
        let norm = 1.0 / (factor * factor) as f64;
        for row in 0..self.height {
            for col in 0..self.width {
                let src = (row * self.width + col) * CHANNELS;
                let dst = ((row / factor) * w + col / factor) * CHANNELS;
                for k in 0..CHANNELS {
                    out[dst + k] += self.data[src + k] as f64 * norm;
                }
            }
        }
        for v in out.iter_mut() {
            *v -= 0.5;
        }
        Ok(out)
    }

    /// Bilinear lookup at continuous pixel coordinates (pixel centres at integers);
    /// samples outside the frame read as zero.
    pub(crate) fn sample_bilinear(&self, u: f64, v: f64) -> [f64; 3] {
        let u0 = u.floor();
        let v0 = v.floor();
        let fu = u - u0;
        let fv = v - v0;
        let (c0, r0) = (u0 as i64, v0 as i64);
        let mut out = [0.0f64; 3];
        for (dr, wr) in [(0i64, 1.0 - fv), (1, fv)] {
            for (dc, wc) in [(0i64, 1.0 - fu), (1, fu)] {
                let w = wr * wc;
                if w == 0.0 {
                    continue;
                }
                let (c, r) = (c0 + dc, r0 + dr);
                if c < 0 || r < 0 || c >= self.width as i64 || r >= self.height as i64 {
                    continue;
                }
                let i = (r as usize * self.width + c as usize) * CHANNELS;
                for k in 0..CHANNELS {
                    out[k] += w * self.data[i + k] as f64;
                }
            }
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for dim in [self.width, self.height, CHANNELS] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_from(mut r: impl Read) -> std::io::Result<Result<Raster>> {
        let mut word = [0u8; 4];
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            r.read_exact(&mut word)?;
            *d = u32::from_le_bytes(word) as usize;
        }
        let [width, height, channels] = dims;
        if channels != CHANNELS {
            return Ok(Err(Error::InvalidRaster(format!(
                "expected {CHANNELS} channels, found {channels}"
            ))));
        }
        let n = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(CHANNELS))
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, "raster too large"))?;
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Raster::new(width, height, data))
    }

    pub fn load(path: &Path) -> Result<Raster> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Raster::read_from(BufReader::new(file)).map_err(|e| Error::io(path, e))?
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_rasters() {
        assert!(Raster::black(4, 16).is_err());
        assert!(Raster::new(8, 8, vec![0.0; 10]).is_err());
        assert!(Raster::filled(8, 8, 1.5).is_err());
        assert!(Raster::filled(8, 8, f32::NAN).is_err());
    }

    #[test]
    fn binary_layout() {
        let mut img = Raster::black(8, 9).unwrap();
        img.set_pixel(1, 0, [0.25, 0.5, 1.0]);
        let mut buf = Vec::new();
        img.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 8 * 9 * 3 * 4);
        assert_eq!(&buf[0..4], &8u32.to_le_bytes());
        assert_eq!(&buf[4..8], &9u32.to_le_bytes());
        assert_eq!(&buf[8..12], &3u32.to_le_bytes());
        assert_eq!(&buf[12 + 12..12 + 16], &0.25f32.to_le_bytes());
        let back = Raster::read_from(buf.as_slice()).unwrap().unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn truncated_file_is_io_error() {
        let img = Raster::black(8, 8).unwrap();
        let mut buf = Vec::new();
        img.write_to(&mut buf).unwrap();
        buf.truncate(100);
        assert!(Raster::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn pooling_averages_blocks() {
        let mut img = Raster::black(8, 8).unwrap();
        img.set_pixel(0, 0, [1.0, 1.0, 1.0]);
        let f = img.pooled_features(2).unwrap();
        assert_eq!(f.len(), 4 * 4 * 3);
        assert_eq!(&f[0..4], &[-0.25, -0.25, -0.25, -0.5]);
        assert!(img.pooled_features(3).is_err());
        assert_eq!(img.pooled_features(1).unwrap().len(), 8 * 8 * 3);
    }
}
