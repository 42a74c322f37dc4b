//! Small fully connected networks with hand-written reverse passes.
//!
//! The encoder maps a pooled raster to a unit-norm embedding. The head maps
//! an embedding to six numbers that Gram-Schmidt turns into a rotation; it
//! has four 256-wide tanh layers, the last of which also sees the head input.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Raster, CHANNELS};
use crate::so3::{gram_schmidt_6d, gram_schmidt_6d_backward, smooth_geodesic, RotationMatrix, SixDRep};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Affine layer `y = x·Wᵀ + b` with `W` stored as (out, in).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            w: Array2::zeros((output, input)),
            b: Array1::zeros(output),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        Dense {
            w: Array2::from_shape_simple_fn((output, input), || dist.sample(rng)),
            b: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Returns the parameter gradient and the input gradient.
    fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>) -> (Dense, Array2<f64>) {
        let grad = Dense {
            w: dy.t().dot(x),
            b: dy.sum_axis(Axis(0)),
        };
        (grad, dy.dot(&self.w))
    }

    fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().chain(self.b.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w.iter_mut().chain(self.b.iter_mut())
    }
}

/// Shared parameter plumbing for the two network types.
pub trait Network {
    fn layers(&self) -> &[Dense];
    fn layers_mut(&mut self) -> &mut [Dense];

    fn param_count(&self) -> usize {
        self.layers().iter().map(Dense::param_count).sum()
    }

    fn flat_params(&self) -> Vec<f64> {
        self.layers().iter().flat_map(|l| l.values().copied()).collect()
    }

    fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::SizeMismatch {
                expected: self.param_count(),
                got: values.len(),
            });
        }
        let mut src = values.iter();
        for layer in self.layers_mut() {
            for v in layer.values_mut() {
                *v = *src.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// FNV-1a over the parameter bit patterns.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.layers().iter().flat_map(|l| l.values()) {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Side length of the square input raster.
    pub input_size: usize,
    /// Box-pooling factor applied before the first layer.
    pub pool: usize,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_size: 32,
            pool: 2,
            hidden: vec![256, 256],
            embedding_dim: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool == 0 || self.input_size % self.pool != 0 {
            return Err(Error::Config(format!(
                "input size {} is not divisible by pool {}",
                self.input_size, self.pool
            )));
        }
        if self.embedding_dim < 2 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("layer widths must be positive and the embedding at least 2-D".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        let side = self.input_size / self.pool;
        side * side * CHANNELS
    }
}

/// Tanh MLP followed by L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderNet {
    config: EncoderConfig,
    layers: Vec<Dense>,
}

pub struct EncoderCache {
    /// Input of every layer; the last entry is the raw (pre-normalization) output.
    activations: Vec<Array2<f64>>,
    norms: Array1<f64>,
    pub embeddings: Array2<f64>,
}

impl EncoderNet {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![config.input_dim()];
        widths.extend(&config.hidden);
        widths.push(config.embedding_dim);
        let layers = widths.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect();
        Ok(EncoderNet { config, layers })
    }

    pub fn from_layers(config: EncoderConfig, layers: Vec<Dense>) -> Result<Self> {
        config.validate()?;
        let mut expected = vec![config.input_dim()];
        expected.extend(&config.hidden);
        expected.push(config.embedding_dim);
        let ok = layers.len() + 1 == expected.len()
            && layers
                .iter()
                .zip(expected.windows(2))
                .all(|(l, w)| l.input_dim() == w[0] && l.output_dim() == w[1]);
        if !ok {
            return Err(Error::Config("layer shapes do not match the encoder config".into()));
        }
        Ok(EncoderNet { config, layers })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    /// Flattens and pools a batch of rasters into the input matrix.
    pub fn features(&self, batch: &[Raster]) -> Result<Array2<f64>> {
        let side = self.config.input_size;
        let dim = self.config.input_dim();
        let mut x = Array2::zeros((batch.len(), dim));
        for (i, img) in batch.iter().enumerate() {
            if img.width() != side || img.height() != side {
                return Err(Error::SizeMismatch {
                    expected: side,
                    got: if img.width() != side { img.width() } else { img.height() },
                });
            }
            let f = img.pooled_features(self.config.pool)?;
            x.row_mut(i).assign(&Array1::from(f));
        }
        Ok(x)
    }

    pub fn forward_features(&self, x: &Array2<f64>) -> Result<EncoderCache> {
        if x.ncols() != self.config.input_dim() {
            return Err(Error::SizeMismatch {
                expected: self.config.input_dim(),
                got: x.ncols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut activations = vec![x.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(activations.last().expect("non-empty"));
            if i < last {
                z.mapv_inplace(f64::tanh);
            }
            activations.push(z);
        }
        let raw = activations.last().expect("non-empty");
        let norms = raw.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        if norms.iter().any(|&n| !(n > 1e-12) || !n.is_finite()) {
            return Err(Error::NonFinite("encoder output norm"));
        }
        let embeddings = raw / &norms.view().insert_axis(Axis(1));
        Ok(EncoderCache {
            activations,
            norms,
            embeddings,
        })
    }

    pub fn forward(&self, batch: &[Raster]) -> Result<Array2<f64>> {
        Ok(self.forward_features(&self.features(batch)?)?.embeddings)
    }

    pub fn embed(&self, img: &Raster) -> Result<Array1<f64>> {
        Ok(self.forward(std::slice::from_ref(img))?.row(0).to_owned())
    }

    /// Backpropagates a gradient on the normalized embeddings.
    pub fn backward(&self, cache: &EncoderCache, d_emb: &Array2<f64>) -> Vec<Dense> {
        let y = &cache.embeddings;
        let proj = (y * d_emb).sum_axis(Axis(1)).insert_axis(Axis(1));
        let mut dz = (d_emb - &(y * &proj)) / &cache.norms.view().insert_axis(Axis(1));
        let last = self.layers.len() - 1;
        let mut grads = vec![None; self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            if i < last {
                let a = &cache.activations[i + 1];
                dz = dz * &a.mapv(|t| 1.0 - t * t);
            }
            let (g, dx) = self.layers[i].backward(&cache.activations[i], &dz);
            grads[i] = Some(g);
            dz = dx;
        }
        grads.into_iter().map(|g| g.expect("filled")).collect()
    }
}

impl Network for EncoderNet {
    fn layers(&self) -> &[Dense] {
        &self.layers
    }

    fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub input_dim: usize,
    pub width: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            input_dim: 64,
            width: 256,
        }
    }
}

/// Number of hidden layers in the head.
pub const HEAD_DEPTH: usize = 4;
const SIX_D_IDENTITY: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// Four tanh layers (the fourth fed by the third and by the head input),
/// then a linear map to the 6D rotation representation.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMlp {
    config: HeadConfig,
    layers: Vec<Dense>,
}

pub struct HeadCache {
    input: Array2<f64>,
    hidden: Vec<Array2<f64>>,
    skip_input: Array2<f64>,
    pub output: Array2<f64>,
}

impl HeadMlp {
    /// Output bias starts at the 6D encoding of the identity.
    pub fn new<R: Rng + ?Sized>(config: HeadConfig, rng: &mut R) -> Result<Self> {
        if config.input_dim == 0 || config.width == 0 {
            return Err(Error::Config("head widths must be positive".into()));
        }
        let (d, w) = (config.input_dim, config.width);
        let mut layers = vec![
            Dense::glorot(d, w, rng),
            Dense::glorot(w, w, rng),
            Dense::glorot(w, w, rng),
            Dense::glorot(w + d, w, rng),
            Dense::glorot(w, 6, rng),
        ];
        layers[HEAD_DEPTH].b = Array1::from(SIX_D_IDENTITY.to_vec());
        Ok(HeadMlp { config, layers })
    }

    pub fn from_layers(config: HeadConfig, layers: Vec<Dense>) -> Result<Self> {
        let (d, w) = (config.input_dim, config.width);
        let shapes = [(d, w), (w, w), (w, w), (w + d, w), (w, 6)];
        let ok = layers.len() == shapes.len()
            && layers
                .iter()
                .zip(shapes)
                .all(|(l, (i, o))| l.input_dim() == i && l.output_dim() == o);
        if !ok {
            return Err(Error::Config("layer shapes do not match the head config".into()));
        }
        Ok(HeadMlp { config, layers })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> Result<HeadCache> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::SizeMismatch {
                expected: self.config.input_dim,
                got: x.ncols(),
            });
        }
        let mut hidden = Vec::with_capacity(HEAD_DEPTH);
        let mut h = x.clone();
        for layer in &self.layers[..3] {
            h = layer.forward(&h).mapv(f64::tanh);
            hidden.push(h.clone());
        }
        let skip_input = concatenate(Axis(1), &[h.view(), x.view()]).expect("row counts agree");
        let h4 = self.layers[3].forward(&skip_input).mapv(f64::tanh);
        let output = self.layers[4].forward(&h4);
        hidden.push(h4);
        Ok(HeadCache {
            input: x.clone(),
            hidden,
            skip_input,
            output,
        })
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.output)
    }

    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &HeadCache, d_out: &Array2<f64>) -> (Vec<Dense>, Array2<f64>) {
        let tanh_grad = |a: &Array2<f64>| a.mapv(|t| 1.0 - t * t);
        let (g4, dh4) = self.layers[4].backward(&cache.hidden[3], d_out);
        let dz4 = dh4 * tanh_grad(&cache.hidden[3]);
        let (g3, dskip) = self.layers[3].backward(&cache.skip_input, &dz4);
        let w = self.config.width;
        let mut dh = dskip.slice(s![.., ..w]).to_owned();
        let mut dx = dskip.slice(s![.., w..]).to_owned();
        let mut grads = vec![g3, g4];
        for i in (0..3).rev() {
            let dz = dh * tanh_grad(&cache.hidden[i]);
            let input = if i == 0 { &cache.input } else { &cache.hidden[i - 1] };
            let (g, d_in) = self.layers[i].backward(input, &dz);
            grads.insert(0, g);
            dh = d_in;
        }
        dx += &dh;
        (grads, dx)
    }
}

impl Network for HeadMlp {
    fn layers(&self) -> &[Dense] {
        &self.layers
    }

    fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }
}

/// Mean smooth geodesic loss over a batch of 6D outputs.
///
/// Rows whose 6D vector is degenerate are skipped (gradient zero) and
/// counted in the returned `skipped` field.
#[derive(Debug, Clone)]
pub struct GeodesicLoss {
    pub loss: f64,
    pub grad: Array2<f64>,
    pub skipped: usize,
}

pub fn geodesic_loss(out6: &Array2<f64>, labels: &[RotationMatrix]) -> Result<GeodesicLoss> {
    if out6.nrows() != labels.len() || out6.ncols() != 6 {
        return Err(Error::LengthMismatch(format!(
            "{}x{} head outputs for {} labels",
            out6.nrows(),
            out6.ncols(),
            labels.len()
        )));
    }
    let mut grad = Array2::zeros(out6.raw_dim());
    let mut total = 0.0;
    let mut skipped = 0;
    let n = labels.len() as f64;
    for (i, label) in labels.iter().enumerate() {
        let mut v = [0.0; 6];
        for (k, x) in out6.row(i).iter().enumerate() {
            v[k] = *x;
        }
        let rep = SixDRep(v);
        let Ok(pred) = gram_schmidt_6d(&rep) else {
            log::warn!("skipping degenerate 6D output in row {i}");
            skipped += 1;
            continue;
        };
        let (d, dr) = smooth_geodesic(pred.matrix(), label);
        total += d;
        let dv = gram_schmidt_6d_backward(&rep, &dr)?;
        for k in 0..6 {
            grad[[i, k]] = dv[k] / n;
        }
    }
    Ok(GeodesicLoss {
        loss: total / n,
        grad,
        skipped,
    })
}

/// Converts a 6D output row to a rotation.
pub fn six_d_to_rotation(row: ndarray::ArrayView1<f64>) -> Result<RotationMatrix> {
    let mut v = [0.0; 6];
    for (k, x) in row.iter().enumerate().take(6) {
        v[k] = *x;
    }
    gram_schmidt_6d(&SixDRep(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Dense>,
    v: Vec<Dense>,
}

impl Adam {
    pub fn new(net: &impl Network, config: AdamConfig) -> Self {
        let zeros: Vec<Dense> = net
            .layers()
            .iter()
            .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
            .collect();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, net: &mut impl Network, grads: &[Dense]) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((layer, g), m), v) in net.layers_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, g), m), v) in layer
                .values_mut()
                .zip(g.values())
                .zip(m.values_mut())
                .zip(v.values_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

/// JSON header stored in front of the parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub kind: String,
    /// (output, input) shape of every layer, in order.
    pub shapes: Vec<(usize, usize)>,
    pub seed: u64,
    pub config: serde_json::Value,
}

fn write_checkpoint(path: &Path, header: &CheckpointHeader, params: &[f64]) -> Result<()> {
    let json = serde_json::to_vec(header).map_err(|e| Error::Config(e.to_string()))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for p in params {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut word = [0u8; 8];
    r.read_exact(&mut word).map_err(|e| Error::io(path, e))?;
    let len = u64::from_le_bytes(word) as usize;
    if len > 1 << 24 {
        return Err(Error::Config(format!("checkpoint header of {len} bytes is implausible")));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| Error::Config(format!("checkpoint header: {e}")))?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint format version {}",
            header.format_version
        )));
    }
    let count: usize = header.shapes.iter().map(|(o, i)| o * i + o).sum();
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, params))
}

fn layers_from_flat(shapes: &[(usize, usize)], params: &[f64]) -> Vec<Dense> {
    let mut offset = 0;
    shapes
        .iter()
        .map(|&(o, i)| {
            let mut layer = Dense::zeros(i, o);
            for v in layer.values_mut() {
                *v = params[offset];
                offset += 1;
            }
            layer
        })
        .collect()
}

fn header_for(net: &impl Network, kind: &str, seed: u64, config: serde_json::Value) -> CheckpointHeader {
    CheckpointHeader {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: kind.to_string(),
        shapes: net.layers().iter().map(|l| (l.output_dim(), l.input_dim())).collect(),
        seed,
        config,
    }
}

fn expect_kind(header: &CheckpointHeader, kind: &str) -> Result<()> {
    if header.kind != kind {
        return Err(Error::Config(format!("expected a {kind} checkpoint, found {}", header.kind)));
    }
    Ok(())
}

impl EncoderNet {
    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        let config = serde_json::to_value(&self.config).expect("config serializes");
        write_checkpoint(path, &header_for(self, "encoder", seed, config), &self.flat_params())
    }

    pub fn load(path: &Path) -> Result<(EncoderNet, CheckpointHeader)> {
        let (header, params) = read_checkpoint(path)?;
        expect_kind(&header, "encoder")?;
        let config: EncoderConfig =
            serde_json::from_value(header.config.clone()).map_err(|e| Error::Config(format!("encoder config: {e}")))?;
        let net = EncoderNet::from_layers(config, layers_from_flat(&header.shapes, &params))?;
        Ok((net, header))
    }
}

impl HeadMlp {
    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        let config = serde_json::to_value(&self.config).expect("config serializes");
        write_checkpoint(path, &header_for(self, "head", seed, config), &self.flat_params())
    }

    pub fn load(path: &Path) -> Result<(HeadMlp, CheckpointHeader)> {
        let (header, params) = read_checkpoint(path)?;
        expect_kind(&header, "head")?;
        let config: HeadConfig =
            serde_json::from_value(header.config.clone()).map_err(|e| Error::Config(format!("head config: {e}")))?;
        let net = HeadMlp::from_layers(config, layers_from_flat(&header.shapes, &params))?;
        Ok((net, header))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{euler_to_rotation, EulerAngles};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_encoder(rng: &mut ChaCha8Rng) -> EncoderNet {
        let cfg = EncoderConfig {
            input_size: 8,
            pool: 2,
            hidden: vec![7, 5],
            embedding_dim: 4,
        };
        EncoderNet::new(cfg, rng).unwrap()
    }

    fn small_head(rng: &mut ChaCha8Rng) -> HeadMlp {
        HeadMlp::new(HeadConfig { input_dim: 4, width: 6 }, rng).unwrap()
    }

    fn random_input(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, d), || rng.gen::<f64>() - 0.5)
    }

    /// Central differences over every parameter of `net` against `analytic`.
    fn check_gradients<N: Network + Clone>(net: &N, analytic: &[Dense], loss: impl Fn(&N) -> f64) -> f64 {
        let flat = net.flat_params();
        let grad: Vec<f64> = analytic.iter().flat_map(|l| l.values().copied()).collect();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for k in 0..flat.len() {
            let mut probe = net.clone();
            let mut p = flat.clone();
            p[k] += h;
            probe.set_flat_params(&p).unwrap();
            let up = loss(&probe);
            p[k] -= 2.0 * h;
            probe.set_flat_params(&p).unwrap();
            let down = loss(&probe);
            let fd = (up - down) / (2.0 * h);
            let err = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-7);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn encoder_rows_are_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = EncoderNet::new(EncoderConfig::default(), &mut rng).unwrap();
        let x = random_input(&mut rng, 5, enc.config().input_dim());
        let e = enc.forward_features(&x).unwrap().embeddings;
        for row in e.outer_iter() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
        }
        assert_eq!(e, enc.forward_features(&x).unwrap().embeddings);
    }

    #[test]
    fn constant_network_gives_constant_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut enc = small_encoder(&mut rng);
        let last = enc.layers_mut().last_mut().unwrap();
        last.w.fill(0.0);
        last.b.fill(0.0);
        last.b[2] = 1e-3;
        let x = random_input(&mut rng, 3, enc.config().input_dim());
        let e = enc.forward_features(&x).unwrap().embeddings;
        for row in e.outer_iter() {
            assert_eq!(row.to_vec(), vec![0.0, 0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn encoder_rejects_wrong_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = small_encoder(&mut rng);
        let img = Raster::black(16, 16).unwrap();
        assert!(matches!(enc.forward(&[img]), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn encoder_probe_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = small_encoder(&mut rng);
        let x = random_input(&mut rng, 3, enc.config().input_dim());
        let probe = random_input(&mut rng, 3, 4);
        let loss = |n: &EncoderNet| (&n.forward_features(&x).unwrap().embeddings * &probe).sum();
        let cache = enc.forward_features(&x).unwrap();
        let grads = enc.backward(&cache, &probe);
        let worst = check_gradients(&enc, &grads, loss);
        assert!(worst < 1e-4, "worst {worst}");
    }

    fn labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<RotationMatrix> {
        (0..n)
            .map(|_| {
                let e = EulerAngles::new(rng.gen_range(-2.5..2.5), rng.gen_range(-1.2..1.2), rng.gen_range(-2.5..2.5));
                euler_to_rotation(&e).unwrap()
            })
            .collect()
    }

    #[test]
    fn head_geodesic_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head = small_head(&mut rng);
        let x = random_input(&mut rng, 4, 4);
        let y = labels(&mut rng, 4);
        let loss = |h: &HeadMlp| geodesic_loss(&h.forward(&x).unwrap(), &y).unwrap().loss;
        let cache = head.forward_cached(&x).unwrap();
        let gl = geodesic_loss(&cache.output, &y).unwrap();
        let (grads, _) = head.backward(&cache, &gl.grad);
        let worst = check_gradients(&head, &grads, loss);
        assert!(worst < 1e-4, "worst {worst}");
    }

    #[test]
    fn head_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let head = small_head(&mut rng);
        let x = random_input(&mut rng, 3, 4);
        let y = labels(&mut rng, 3);
        let cache = head.forward_cached(&x).unwrap();
        let gl = geodesic_loss(&cache.output, &y).unwrap();
        let (_, dx) = head.backward(&cache, &gl.grad);
        let h = 1e-5;
        for idx in 0..x.len() {
            let (r, c) = (idx / 4, idx % 4);
            let mut up = x.clone();
            up[[r, c]] += h;
            let mut down = x.clone();
            down[[r, c]] -= h;
            let f = |x: &Array2<f64>| geodesic_loss(&head.forward(x).unwrap(), &y).unwrap().loss;
            let fd = (f(&up) - f(&down)) / (2.0 * h);
            let err = (fd - dx[[r, c]]).abs() / fd.abs().max(dx[[r, c]].abs()).max(1e-7);
            assert!(err < 1e-4, "input {idx}: fd {fd} analytic {}", dx[[r, c]]);
        }
    }

    #[test]
    fn fresh_head_predicts_identity_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut head = small_head(&mut rng);
        head.layers_mut()[HEAD_DEPTH].w.fill(0.0);
        let out = head.forward(&random_input(&mut rng, 2, 4)).unwrap();
        let r = six_d_to_rotation(out.row(0)).unwrap();
        assert_eq!(r, RotationMatrix::IDENTITY);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut enc = small_encoder(&mut rng);
        let before = enc.flat_params();
        let mut grads: Vec<Dense> = enc.layers().iter().map(|l| Dense::zeros(l.input_dim(), l.output_dim())).collect();
        grads[0].w[[0, 0]] = 3.0;
        grads[1].b[1] = -0.2;
        let mut adam = Adam::new(&enc, AdamConfig::with_lr(0.01));
        adam.update(&mut enc, &grads);
        assert_eq!(adam.steps(), 1);
        let after = enc.flat_params();
        let moved: Vec<f64> = before.iter().zip(&after).map(|(a, b)| b - a).filter(|d| *d != 0.0).collect();
        assert_eq!(moved.len(), 2);
        assert!((moved[0] + 0.01).abs() < 1e-8 && (moved[1] - 0.01).abs() < 1e-8);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let enc = small_encoder(&mut rng);
        let head = small_head(&mut rng);
        let (pe, ph) = (dir.path().join("enc.ckpt"), dir.path().join("head.ckpt"));
        enc.save(&pe, 9).unwrap();
        head.save(&ph, 9).unwrap();
        let (enc2, header) = EncoderNet::load(&pe).unwrap();
        assert_eq!(enc2, enc);
        assert_eq!(header.seed, 9);
        assert_eq!(header.shapes[0], (7, 48));
        assert_eq!(HeadMlp::load(&ph).unwrap().0, head);
        assert!(HeadMlp::load(&pe).is_err());
        assert!(EncoderNet::load(&dir.path().join("missing")).unwrap_err().is_io());
        let bytes = std::fs::read(&pe).unwrap();
        std::fs::write(&pe, &bytes[..bytes.len() - 4]).unwrap();
        assert!(EncoderNet::load(&pe).unwrap_err().is_io());
    }

    #[test]
    fn checksum_tracks_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut enc = small_encoder(&mut rng);
        let c = enc.checksum();
        assert_eq!(c, enc.clone().checksum());
        enc.layers_mut()[0].b[0] += 1e-12;
        assert_ne!(c, enc.checksum());
    }
}
