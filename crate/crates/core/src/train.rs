//! Training loops: contrastive representation, frozen-encoder head, and the
//! end-to-end supervised baseline.
//!
//! Every loop draws batches the same way. Each anchor is paired with a
//! freshly generated positive of another identity sharing its exact label;
//! the pair receives one shared geometric augmentation (so both labels move
//! together) and independent pixel augmentation. All randomness comes from
//! ChaCha streams derived from the configured seed, so a run is a pure
//! function of (seed, config, data).

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_paired, sample_augmentation, AugmentPolicy};
use crate::error::{Error, Result};
use crate::mining::{circle_loss, find_positive_pairs, mine_negative_triplets, EmbeddingBatch, LossConfig};
use crate::nn::{
    geodesic_loss, six_d_to_rotation, Adam, AdamConfig, EncoderConfig, EncoderNet, HeadConfig, HeadMlp,
};
use crate::raster::Raster;
use crate::so3::{geodesic_distance, RotationMatrix};
use crate::synth::{generate_positive, pixel_augment, sample_identity, HeadScene, PixelAugment, Source};

const STREAM_INIT: u64 = 1;
const STREAM_BATCHES: u64 = 2;
const STREAM_VALIDATION: u64 = 3;
const STREAM_HEAD_INIT: u64 = 4;
const STREAM_HEAD_BATCHES: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: Raster,
    pub pose: RotationMatrix,
    pub identity_seed: u64,
}

/// Identities that positives are rendered from.
#[derive(Debug, Clone)]
pub struct PositivePool {
    scenes: Vec<HeadScene>,
}

impl PositivePool {
    pub fn new(seeds: impl IntoIterator<Item = u64>) -> Result<Self> {
        let scenes: Vec<HeadScene> = seeds.into_iter().map(sample_identity).collect();
        if scenes.is_empty() {
            return Err(Error::Empty("positive identity pool"));
        }
        Ok(PositivePool { scenes })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> &HeadScene {
        &self.scenes[rng.gen_range(0..self.scenes.len())]
    }
}

/// Labeled anchors split into train and validation, plus the positive generator.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<LabeledSample>,
    pub validation: Vec<LabeledSample>,
    pub positives: PositivePool,
}

impl TrainData {
    pub fn validate(&self, side: usize) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Empty("training split"));
        }
        if self.validation.is_empty() {
            return Err(Error::Empty("validation split"));
        }
        for (i, s) in self.train.iter().chain(&self.validation).enumerate() {
            if s.image.width() != side || s.image.height() != side {
                return Err(Error::InvalidRecord {
                    index: i,
                    reason: format!("image is {}x{}, expected {side}x{side}", s.image.width(), s.image.height()),
                });
            }
        }
        let train_ids: std::collections::BTreeSet<u64> = self.train.iter().map(|s| s.identity_seed).collect();
        if self.validation.iter().any(|s| train_ids.contains(&s.identity_seed)) {
            return Err(Error::Config("validation identities overlap the training split".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Anchors per batch; each brings one generated positive.
    pub batch_size: usize,
    /// Representation epochs (also the supervised baseline's share).
    pub epochs: usize,
    pub head_epochs: usize,
    pub learning_rate: f64,
    pub head_learning_rate: f64,
    pub seed: u64,
    /// Fraction of anchor identities held out for early stopping.
    pub validation_fraction: f64,
    /// Stop head training after this many epochs without improvement.
    pub patience: Option<usize>,
    pub geometric: AugmentPolicy,
    pub pixel: PixelAugment,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 30,
            head_epochs: 20,
            learning_rate: 1e-3,
            head_learning_rate: 1e-3,
            seed: 0,
            validation_fraction: 0.1,
            patience: None,
            geometric: AugmentPolicy::default(),
            pixel: PixelAugment::default(),
            encoder: EncoderConfig::default(),
            head: HeadConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 4 {
            return Err(Error::Config(format!("batch size {} is below 4", self.batch_size)));
        }
        if !(self.learning_rate > 0.0) || !(self.head_learning_rate > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation fraction must lie in (0, 1)".into()));
        }
        if self.head.input_dim != self.encoder.embedding_dim {
            return Err(Error::Config(format!(
                "head input {} does not match embedding dimension {}",
                self.head.input_dim, self.encoder.embedding_dim
            )));
        }
        self.geometric.validate()?;
        self.encoder.validate()
    }

    pub fn iterations_per_epoch(&self, train_len: usize) -> usize {
        train_len.div_ceil(self.batch_size)
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// What a training loop did.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Optimizer steps taken.
    pub updates: u64,
    /// Iterations where mining produced nothing to learn from.
    pub skipped: u64,
    pub epoch_losses: Vec<f64>,
    /// Mean validation geodesic error in degrees after each epoch.
    pub validation_errors: Vec<f64>,
    /// Epoch (1-based) of the returned checkpoint; 0 for the initial one.
    pub best_epoch: usize,
}

/// A paired training batch: rows `2k` and `2k + 1` are an anchor and its positive.
pub struct Batch {
    pub images: Vec<Raster>,
    pub poses: Vec<RotationMatrix>,
    pub sources: Vec<Source>,
}

pub fn make_batch<R: Rng + ?Sized>(
    anchors: &[&LabeledSample],
    positives: &PositivePool,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Batch> {
    let size = cfg.encoder.input_size;
    let mut batch = Batch {
        images: Vec::with_capacity(2 * anchors.len()),
        poses: Vec::with_capacity(2 * anchors.len()),
        sources: Vec::with_capacity(2 * anchors.len()),
    };
    for anchor in anchors {
        let positive = generate_positive(&anchor.pose, positives.pick(rng), size)?;
        let (mut a_img, mut a_pose) = (anchor.image.clone(), anchor.pose);
        let (mut p_img, mut p_pose) = (positive.image, positive.pose);
        if let Some(aug) = sample_augmentation(&cfg.geometric, rng) {
            (a_img, a_pose) = apply_paired(&a_img, &a_pose, &aug);
            (p_img, p_pose) = apply_paired(&p_img, &p_pose, &aug);
        }
        batch.images.push(pixel_augment(&a_img, &cfg.pixel, rng));
        batch.images.push(pixel_augment(&p_img, &cfg.pixel, rng));
        batch.poses.extend([a_pose, p_pose]);
        batch.sources.extend([Source::AnchorPool, Source::PositivePool]);
    }
    Ok(batch)
}

fn shuffled_batches<'a, R: Rng + ?Sized>(
    train: &'a [LabeledSample],
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<&'a LabeledSample>> {
    let mut order: Vec<&LabeledSample> = train.iter().collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Encoder before any training, as drawn from the configured seed.
pub fn initial_encoder(cfg: &TrainConfig) -> Result<EncoderNet> {
    EncoderNet::new(cfg.encoder.clone(), &mut cfg.rng(STREAM_INIT))
}

pub fn initial_head(cfg: &TrainConfig) -> Result<HeadMlp> {
    HeadMlp::new(cfg.head.clone(), &mut cfg.rng(STREAM_HEAD_INIT))
}

/// Circle Loss of an encoder on a fixed batch, with the standard mining.
pub fn contrastive_loss(encoder: &EncoderNet, batch: &Batch, loss_cfg: &LossConfig) -> Result<Option<f64>> {
    let emb = encoder.forward(&batch.images)?;
    let emb = EmbeddingBatch::new(emb, batch.poses.clone(), batch.sources.clone())?;
    let pairs = find_positive_pairs(emb.poses(), emb.sources(), loss_cfg)?;
    let triplets = mine_negative_triplets(&emb, &pairs, loss_cfg)?;
    if triplets.is_empty() {
        return Ok(None);
    }
    Ok(Some(circle_loss(&emb, &triplets, loss_cfg)?.0))
}

/// Contrastive training of the encoder.
pub fn train_representation(cfg: &TrainConfig, loss_cfg: &LossConfig, data: &TrainData) -> Result<(EncoderNet, TrainLog)> {
    cfg.validate()?;
    loss_cfg.validate()?;
    data.validate(cfg.encoder.input_size)?;
    let mut encoder = initial_encoder(cfg)?;
    let mut adam = Adam::new(&encoder, AdamConfig::with_lr(cfg.learning_rate));
    let mut rng = cfg.rng(STREAM_BATCHES);
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let mut counted = 0usize;
        for anchors in shuffled_batches(&data.train, cfg.batch_size, &mut rng) {
            let batch = make_batch(&anchors, &data.positives, cfg, &mut rng)?;
            let cache = encoder.forward_features(&encoder.features(&batch.images)?)?;
            let emb = EmbeddingBatch::new(cache.embeddings.clone(), batch.poses, batch.sources)?;
            let pairs = find_positive_pairs(emb.poses(), emb.sources(), loss_cfg)?;
            let triplets = mine_negative_triplets(&emb, &pairs, loss_cfg)?;
            if triplets.is_empty() {
                log.skipped += 1;
                continue;
            }
            let (loss, grad) = circle_loss(&emb, &triplets, loss_cfg)?;
            let grads = encoder.backward(&cache, &grad);
            adam.update(&mut encoder, &grads);
            total += loss;
            counted += 1;
        }
        let mean = if counted > 0 { total / counted as f64 } else { 0.0 };
        log::info!("representation epoch {}: loss {mean:.5}", epoch + 1);
        log.epoch_losses.push(mean);
    }
    log.updates = adam.steps();
    log.best_epoch = cfg.epochs;
    Ok((encoder, log))
}

/// Geometrically augmented validation set, fixed by the seed.
fn validation_set(cfg: &TrainConfig, data: &TrainData) -> (Vec<Raster>, Vec<RotationMatrix>) {
    let mut rng = cfg.rng(STREAM_VALIDATION);
    data.validation
        .iter()
        .map(|s| match sample_augmentation(&cfg.geometric, &mut rng) {
            Some(aug) => apply_paired(&s.image, &s.pose, &aug),
            None => (s.image.clone(), s.pose),
        })
        .unzip()
}

/// Mean geodesic error in degrees of `encoder` + `head` on labeled images.
pub fn mean_geodesic_error_deg(
    encoder: &EncoderNet,
    head: &HeadMlp,
    images: &[Raster],
    poses: &[RotationMatrix],
) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let preds = predict_batch(encoder, head, images)?;
    let total: f64 = preds.iter().zip(poses).map(|(p, g)| geodesic_distance(p, g)).sum();
    Ok((total / images.len() as f64).to_degrees())
}

const PREDICT_CHUNK: usize = 256;

pub fn predict_batch(encoder: &EncoderNet, head: &HeadMlp, images: &[Raster]) -> Result<Vec<RotationMatrix>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(PREDICT_CHUNK) {
        let six = head.forward(&encoder.forward(chunk)?)?;
        for row in six.outer_iter() {
            out.push(six_d_to_rotation(row)?);
        }
    }
    Ok(out)
}

pub fn predict_pose(encoder: &EncoderNet, head: &HeadMlp, img: &Raster) -> Result<RotationMatrix> {
    Ok(predict_batch(encoder, head, std::slice::from_ref(img))?[0])
}

struct BestCheckpoint<T> {
    value: T,
    error: f64,
    epoch: usize,
}

/// Trains a head on the frozen encoder's embeddings.
pub fn train_head(encoder: &EncoderNet, cfg: &TrainConfig, data: &TrainData) -> Result<(HeadMlp, TrainLog)> {
    cfg.validate()?;
    data.validate(cfg.encoder.input_size)?;
    if encoder.config() != &cfg.encoder {
        return Err(Error::Config("encoder does not match the configured architecture".into()));
    }
    let mut head = initial_head(cfg)?;
    let mut adam = Adam::new(&head, AdamConfig::with_lr(cfg.head_learning_rate));
    let mut rng = cfg.rng(STREAM_HEAD_BATCHES);
    let (val_images, val_poses) = validation_set(cfg, data);
    let val_emb = encoder.forward(&val_images)?;
    let val_error = |head: &HeadMlp| -> Result<f64> {
        let six = head.forward(&val_emb)?;
        let mut total = 0.0;
        for (row, gt) in six.outer_iter().zip(&val_poses) {
            total += geodesic_distance(&six_d_to_rotation(row)?, gt);
        }
        Ok((total / val_poses.len() as f64).to_degrees())
    };
    let mut best = BestCheckpoint {
        error: val_error(&head)?,
        value: head.clone(),
        epoch: 0,
    };
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.head_epochs {
        let mut total = 0.0;
        let mut count = 0usize;
        for anchors in shuffled_batches(&data.train, cfg.batch_size, &mut rng) {
            let batch = make_batch(&anchors, &data.positives, cfg, &mut rng)?;
            let emb = encoder.forward(&batch.images)?;
            let cache = head.forward_cached(&emb)?;
            let gl = geodesic_loss(&cache.output, &batch.poses)?;
            let (grads, _) = head.backward(&cache, &gl.grad);
            adam.update(&mut head, &grads);
            total += gl.loss;
            count += 1;
        }
        let err = val_error(&head)?;
        log::info!("head epoch {epoch}: loss {:.5}, validation {err:.3} deg", total / count as f64);
        log.epoch_losses.push(total / count as f64);
        log.validation_errors.push(err);
        if err < best.error {
            best = BestCheckpoint {
                value: head.clone(),
                error: err,
                epoch,
            };
        } else if cfg.patience.is_some_and(|p| epoch - best.epoch >= p) {
            break;
        }
    }
    log.updates = adam.steps();
    log.best_epoch = best.epoch;
    Ok((best.value, log))
}

/// End-to-end training of encoder and head on the geodesic loss for
/// `budget` optimizer steps (by default the contrastive pipeline's
/// `epochs + head_epochs` worth of iterations).
pub fn train_supervised(cfg: &TrainConfig, data: &TrainData, budget: Option<u64>) -> Result<(EncoderNet, HeadMlp, TrainLog)> {
    cfg.validate()?;
    data.validate(cfg.encoder.input_size)?;
    let per_epoch = cfg.iterations_per_epoch(data.train.len()) as u64;
    let budget = budget.unwrap_or(per_epoch * (cfg.epochs + cfg.head_epochs) as u64);
    let mut encoder = initial_encoder(cfg)?;
    let mut head = initial_head(cfg)?;
    let mut enc_adam = Adam::new(&encoder, AdamConfig::with_lr(cfg.learning_rate));
    let mut head_adam = Adam::new(&head, AdamConfig::with_lr(cfg.head_learning_rate));
    let mut rng = cfg.rng(STREAM_BATCHES);
    let (val_images, val_poses) = validation_set(cfg, data);
    let mut best = BestCheckpoint {
        error: mean_geodesic_error_deg(&encoder, &head, &val_images, &val_poses)?,
        value: (encoder.clone(), head.clone()),
        epoch: 0,
    };
    let mut log = TrainLog::default();
    let mut epoch = 0;
    while log.updates < budget {
        epoch += 1;
        let mut total = 0.0;
        let mut count = 0usize;
        for anchors in shuffled_batches(&data.train, cfg.batch_size, &mut rng) {
            if log.updates >= budget {
                break;
            }
            let batch = make_batch(&anchors, &data.positives, cfg, &mut rng)?;
            let enc_cache = encoder.forward_features(&encoder.features(&batch.images)?)?;
            let head_cache = head.forward_cached(&enc_cache.embeddings)?;
            let gl = geodesic_loss(&head_cache.output, &batch.poses)?;
            let (head_grads, d_emb) = head.backward(&head_cache, &gl.grad);
            let enc_grads = encoder.backward(&enc_cache, &d_emb);
            head_adam.update(&mut head, &head_grads);
            enc_adam.update(&mut encoder, &enc_grads);
            log.updates += 1;
            total += gl.loss;
            count += 1;
        }
        let err = mean_geodesic_error_deg(&encoder, &head, &val_images, &val_poses)?;
        log::info!("supervised epoch {epoch}: loss {:.5}, validation {err:.3} deg", total / count as f64);
        log.epoch_losses.push(total / count as f64);
        log.validation_errors.push(err);
        if err < best.error {
            best = BestCheckpoint {
                value: (encoder.clone(), head.clone()),
                error: err,
                epoch,
            };
        }
    }
    log.best_epoch = best.epoch;
    let (encoder, head) = best.value;
    Ok((encoder, head, log))
}

/// Embeddings of a labeled set, one row per sample.
pub fn embed_all(encoder: &EncoderNet, images: &[Raster]) -> Result<Array2<f64>> {
    let mut rows = Vec::with_capacity(images.len());
    for chunk in images.chunks(PREDICT_CHUNK) {
        rows.push(encoder.forward(chunk)?);
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).map_err(|_| Error::Empty("embedding set"))
}
