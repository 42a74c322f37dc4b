//! Dataset manifests, test-variant evaluation, reports, and CSV exports.
//!
//! A manifest is JSON lines, one record per image:
//!
//! ```text
//! {"image_path":"images/000001.bin","pose":[1,0,0,0,1,0,0,0,1],"identity_seed":7,"split":"test","format_version":1}
//! ```
//!
//! Image paths are relative to the manifest's directory. Poses are row-major
//! rotation matrices; Euler angles only appear in reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{make_test_variant, TestVariant};
use crate::error::{Error, Result};
use crate::nn::{EncoderNet, HeadMlp, Network};
use crate::raster::Raster;
use crate::so3::{
    geodesic_distance, rotation_to_euler, sphere_project, validate_rotation, wrapped_mae, AngleErrors, Axis,
    RotationMatrix,
};
use crate::train::{embed_all, predict_batch, LabeledSample, PositivePool, TrainData};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const REPORT_FORMAT_VERSION: u32 = 1;
/// Manifest poses are accepted with this orthogonality/determinant tolerance.
pub const MANIFEST_POSE_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// On-disk form of one manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image_path: String,
    pub pose: Vec<f64>,
    pub identity_seed: u64,
    pub split: Split,
    pub format_version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Path as written in the manifest.
    pub image_path: String,
    pub pose: RotationMatrix,
    pub identity_seed: u64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Builds a manifest in memory; `root` is where relative image paths resolve.
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest {
            root: root.into(),
            entries,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.image_path)
    }

    /// Entries of one split, keeping the manifest's root.
    pub fn split(&self, split: Split) -> DatasetManifest {
        DatasetManifest {
            root: self.root.clone(),
            entries: self.entries.iter().filter(|e| e.split == split).cloned().collect(),
        }
    }

    pub fn load_samples(&self) -> Result<Vec<LabeledSample>> {
        self.entries
            .iter()
            .map(|e| {
                Ok(LabeledSample {
                    image: Raster::load(&self.resolve(e))?,
                    pose: e.pose,
                    identity_seed: e.identity_seed,
                })
            })
            .collect()
    }

    pub fn load_pairs(&self) -> Result<Vec<(Raster, RotationMatrix)>> {
        Ok(self.load_samples()?.into_iter().map(|s| (s.image, s.pose)).collect())
    }

    /// Training data from the train and validation splits.
    pub fn train_data(&self, positives: PositivePool) -> Result<TrainData> {
        Ok(TrainData {
            train: self.split(Split::Train).load_samples()?,
            validation: self.split(Split::Validation).load_samples()?,
            positives,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for e in &self.entries {
            let record = ManifestRecord {
                image_path: e.image_path.clone(),
                pose: e.pose.to_row_major().to_vec(),
                identity_seed: e.identity_seed,
                split: e.split,
                format_version: MANIFEST_FORMAT_VERSION,
            };
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(w, "{line}").map_err(|err| Error::io(path, err))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates a JSON-lines manifest.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let index = entries.len();
        if record.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("unsupported format_version {}", record.format_version),
            });
        }
        if record.pose.len() != 9 {
            return Err(Error::InvalidRecord {
                index,
                reason: format!("pose has {} values, expected 9", record.pose.len()),
            });
        }
        let m = [
            [record.pose[0], record.pose[1], record.pose[2]],
            [record.pose[3], record.pose[4], record.pose[5]],
            [record.pose[6], record.pose[7], record.pose[8]],
        ];
        if !validate_rotation(&m, MANIFEST_POSE_TOL) {
            return Err(Error::InvalidRecord {
                index,
                reason: "pose is not a rotation matrix".into(),
            });
        }
        let pose = RotationMatrix::with_tolerance(m, MANIFEST_POSE_TOL)?;
        if !root.join(&record.image_path).is_file() {
            return Err(Error::InvalidRecord {
                index,
                reason: format!("image {} does not exist", record.image_path),
            });
        }
        entries.push(ManifestEntry {
            image_path: record.image_path,
            pose,
            identity_seed: record.identity_seed,
            split: record.split,
        });
    }
    if entries.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    check_disjoint_splits(&entries)?;
    Ok(DatasetManifest { root, entries })
}

/// No identity may appear in more than one split.
fn check_disjoint_splits(entries: &[ManifestEntry]) -> Result<()> {
    let mut owner: BTreeMap<u64, Split> = BTreeMap::new();
    for (index, e) in entries.iter().enumerate() {
        match owner.insert(e.identity_seed, e.split) {
            Some(prev) if prev != e.split => {
                return Err(Error::InvalidRecord {
                    index,
                    reason: format!("identity {} appears in both {prev:?} and {:?}", e.identity_seed, e.split),
                })
            }
            _ => {}
        }
    }
    Ok(())
}

/// Writes samples as rasters under `dir/images` and returns their entries.
pub fn save_samples(dir: &Path, samples: &[LabeledSample], split: Split, first_index: usize) -> Result<Vec<ManifestEntry>> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let rel = format!("images/{:06}.bin", first_index + k);
            s.image.save(&dir.join(&rel))?;
            Ok(ManifestEntry {
                image_path: rel,
                pose: s.pose,
                identity_seed: s.identity_seed,
                split,
            })
        })
        .collect()
}

/// Writes a dataset directory: rasters under `images/` plus `manifest.jsonl`.
pub fn write_dataset(dir: &Path, splits: &[(Split, &[LabeledSample])]) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for (split, samples) in splits {
        let start = entries.len();
        entries.extend(save_samples(dir, samples, *split, start)?);
    }
    let manifest = DatasetManifest::new(dir, entries);
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Random stream used to materialize a test variant. Each variant has its
/// own stream, so evaluating one variant never shifts another's draws.
pub fn variant_rng(seed: u64, variant: TestVariant) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(variant as u64 + 1);
    rng
}

/// Materializes a variant of every record into a new dataset directory.
pub fn write_variant(manifest: &DatasetManifest, variant: TestVariant, seed: u64, dir: &Path) -> Result<DatasetManifest> {
    let samples = manifest.load_samples()?;
    let pairs: Vec<_> = samples.iter().map(|s| (s.image.clone(), s.pose)).collect();
    let transformed = make_test_variant(&pairs, variant, &mut variant_rng(seed, variant))?;
    let mut by_split: BTreeMap<Split, Vec<LabeledSample>> = BTreeMap::new();
    for ((image, pose), (src, entry)) in transformed.into_iter().zip(samples.iter().zip(manifest.entries())) {
        by_split.entry(entry.split).or_default().push(LabeledSample {
            image,
            pose,
            identity_seed: src.identity_seed,
        });
    }
    let splits: Vec<_> = by_split.iter().map(|(k, v)| (*k, v.as_slice())).collect();
    write_dataset(dir, &splits)
}

/// Anything that maps images to rotations.
pub trait PosePredictor {
    fn predict(&self, images: &[Raster]) -> Result<Vec<RotationMatrix>>;

    /// Identifies the predictor in report fingerprints.
    fn fingerprint(&self) -> u64 {
        0
    }
}

/// Trained encoder with its pose head.
#[derive(Debug, Clone)]
pub struct PosePipeline {
    pub encoder: EncoderNet,
    pub head: HeadMlp,
}

impl PosePredictor for PosePipeline {
    fn predict(&self, images: &[Raster]) -> Result<Vec<RotationMatrix>> {
        predict_batch(&self.encoder, &self.head, images)
    }

    fn fingerprint(&self) -> u64 {
        self.encoder.checksum().rotate_left(17) ^ self.head.checksum()
    }
}

/// Predicts the same rotation for every image.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor(pub RotationMatrix);

impl PosePredictor for ConstantPredictor {
    fn predict(&self, images: &[Raster]) -> Result<Vec<RotationMatrix>> {
        Ok(vec![self.0; images.len()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: TestVariant,
    pub errors: AngleErrors,
    pub geodesic_deg: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub rows: Vec<VariantRow>,
    /// Hash of the predictor, evaluation seed and data labels.
    pub fingerprint: String,
}

impl EvalReport {
    pub fn row(&self, variant: TestVariant) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,yaw,pitch,roll,mean,geodesic,samples\n");
        for r in &self.rows {
            let e = &r.errors;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.variant, e.yaw_mae, e.pitch_mae, e.roll_mae, e.mean, r.geodesic_deg, r.samples
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>8} {:>8} {:>8} {:>8} {:>9} {:>7}\n",
            "variant", "yaw", "pitch", "roll", "mean", "geodesic", "n"
        );
        for r in &self.rows {
            let e = &r.errors;
            let _ = writeln!(
                out,
                "{:<10} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>9.3} {:>7}",
                r.variant.to_string(),
                e.yaw_mae,
                e.pitch_mae,
                e.roll_mae,
                e.mean,
                r.geodesic_deg,
                r.samples
            );
        }
        let _ = writeln!(out, "fingerprint {}", self.fingerprint);
        out
    }
}

fn fnv(h: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(h, |h, b| (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Scores predictions against labels for one variant.
pub fn score(variant: TestVariant, predictions: &[RotationMatrix], labels: &[RotationMatrix]) -> Result<VariantRow> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let pred_e: Vec<_> = predictions.iter().map(rotation_to_euler).collect();
    let gt_e: Vec<_> = labels.iter().map(rotation_to_euler).collect();
    let errors = wrapped_mae(&pred_e, &gt_e)?;
    let geodesic = predictions
        .iter()
        .zip(labels)
        .map(|(p, g)| geodesic_distance(p, g))
        .sum::<f64>()
        / labels.len() as f64;
    Ok(VariantRow {
        variant,
        errors,
        geodesic_deg: geodesic.to_degrees(),
        samples: labels.len(),
    })
}

/// Evaluates a predictor on already-loaded samples for each requested variant.
/// Each variant draws from its own stream of the seed, so adding a variant
/// never changes another's numbers.
pub fn evaluate_samples(
    predictor: &dyn PosePredictor,
    samples: &[(Raster, RotationMatrix)],
    variants: &[TestVariant],
    seed: u64,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut h = fnv(0xcbf2_9ce4_8422_2325, &predictor.fingerprint().to_le_bytes());
    h = fnv(h, &seed.to_le_bytes());
    for (_, pose) in samples {
        for v in pose.to_row_major() {
            h = fnv(h, &v.to_bits().to_le_bytes());
        }
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let materialized = make_test_variant(samples, variant, &mut variant_rng(seed, variant))?;
        let (images, labels): (Vec<Raster>, Vec<RotationMatrix>) = materialized.into_iter().unzip();
        let predictions = predictor.predict(&images)?;
        rows.push(score(variant, &predictions, &labels)?);
        h = fnv(h, variant.name().as_bytes());
    }
    Ok(EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        rows,
        fingerprint: format!("{h:016x}"),
    })
}

pub fn evaluate(
    predictor: &dyn PosePredictor,
    manifest: &DatasetManifest,
    variants: &[TestVariant],
    seed: u64,
) -> Result<EvalReport> {
    if manifest.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    evaluate_samples(predictor, &manifest.load_pairs()?, variants, seed)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `x,y,z` rows of `R·e_axis` for every label; returns the row count.
pub fn export_sphere_points(poses: &[RotationMatrix], axis: Axis, out: &Path) -> Result<usize> {
    if poses.is_empty() {
        return Err(Error::Empty("pose list"));
    }
    let mut text = String::new();
    for r in poses {
        let [x, y, z] = sphere_project(r, axis);
        let _ = writeln!(text, "{x},{y},{z}");
    }
    write_text(out, &text)?;
    Ok(poses.len())
}

pub fn manifest_poses(manifest: &DatasetManifest) -> Vec<RotationMatrix> {
    manifest.entries().iter().map(|e| e.pose).collect()
}

/// Writes one row of embedding values per image, in order; returns the row count.
pub fn export_embeddings(encoder: &EncoderNet, images: &[Raster], out: &Path) -> Result<usize> {
    if images.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    let emb = embed_all(encoder, images)?;
    let mut text = String::new();
    for row in emb.outer_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(text, "{}", cells.join(","));
    }
    write_text(out, &text)?;
    Ok(emb.nrows())
}

/// Parses a flat `key = value` file; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                message: "empty key".into(),
            });
        }
        if map.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("duplicate key {key}"),
            });
        }
    }
    Ok(map)
}

/// Identity seeds per split, for reporting.
pub fn identities_by_split(manifest: &DatasetManifest) -> BTreeMap<Split, BTreeSet<u64>> {
    let mut out: BTreeMap<Split, BTreeSet<u64>> = BTreeMap::new();
    for e in manifest.entries() {
        out.entry(e.split).or_default().insert(e.identity_seed);
    }
    out
}
