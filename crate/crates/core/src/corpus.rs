//! Synthetic labeled corpora with disjoint identity ranges per role.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{render, sample_identity, PoseRange};
use crate::train::{LabeledSample, PositivePool, TrainData};

/// First identity seed of each role; the ranges never overlap for sane sizes.
pub const ANCHOR_SEED_BASE: u64 = 1;
pub const TEST_SEED_BASE: u64 = 500_000;
pub const POSITIVE_SEED_BASE: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub anchors: usize,
    /// Anchor identities, including those held out for validation.
    pub anchor_identities: usize,
    pub validation_identities: usize,
    pub positive_identities: usize,
    pub test_samples: usize,
    pub test_identities: usize,
    pub size: usize,
    pub poses: PoseRange,
    pub seed: u64,
}

/// Frontal-range anchor and test poses: yaw ±90°, pitch ±40°, roll ±20°.
pub fn frontal_range() -> PoseRange {
    let deg = f64::to_radians;
    PoseRange {
        yaw: (deg(-90.0), deg(90.0)),
        pitch: (deg(-40.0), deg(40.0)),
        roll: (deg(-20.0), deg(20.0)),
    }
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            anchors: 2000,
            anchor_identities: 60,
            validation_identities: 6,
            positive_identities: 50,
            test_samples: 500,
            test_identities: 50,
            size: 32,
            poses: frontal_range(),
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.validation_identities == 0 || self.validation_identities >= self.anchor_identities {
            return Err(Error::Config("need at least one training and one validation identity".into()));
        }
        if self.anchors < self.anchor_identities || self.test_samples < self.test_identities {
            return Err(Error::Config("every identity needs at least one sample".into()));
        }
        if self.positive_identities == 0 || self.test_identities == 0 {
            return Err(Error::Config("positive and test pools need identities".into()));
        }
        if ANCHOR_SEED_BASE + self.anchor_identities as u64 > TEST_SEED_BASE
            || TEST_SEED_BASE + self.test_identities as u64 > POSITIVE_SEED_BASE
        {
            return Err(Error::Config("identity ranges would overlap".into()));
        }
        Ok(())
    }

    pub fn positive_seeds(&self) -> Range<u64> {
        POSITIVE_SEED_BASE..POSITIVE_SEED_BASE + self.positive_identities as u64
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub data: TrainData,
    pub test: Vec<LabeledSample>,
}

/// Renders `count` samples spread round-robin over the identity seeds.
pub fn render_pool(seeds: Range<u64>, count: usize, poses: &PoseRange, size: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    let scenes: Vec<_> = seeds.map(sample_identity).collect();
    if scenes.is_empty() {
        return Err(Error::Empty("identity range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let scene = &scenes[i % scenes.len()];
            let pose = poses.sample(&mut rng);
            Ok(LabeledSample {
                image: render(scene, &pose, size)?,
                pose,
                identity_seed: scene.identity_seed,
            })
        })
        .collect()
}

pub fn build_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let anchors = render_pool(
        ANCHOR_SEED_BASE..ANCHOR_SEED_BASE + cfg.anchor_identities as u64,
        cfg.anchors,
        &cfg.poses,
        cfg.size,
        cfg.seed,
    )?;
    let val_start = ANCHOR_SEED_BASE + (cfg.anchor_identities - cfg.validation_identities) as u64;
    let (validation, train) = anchors.into_iter().partition(|s| s.identity_seed >= val_start);
    let test = render_pool(
        TEST_SEED_BASE..TEST_SEED_BASE + cfg.test_identities as u64,
        cfg.test_samples,
        &cfg.poses,
        cfg.size,
        cfg.seed ^ 0x7e57,
    )?;
    Ok(Corpus {
        data: TrainData {
            train,
            validation,
            positives: PositivePool::new(cfg.positive_seeds())?,
        },
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn roles_use_disjoint_identities() {
        let cfg = CorpusConfig {
            anchors: 40,
            anchor_identities: 8,
            validation_identities: 2,
            positive_identities: 3,
            test_samples: 10,
            test_identities: 2,
            size: 16,
            ..Default::default()
        };
        let c = build_corpus(&cfg).unwrap();
        let ids = |s: &[LabeledSample]| s.iter().map(|x| x.identity_seed).collect::<BTreeSet<_>>();
        let (tr, va, te) = (ids(&c.data.train), ids(&c.data.validation), ids(&c.test));
        assert_eq!((tr.len(), va.len(), te.len()), (6, 2, 2));
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        assert_eq!(c.data.train.len() + c.data.validation.len(), 40);
        assert!(c.data.validate(16).is_ok());
        let again = build_corpus(&cfg).unwrap();
        assert_eq!(again.test, c.test);
    }

    #[test]
    fn rejects_degenerate_configs() {
        let bad = CorpusConfig {
            validation_identities: 60,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(CorpusConfig::default().validate().is_ok());
    }
}
