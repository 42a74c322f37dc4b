//! Desk-scale comparison and ablation driver.
//!
//! For each seed a fresh corpus is rendered. The contrastive pipeline
//! (representation, then frozen-encoder head) is trained once per
//! augmentation arm. The supervised baseline is trained once, with the same
//! augmentation as the contrastive arm and exactly as many optimizer steps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentPolicy, TestVariant};
use crate::corpus::{build_corpus, CorpusConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_samples, parse_key_values, EvalReport, PosePipeline};
use crate::mining::LossConfig;
use crate::train::{train_head, train_representation, train_supervised, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationArm {
    RotateFlip,
    RotateOnly,
    FlipOnly,
    NoAugmentation,
}

impl AblationArm {
    pub const ALL: [AblationArm; 4] = [
        AblationArm::RotateFlip,
        AblationArm::RotateOnly,
        AblationArm::FlipOnly,
        AblationArm::NoAugmentation,
    ];

    /// Training policy of this arm, derived from the configured full policy.
    pub fn policy(self, full: &AugmentPolicy) -> AugmentPolicy {
        match self {
            AblationArm::RotateFlip => *full,
            AblationArm::RotateOnly => AugmentPolicy { p_flip: 0.0, ..*full },
            AblationArm::FlipOnly => AugmentPolicy { p_rotate: 0.0, ..*full },
            AblationArm::NoAugmentation => AugmentPolicy {
                p_rotate: 0.0,
                p_flip: 0.0,
                ..*full
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationArm::RotateFlip => "rotate+flip",
            AblationArm::RotateOnly => "rotate",
            AblationArm::FlipOnly => "flip",
            AblationArm::NoAugmentation => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub seeds: Vec<u64>,
    /// Contrastive arms to train; `RotateFlip` is always trained.
    pub arms: Vec<AblationArm>,
    /// Also train the equal-budget supervised baseline.
    pub supervised: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: CorpusConfig::default(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            seeds: vec![0, 1, 2],
            arms: AblationArm::ALL.to_vec(),
            supervised: true,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl ExperimentConfig {
    /// Applies flat `key = value` settings on top of the defaults.
    pub fn from_key_values(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (key, value) in map {
            let v = value.as_str();
            let (c, t, l) = (&mut cfg.corpus, &mut cfg.train, &mut cfg.loss);
            match key.as_str() {
                "anchors" => c.anchors = parse(key, v)?,
                "anchor_identities" => c.anchor_identities = parse(key, v)?,
                "validation_identities" => c.validation_identities = parse(key, v)?,
                "positive_identities" => c.positive_identities = parse(key, v)?,
                "test_samples" => c.test_samples = parse(key, v)?,
                "test_identities" => c.test_identities = parse(key, v)?,
                "size" => {
                    c.size = parse(key, v)?;
                    t.encoder.input_size = c.size;
                }
                "batch_size" => t.batch_size = parse(key, v)?,
                "epochs" => t.epochs = parse(key, v)?,
                "head_epochs" => t.head_epochs = parse(key, v)?,
                "learning_rate" => t.learning_rate = parse(key, v)?,
                "head_learning_rate" => t.head_learning_rate = parse(key, v)?,
                "patience" => t.patience = Some(parse(key, v)?),
                "p_rotate" => t.geometric.p_rotate = parse(key, v)?,
                "p_flip" => t.geometric.p_flip = parse(key, v)?,
                "pool" => t.encoder.pool = parse(key, v)?,
                "hidden" => t.encoder.hidden = parse_list(key, v)?,
                "embedding_dim" => {
                    t.encoder.embedding_dim = parse(key, v)?;
                    t.head.input_dim = t.encoder.embedding_dim;
                }
                "head_width" => t.head.width = parse(key, v)?,
                "gamma" => l.gamma = parse(key, v)?,
                "m" => l.m = parse(key, v)?,
                "t_gd" => l.t_gd = parse(key, v)?,
                "v" => l.v = parse(key, v)?,
                "seeds" => cfg.seeds = parse_list(key, v)?,
                other => return Err(Error::Config(format!("unknown config key {other:?}"))),
            }
        }
        cfg.corpus.validate()?;
        cfg.train.validate()?;
        cfg.loss.validate()?;
        Ok(cfg)
    }

    /// Reads a key=value file; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(ExperimentConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_key_values(&parse_key_values(&text)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: AblationArm,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub arms: Vec<ArmResult>,
    pub supervised: Option<EvalReport>,
    pub supervised_updates: u64,
    pub contrastive_updates: u64,
}

fn geodesic(report: &EvalReport, variant: TestVariant) -> f64 {
    report.row(variant).map_or(f64::NAN, |r| r.geodesic_deg)
}

impl SeedOutcome {
    pub fn arm(&self, arm: AblationArm) -> Option<&EvalReport> {
        self.arms.iter().find(|a| a.arm == arm).map(|a| &a.report)
    }

    /// FA mean geodesic error of a contrastive arm.
    pub fn fa_error(&self, arm: AblationArm) -> Option<f64> {
        self.arm(arm).map(|r| geodesic(r, TestVariant::Fa))
    }

    pub fn supervised_fa_error(&self) -> Option<f64> {
        self.supervised.as_ref().map(|r| geodesic(r, TestVariant::Fa))
    }

    /// FA error over original-set error of the full pipeline.
    pub fn fa_ratio(&self) -> Option<f64> {
        self.arm(AblationArm::RotateFlip)
            .map(|r| geodesic(r, TestVariant::Fa) / geodesic(r, TestVariant::Original))
    }
}

/// Runs every configured arm for one seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let corpus_cfg = CorpusConfig { seed, ..cfg.corpus.clone() };
    let corpus = build_corpus(&corpus_cfg)?;
    let test: Vec<_> = corpus.test.iter().map(|s| (s.image.clone(), s.pose)).collect();
    let base = TrainConfig { seed, ..cfg.train.clone() };
    let mut arms = vec![AblationArm::RotateFlip];
    arms.extend(cfg.arms.iter().copied().filter(|a| *a != AblationArm::RotateFlip));

    let mut results = Vec::with_capacity(arms.len());
    let mut contrastive_updates = 0;
    for arm in arms {
        let train_cfg = TrainConfig {
            geometric: arm.policy(&cfg.train.geometric),
            ..base.clone()
        };
        let (encoder, repr_log) = train_representation(&train_cfg, &cfg.loss, &corpus.data)?;
        let (head, head_log) = train_head(&encoder, &train_cfg, &corpus.data)?;
        if arm == AblationArm::RotateFlip {
            contrastive_updates = repr_log.updates + head_log.updates;
        }
        let report = evaluate_samples(&PosePipeline { encoder, head }, &test, &TestVariant::ALL, seed)?;
        log::info!("seed {seed} arm {}: {}", arm.name(), report.to_table());
        results.push(ArmResult { arm, report });
    }

    let (supervised, supervised_updates) = if cfg.supervised {
        let (encoder, head, log) = train_supervised(&base, &corpus.data, Some(contrastive_updates))?;
        let report = evaluate_samples(&PosePipeline { encoder, head }, &test, &TestVariant::ALL, seed)?;
        log::info!("seed {seed} supervised: {}", report.to_table());
        (Some(report), log.updates)
    } else {
        (None, 0)
    };
    Ok(SeedOutcome {
        seed,
        arms: results,
        supervised,
        supervised_updates,
        contrastive_updates,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SeedOutcome>> {
    cfg.seeds.iter().map(|&seed| run_seed(cfg, seed)).collect()
}

/// CSV with one row per (seed, model) and the geodesic error per test variant.
pub fn summary_csv(outcomes: &[SeedOutcome]) -> String {
    let mut out = String::from("seed,model,original,sa,fa\n");
    for o in outcomes {
        let mut rows: Vec<(String, &EvalReport)> = o
            .arms
            .iter()
            .map(|a| (format!("contrastive/{}", a.arm.name()), &a.report))
            .collect();
        if let Some(s) = &o.supervised {
            rows.push(("supervised/rotate+flip".into(), s));
        }
        for (name, r) in rows {
            let _ = writeln!(
                out,
                "{},{name},{},{},{}",
                o.seed,
                geodesic(r, TestVariant::Original),
                geodesic(r, TestVariant::Sa),
                geodesic(r, TestVariant::Fa)
            );
        }
    }
    out
}
