//! Command-line front end. Exit codes: 0 success, 1 invalid input or
//! configuration, 2 filesystem failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use headpose::augment::TestVariant;
use headpose::corpus::build_corpus;
use headpose::eval::{
    evaluate, export_embeddings, export_sphere_points, load_manifest, manifest_poses, write_dataset, write_variant,
    DatasetManifest, PosePipeline, Split, MANIFEST_FILE,
};
use headpose::experiment::{run_experiment, summary_csv, ExperimentConfig};
use headpose::nn::{EncoderNet, HeadMlp};
use headpose::so3::Axis;
use headpose::train::{train_head, train_representation, train_supervised, PositivePool, TrainLog};
use headpose::{Error, Result};

#[derive(Parser)]
#[command(name = "headpose", version, about = "Full-range head pose estimation on SO(3)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Render train, validation and test pools to a dataset directory.
    Generate(Common),
    /// Contrastive representation training.
    TrainRepr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Pose head on a frozen encoder.
    TrainHead {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
    },
    /// End-to-end supervised baseline.
    TrainSupervised {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Optimizer steps; defaults to (epochs + head_epochs) epochs' worth.
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Evaluate a model on one or more test variants.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        head: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "original,sa,fa")]
        variant: Vec<TestVariant>,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Write a transformed copy of a dataset.
    MakeVariant {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        variant: TestVariant,
    },
    /// Sphere projections of every label, one `x,y,z` row each.
    ExportSphere {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "z")]
        axis: Axis,
    },
    /// Embedding vectors of every record, one CSV row each.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
    },
    /// Contrastive vs supervised comparison and augmentation ablation.
    Experiment(Common),
}

fn prepare(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref())?;
    cfg.corpus.seed = common.seed;
    cfg.train.seed = common.seed;
    fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_log(path: &Path, log: &TrainLog) -> Result<()> {
    write(path, &serde_json::to_string_pretty(log).expect("log serializes"))
}

fn training_manifest(path: &Path, cfg: &ExperimentConfig) -> Result<headpose::train::TrainData> {
    load_manifest(path)?.train_data(PositivePool::new(cfg.corpus.positive_seeds())?)
}

fn split_manifest(path: &Path, split: Split) -> Result<DatasetManifest> {
    let manifest = load_manifest(path)?.split(split);
    if manifest.is_empty() {
        return Err(Error::Empty("manifest split"));
    }
    Ok(manifest)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(common) => {
            let cfg = prepare(&common)?;
            let corpus = build_corpus(&cfg.corpus)?;
            let m = write_dataset(
                &common.out,
                &[
                    (Split::Train, &corpus.data.train),
                    (Split::Validation, &corpus.data.validation),
                    (Split::Test, &corpus.test),
                ],
            )?;
            println!("wrote {} records to {}", m.len(), common.out.join(MANIFEST_FILE).display());
        }
        Command::TrainRepr { common, manifest } => {
            let cfg = prepare(&common)?;
            let data = training_manifest(&manifest, &cfg)?;
            let (encoder, log) = train_representation(&cfg.train, &cfg.loss, &data)?;
            encoder.save(&common.out.join("encoder.ckpt"), common.seed)?;
            write_log(&common.out.join("train-repr.json"), &log)?;
            println!("{} updates, {} skipped", log.updates, log.skipped);
        }
        Command::TrainHead {
            common,
            manifest,
            encoder,
        } => {
            let cfg = prepare(&common)?;
            let data = training_manifest(&manifest, &cfg)?;
            let (encoder, _) = EncoderNet::load(&encoder)?;
            let mut train_cfg = cfg.train.clone();
            train_cfg.encoder = encoder.config().clone();
            train_cfg.head.input_dim = encoder.embedding_dim();
            let (head, log) = train_head(&encoder, &train_cfg, &data)?;
            head.save(&common.out.join("head.ckpt"), common.seed)?;
            write_log(&common.out.join("train-head.json"), &log)?;
            println!("{} updates, best epoch {}", log.updates, log.best_epoch);
        }
        Command::TrainSupervised {
            common,
            manifest,
            budget,
        } => {
            let cfg = prepare(&common)?;
            let data = training_manifest(&manifest, &cfg)?;
            let (encoder, head, log) = train_supervised(&cfg.train, &data, budget)?;
            encoder.save(&common.out.join("encoder.ckpt"), common.seed)?;
            head.save(&common.out.join("head.ckpt"), common.seed)?;
            write_log(&common.out.join("train-supervised.json"), &log)?;
            println!("{} updates, best epoch {}", log.updates, log.best_epoch);
        }
        Command::Evaluate {
            common,
            manifest,
            encoder,
            head,
            variant,
            split,
        } => {
            prepare(&common)?;
            let manifest = split_manifest(&manifest, split)?;
            let pipeline = PosePipeline {
                encoder: EncoderNet::load(&encoder)?.0,
                head: HeadMlp::load(&head)?.0,
            };
            let report = evaluate(&pipeline, &manifest, &variant, common.seed)?;
            write(&common.out.join("report.csv"), &report.to_csv())?;
            write(
                &common.out.join("report.json"),
                &serde_json::to_string_pretty(&report).expect("report serializes"),
            )?;
            print!("{}", report.to_table());
        }
        Command::MakeVariant {
            common,
            manifest,
            variant,
        } => {
            prepare(&common)?;
            let m = write_variant(&load_manifest(&manifest)?, variant, common.seed, &common.out)?;
            println!("wrote {} {variant} records", m.len());
        }
        Command::ExportSphere {
            common,
            manifest,
            axis,
        } => {
            prepare(&common)?;
            let poses = manifest_poses(&load_manifest(&manifest)?);
            let name = format!("sphere_{}.csv", format!("{axis:?}").to_lowercase());
            let n = export_sphere_points(&poses, axis, &common.out.join(name))?;
            println!("wrote {n} points");
        }
        Command::ExportEmbeddings {
            common,
            manifest,
            encoder,
        } => {
            prepare(&common)?;
            let images: Vec<_> = load_manifest(&manifest)?
                .load_samples()?
                .into_iter()
                .map(|s| s.image)
                .collect();
            let (encoder, _) = EncoderNet::load(&encoder)?;
            let n = export_embeddings(&encoder, &images, &common.out.join("embeddings.csv"))?;
            println!("wrote {n} embeddings");
        }
        Command::Experiment(common) => {
            let mut cfg = prepare(&common)?;
            if common.config.is_none() {
                cfg.seeds = vec![common.seed];
            }
            let outcomes = run_experiment(&cfg)?;
            let csv = summary_csv(&outcomes);
            write(&common.out.join("experiment.csv"), &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
