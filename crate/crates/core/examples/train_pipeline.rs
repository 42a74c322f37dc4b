//! Trains the contrastive encoder and its pose head on a small corpus, then
//! evaluates on the original, SA and FA test variants.
//!
//! `cargo run --release --example train_pipeline -- [epochs] [head_epochs]`

use headpose::augment::TestVariant;
use headpose::corpus::{build_corpus, CorpusConfig};
use headpose::eval::{evaluate_samples, PosePipeline};
use headpose::mining::LossConfig;
use headpose::train::{train_head, train_representation, TrainConfig};

fn main() -> headpose::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let arg = |i: usize, default: usize| std::env::args().nth(i).and_then(|a| a.parse().ok()).unwrap_or(default);
    let corpus = build_corpus(&CorpusConfig {
        anchors: 600,
        test_samples: 200,
        ..Default::default()
    })?;
    let cfg = TrainConfig {
        epochs: arg(1, 10),
        head_epochs: arg(2, 10),
        ..Default::default()
    };
    let (encoder, log) = train_representation(&cfg, &LossConfig::default(), &corpus.data)?;
    println!("representation: {} updates, final loss {:.4}", log.updates, log.epoch_losses.last().unwrap_or(&0.0));
    let (head, log) = train_head(&encoder, &cfg, &corpus.data)?;
    println!("head: best epoch {} of {}", log.best_epoch, cfg.head_epochs);
    let test: Vec<_> = corpus.test.iter().map(|s| (s.image.clone(), s.pose)).collect();
    let report = evaluate_samples(&PosePipeline { encoder, head }, &test, &TestVariant::ALL, 0)?;
    print!("{}", report.to_table());
    Ok(())
}
