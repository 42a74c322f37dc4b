//! Contrastive vs supervised training and the rotate/flip ablation at a
//! reduced scale. Pass `full` for the default corpus and epoch counts.

use headpose::corpus::CorpusConfig;
use headpose::experiment::{run_experiment, summary_csv, AblationArm, ExperimentConfig};
use headpose::train::TrainConfig;

fn main() -> headpose::Result<()> {
    let full = std::env::args().nth(1).as_deref() == Some("full");
    let cfg = if full {
        ExperimentConfig {
            seeds: vec![0],
            ..Default::default()
        }
    } else {
        ExperimentConfig {
            corpus: CorpusConfig {
                anchors: 400,
                test_samples: 200,
                ..Default::default()
            },
            train: TrainConfig {
                epochs: 5,
                head_epochs: 5,
                ..Default::default()
            },
            seeds: vec![0],
            arms: AblationArm::ALL.to_vec(),
            ..Default::default()
        }
    };
    let outcomes = run_experiment(&cfg)?;
    print!("{}", summary_csv(&outcomes));
    for o in &outcomes {
        println!("seed {}: FA/original ratio {:.2}", o.seed, o.fa_ratio().unwrap_or(f64::NAN));
    }
    Ok(())
}
