//! A reduced version of the regime comparison: one seed, small corpora and
//! short budgets, so it finishes in a few minutes. The full protocol runs
//! through `mamchain experiment`.

use mamchain::cli::{experiment_claim_table, ExperimentConfig};
use mamchain::recognize::SynthSpec;
use mamchain::train::{FinetuneConfig, PretrainConfig};

fn main() -> mamchain::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cfg = ExperimentConfig {
        seeds: vec![0],
        synth: SynthSpec {
            min_phones: 10,
            max_phones: 30,
            ..Default::default()
        },
        unlabeled: 300,
        train: 60,
        test: 40,
        pretrain: PretrainConfig {
            steps: 150,
            batch_size: 4,
            crop_frames: Some(64),
            ..Default::default()
        },
        finetune: FinetuneConfig {
            epochs: 3,
            batch_size: 4,
            ..Default::default()
        },
    };
    let report = experiment_claim_table(&cfg, None)?;
    print!("{}", report.render());
    Ok(())
}
