//! Short masked-reconstruction pretraining run on synthetic features,
//! logging to a run directory and resuming from its last checkpoint.

use mamchain::recognize::{SynthSource, SynthSpec};
use mamchain::train::{Checkpoint, PretrainConfig, Pretrainer, RunSink};

fn main() -> mamchain::Result<()> {
    let src = SynthSource::new(&SynthSpec::default())?;
    let data: Vec<_> = src.generate(100, 0, "u").into_iter().map(|u| u.features).collect();
    let cfg = PretrainConfig {
        steps: 60,
        batch_size: 2,
        crop_frames: Some(64),
        checkpoint_every: 30,
        ..Default::default()
    };
    let dir = std::env::temp_dir().join("mamchain-pretrain-example");
    let _ = std::fs::remove_dir_all(&dir);

    let mut pt = Pretrainer::new(cfg.clone())?;
    let before = pt.evaluate(&data[..10], 0)?;
    let mut sink = RunSink::in_dir(&dir, cfg.checkpoint_every, &cfg)?;
    pt.run(&data, 30, &mut sink)?;

    let ck = Checkpoint::load(dir.join("ckpt_00000030.bin"))?;
    let mut resumed = Pretrainer::from_checkpoint(cfg.clone(), ck)?;
    resumed.run(&data, cfg.steps, &mut sink)?;
    let after = resumed.evaluate(&data[..10], 0)?;
    for r in resumed.history.iter().step_by(10) {
        println!("step {:3}  lr {:.2e}  L1 {:.4}", r.step, r.lr["encoder"], r.loss);
    }
    println!("held-out L1 {before:.4} -> {after:.4}");
    println!("log and checkpoints in {}", dir.display());
    Ok(())
}
