//! Corrupts synthetic utterances the way pretraining does and reports how
//! often each alteration fires.

use mamchain::mam::{make_training_pair, AlterationConfig, BlockAction};
use mamchain::recognize::{SynthSource, SynthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mamchain::Result<()> {
    let src = SynthSource::new(&SynthSpec::default())?;
    let cfg = AlterationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut masked, mut frames, mut noisy, mut widths) = (0usize, 0usize, 0usize, 0usize);
    let mut actions = [0usize; 3];
    let n = 500;
    for u in src.generate(n, 0, "u") {
        let out = make_training_pair(&u.features, &cfg, &mut rng)?;
        masked += out.time_mask.iter().filter(|&&m| m).count();
        frames += out.time_mask.len();
        widths += out.freq_mask.iter().filter(|&&m| m).count();
        noisy += out.noise_applied as usize;
        for b in &out.blocks {
            actions[match b.action {
                BlockAction::Zero => 0,
                BlockAction::Replace => 1,
                BlockAction::Keep => 2,
            }] += 1;
        }
    }
    let blocks: usize = actions.iter().sum();
    println!("masked frames     {:.3}", masked as f64 / frames as f64);
    println!(
        "zero/replace/keep {:.3} {:.3} {:.3}",
        actions[0] as f64 / blocks as f64,
        actions[1] as f64 / blocks as f64,
        actions[2] as f64 / blocks as f64
    );
    println!("mean freq width   {:.2}", widths as f64 / n as f64);
    println!("magnitude noise   {:.3}", noisy as f64 / n as f64);
    Ok(())
}
