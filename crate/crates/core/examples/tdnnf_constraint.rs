//! Semi-orthogonal constraint on a TDNNF bottleneck factor: the error falls
//! towards zero as steps are repeated, and the model applies it to every
//! factor at once.

use mamchain::nnet::{constrain_factor, orthogonality_error, AcousticModel, TdnnfConfig, TrainMode};
use mamchain::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> mamchain::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut w = Tensor::from_fn(&[384, 32], |_| rng.random_range(-0.5..0.5));
    for step in 0..8 {
        println!("step {step}: error {:.3e}", orthogonality_error(&w.transpose()));
        constrain_factor(&mut w)?;
    }

    let cfg = TdnnfConfig::tiny();
    println!("tdnnf-tiny receptive field: {} frames", cfg.receptive_field(1));
    let mut model = AcousticModel::assemble(TrainMode::Scratch, None, cfg, 20, 1, 0)?;
    let factors = model.tdnnf.constrained_params();
    let err = |m: &AcousticModel| -> f64 {
        factors
            .iter()
            .map(|n| orthogonality_error(&m.params.get(n).unwrap().transpose()))
            .fold(0.0, f64::max)
    };
    println!("worst factor before: {:.3e}", err(&model));
    for _ in 0..4 {
        model.constrain()?;
    }
    println!("worst factor after 4 steps: {:.3e}", err(&model));
    Ok(())
}
