//! Runs the Tr-tiny encoder and its reconstruction head on random input and
//! prints shapes, parameter counts and an attention row.

use mamchain::nnet::{reconstruction_head, transformer_forward, TransformerConfig};
use mamchain::numerics::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> mamchain::Result<()> {
    for name in ["tr-tiny", "tr-small", "tr-med"] {
        let cfg = TransformerConfig::preset(name).unwrap();
        let n: usize = cfg.param_shapes().values().map(|s| s.iter().product::<usize>()).sum();
        println!("{name}: {} layers, width {}, {n} parameters", cfg.num_layers, cfg.model_dim());
    }

    let cfg = TransformerConfig::tr_tiny();
    let params = cfg.init_params(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::from_fn(&[12, cfg.input_dim], |_| rng.random_range(-1.0..1.0));

    let mut tape = Tape::new();
    let bind = params.bind(&mut tape, |_| false);
    let xv = tape.constant(x);
    let out = transformer_forward(&cfg, &mut tape, &bind, xv, None)?;
    let recon = reconstruction_head(&mut tape, &bind, out.hidden)?;
    println!("hidden {:?}, reconstruction {:?}", tape.value(out.hidden).shape(), tape.value(recon).shape());
    let att = tape.value(out.attention[0]);
    let row: Vec<String> = att.row(0).iter().map(|p| format!("{p:.3}")).collect();
    println!("layer 0 head 0, query 0: [{}] sums to {:.6}", row.join(" "), att.row(0).iter().sum::<f64>());
    Ok(())
}
