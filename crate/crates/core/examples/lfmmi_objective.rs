//! LFMMI loss, gradient and occupancies for one utterance with random
//! logits, plus a few steps of gradient descent on the logits themselves.

use mamchain::graphs::{build_denominator, compile_numerator, estimate_phone_bigram, PhoneSet, Topology};
use mamchain::lfmmi::{lfmmi_value, posteriors};
use mamchain::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> mamchain::Result<()> {
    let phones = PhoneSet::synthetic(4)?;
    let topo = Topology::full(&phones);
    let lm = estimate_phone_bigram(&[vec![1, 2, 3], vec![3, 2], vec![1, 3, 1]], phones.len(), 1.0)?;
    let den = build_denominator(&lm, &topo)?;
    let transcript = [1, 3, 2];
    let frames = 9;
    let num = compile_numerator(&transcript, &topo, frames)?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut logits = Tensor::from_fn(&[frames, topo.num_pdfs()], |_| rng.random_range(-1.0..1.0));

    let (_, post) = posteriors(&num, &logits)?;
    let sums: Vec<String> = post.frame_sums().iter().map(|s| format!("{s:.6}")).collect();
    println!("numerator occupancy per frame: {}", sums.join(" "));

    for step in 0..=20 {
        let (loss, z_num, z_den, grad) = lfmmi_value(&num, &den, &logits, None)?;
        if step % 5 == 0 {
            println!("step {step:2}: loss {loss:8.4}  log Z_num {z_num:8.4}  log Z_den {z_den:8.4}");
        }
        for (x, g) in logits.data_mut().iter_mut().zip(grad.data()) {
            *x -= 0.5 * g;
        }
    }
    Ok(())
}
