//! Builds a small graph on the tape, runs backward, and compares against
//! central finite differences.

use mamchain::numerics::{finite_diff_check, Tape, Tensor};

fn main() -> mamchain::Result<()> {
    let x = Tensor::from_fn(&[4, 3], |i| ((i / 3) as f64 - 1.5) * 0.3 + (i % 3) as f64 * 0.1);
    let w = Tensor::from_fn(&[3, 2], |i| 0.2 * i as f64 - 0.4);

    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let wv = tape.constant(w.clone());
    let h = tape.matmul(xv, wv);
    let h = tape.gelu(h);
    let p = tape.softmax_rows(h);
    let sq = tape.mul(p, p);
    let loss = tape.sum(sq);
    let loss = tape.scale(loss, 0.5);
    tape.backward(loss)?;
    println!("loss {:.6}", tape.value(loss).data()[0]);
    println!("dloss/dx row 0: {:?}", tape.grad(xv).unwrap().row(0));

    let err = finite_diff_check(
        |tape, x| {
            let wv = tape.constant(w.clone());
            let h = tape.matmul(x, wv);
            let h = tape.tanh(h);
            let sq = tape.mul(h, h);
            Ok(tape.sum(sq))
        },
        &x,
        1e-5,
    )?;
    println!("max relative finite-difference error {err:.2e}");
    Ok(())
}
