//! Dense tensors, the autodiff tape, and log-domain helpers.

mod tape;
mod tensor;

pub use tape::{Tape, Var};
pub(crate) use tape::softmax_in_place;
pub use tensor::Tensor;
pub(crate) use tensor::{gemm, read_u64};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// `ln(sum(exp(v)))` with max-shift. All `-inf` inputs give `-inf`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::contract("log_sum_exp of an empty slice"));
    }
    Ok(lse_unchecked(values.iter().copied()))
}

/// `ln(exp(a) + exp(b))` in the log semiring.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub(crate) fn lse_unchecked(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Which coordinates [`finite_diff_check_many`] perturbs.
#[derive(Clone, Copy, Debug)]
pub enum Probe {
    All,
    /// Up to `per_tensor` seeded coordinates from every input tensor.
    Sample { per_tensor: usize, seed: u64 },
}

/// Largest `|analytic - numeric| / max(1, |analytic|)` over the gradient of a
/// scalar graph built by `f` from a single input.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h, Probe::All)
}

/// Central-difference gradient check over several input tensors at once.
///
/// `f` receives one leaf per input (in order) and must return a scalar node.
pub fn finite_diff_check_many<F>(f: F, inputs: &[Tensor], h: f64, probe: Probe) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let root = f(&mut tape, &vars)?;
        let v = scalar_value(&tape, root)?;
        if !v.is_finite() {
            return Err(Error::NonFinite("finite-difference probe".into()));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let root = f(&mut tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match probe {
            Probe::All => (0..input.len()).collect(),
            Probe::Sample { per_tensor, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (ti as u64).wrapping_mul(0x9E37));
                let k = per_tensor.min(input.len());
                let mut idx = sample(&mut rng, input.len(), k).into_vec();
                idx.sort_unstable();
                idx
            }
        };
        for c in coords {
            let orig = input.data()[c];
            work[ti].data_mut()[c] = orig + h;
            let plus = eval(&work)?;
            work[ti].data_mut()[c] = orig - h;
            let minus = eval(&work)?;
            work[ti].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[ti].data()[c];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

fn scalar_value(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(Error::contract("gradient check function must return a scalar"));
    }
    Ok(t.data()[0])
}
