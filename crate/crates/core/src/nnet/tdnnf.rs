//! Factorized TDNN stack.
//!
//! Each layer splices its input at the configured offsets, projects to the
//! bottleneck through the constrained factor `linear_a`, expands with
//! `linear_b`, applies ReLU and a learned per-channel scale and shift, and
//! adds a residual when input and output widths agree.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{uniform_weight, Binding, ParamStore};
use crate::numerics::{gemm, Tape, Tensor, Var};
use crate::{Error, Result};

pub const TDNNF_PREFIX: &str = "tdnnf.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdnnfConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub bottleneck_dim: usize,
    /// Splice offsets, one list per layer.
    pub context: Vec<Vec<isize>>,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Layer whose output is decimated when the subsampling factor exceeds 1.
    pub subsampling_layer: usize,
}

impl TdnnfConfig {
    fn with_layers(num_layers: usize, hidden_dim: usize, bottleneck_dim: usize) -> Self {
        TdnnfConfig {
            num_layers,
            hidden_dim,
            bottleneck_dim,
            context: vec![vec![-1, 0, 1]; num_layers],
            input_dim: 80,
            output_dim: 1,
            subsampling_layer: 1,
        }
    }

    pub fn large() -> Self {
        Self::with_layers(12, 1024, 128)
    }

    pub fn small() -> Self {
        Self::with_layers(7, 1024, 128)
    }

    pub fn tiny() -> Self {
        Self::with_layers(3, 128, 32)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tdnnf-large" => Some(Self::large()),
            "tdnnf-small" => Some(Self::small()),
            "tdnnf-tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.context.len() != self.num_layers {
            return Err(Error::Config(format!(
                "TDNNF has {} layers but {} context lists",
                self.num_layers,
                self.context.len()
            )));
        }
        if self.context.iter().any(Vec::is_empty) {
            return Err(Error::Config("empty TDNNF context".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("TDNNF input and output dims must be positive".into()));
        }
        Ok(())
    }

    /// Input frames seen by one output frame.
    pub fn receptive_field(&self, subsampling: usize) -> usize {
        let mut field = 1usize;
        let mut stride = 1usize;
        for (l, ctx) in self.context.iter().enumerate() {
            let lo = *ctx.iter().min().expect("non-empty context");
            let hi = *ctx.iter().max().expect("non-empty context");
            field += (hi - lo) as usize * stride;
            if l == self.subsampling_layer {
                stride *= subsampling;
            }
        }
        field
    }

    pub fn param_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let mut s = BTreeMap::new();
        let mut d_in = self.input_dim;
        for l in 0..self.num_layers {
            let p = format!("{TDNNF_PREFIX}{l}.");
            let k = self.context[l].len();
            s.insert(format!("{p}linear_a"), vec![k * d_in, self.bottleneck_dim]);
            s.insert(format!("{p}linear_b"), vec![self.bottleneck_dim, self.hidden_dim]);
            s.insert(format!("{p}bias"), vec![self.hidden_dim]);
            s.insert(format!("{p}scale"), vec![self.hidden_dim]);
            s.insert(format!("{p}shift"), vec![self.hidden_dim]);
            d_in = self.hidden_dim;
        }
        s.insert(format!("{TDNNF_PREFIX}output.weight"), vec![self.hidden_dim, self.output_dim]);
        s.insert(format!("{TDNNF_PREFIX}output.bias"), vec![self.output_dim]);
        s
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in self.param_shapes() {
            let t = if name.ends_with(".scale") {
                Tensor::filled(&shape, 1.0)
            } else if shape.len() == 1 {
                Tensor::zeros(&shape)
            } else {
                uniform_weight(&mut rng, shape[0], shape[1])
            };
            store.insert(name, t);
        }
        store
    }

    /// Names of the constrained bottleneck factors.
    pub fn constrained_params(&self) -> Vec<String> {
        (0..self.num_layers)
            .map(|l| format!("{TDNNF_PREFIX}{l}.linear_a"))
            .collect()
    }
}

/// Per-frame pdf scores, `ceil(T / subsampling) x output_dim`.
pub fn tdnnf_forward(
    cfg: &TdnnfConfig,
    tape: &mut Tape,
    bind: &Binding,
    x: Var,
    subsampling: usize,
) -> Result<Var> {
    let (frames, dim) = {
        let v = tape.value(x);
        (v.rows(), v.cols())
    };
    if dim != cfg.input_dim {
        return Err(Error::contract(format!(
            "TDNNF expects {}-dim input, got {dim}",
            cfg.input_dim
        )));
    }
    let field = cfg.receptive_field(subsampling.max(1));
    if frames < field {
        return Err(Error::TooShort(format!(
            "utterance too short for context: {frames} frames < receptive field {field}"
        )));
    }
    let mut h = x;
    let mut d_in = dim;
    for l in 0..cfg.num_layers {
        let p = format!("{TDNNF_PREFIX}{l}.");
        let spliced = tape.splice(h, &cfg.context[l]);
        let bottleneck = tape.matmul(spliced, bind.var(&format!("{p}linear_a"))?);
        let expanded = tape.matmul(bottleneck, bind.var(&format!("{p}linear_b"))?);
        let expanded = tape.add_bias(expanded, bind.var(&format!("{p}bias"))?);
        let act = tape.relu(expanded);
        let act = tape.scale_cols(act, bind.var(&format!("{p}scale"))?);
        let mut out = tape.add_bias(act, bind.var(&format!("{p}shift"))?);
        let mut residual = h;
        if l == cfg.subsampling_layer && subsampling > 1 {
            out = tape.subsample_rows(out, subsampling);
            residual = tape.subsample_rows(residual, subsampling);
        }
        if d_in == cfg.hidden_dim {
            out = tape.add(out, residual);
        }
        h = out;
        d_in = cfg.hidden_dim;
    }
    let w = bind.var(&format!("{TDNNF_PREFIX}output.weight"))?;
    let b = bind.var(&format!("{TDNNF_PREFIX}output.bias"))?;
    let y = tape.matmul(h, w);
    Ok(tape.add_bias(y, b))
}

/// `||P / alpha - I||_F` with `P = M M^T` and `alpha = tr(P P) / tr(P)`.
pub fn orthogonality_error(m: &Tensor) -> f64 {
    let p = gram(m);
    let r = m.rows();
    let (tr_p, tr_pp) = traces(&p, r);
    if tr_p == 0.0 {
        return f64::INFINITY;
    }
    let alpha = tr_pp / tr_p;
    let mut e = 0.0;
    for i in 0..r {
        for j in 0..r {
            let v = p[i * r + j] / alpha - if i == j { 1.0 } else { 0.0 };
            e += v * v;
        }
    }
    e.sqrt()
}

fn gram(m: &Tensor) -> Vec<f64> {
    let (r, c) = (m.rows(), m.cols());
    let mut p = vec![0.0; r * r];
    gemm(r, c, r, m.data(), false, m.data(), true, &mut p, 0.0);
    p
}

fn traces(p: &[f64], r: usize) -> (f64, f64) {
    let tr_p = (0..r).map(|i| p[i * r + i]).sum();
    // tr(P P) = sum of squares for symmetric P
    let tr_pp = p.iter().map(|v| v * v).sum();
    (tr_p, tr_pp)
}

/// One step `M <- M - (1 / (4 alpha)) (M M^T - alpha I) M` towards a scaled
/// semi-orthogonal matrix, for `M` with fewer rows than columns. The `1 /
/// alpha` factor makes the step independent of the overall scale of `M`.
/// Returns `None` for an all-zero matrix.
pub fn semiorthogonal_step(m: &Tensor) -> Result<Option<Tensor>> {
    let (r, c) = (m.rows(), m.cols());
    if r >= c {
        return Err(Error::contract(format!(
            "semi-orthogonal factor must be wide, got {r}x{c}"
        )));
    }
    let mut p = gram(m);
    let (tr_p, tr_pp) = traces(&p, r);
    if tr_p <= 0.0 || !tr_p.is_finite() {
        log::warn!("skipping semi-orthogonal step on a degenerate {r}x{c} factor");
        return Ok(None);
    }
    let alpha = tr_pp / tr_p;
    for i in 0..r {
        p[i * r + i] -= alpha;
    }
    let mut out = m.data().to_vec();
    let coef = -0.25 / alpha;
    let mut delta = vec![0.0; r * c];
    gemm(r, r, c, &p, false, m.data(), false, &mut delta, 0.0);
    for (o, d) in out.iter_mut().zip(&delta) {
        *o += coef * d;
    }
    Ok(Some(Tensor::matrix(r, c, out)))
}

/// Applies [`semiorthogonal_step`] to a factor stored as `fan_in x bottleneck`
/// (its transpose is the wide matrix being constrained).
pub fn constrain_factor(weight: &mut Tensor) -> Result<()> {
    let wide = weight.transpose();
    if let Some(next) = semiorthogonal_step(&wide)? {
        *weight = next.transpose();
    }
    Ok(())
}
