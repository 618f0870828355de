//! Bidirectional Transformer encoder and its reconstruction head.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{uniform_weight, Binding, ParamStore};
use crate::numerics::{Tape, Tensor, Var};
use crate::{Error, Result};

pub const ENCODER_PREFIX: &str = "encoder.";
pub const RECON_PREFIX: &str = "recon.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub ff_dim: usize,
    pub input_dim: usize,
    pub dropout_prob: f64,
}

impl TransformerConfig {
    pub fn tr_small() -> Self {
        TransformerConfig {
            num_layers: 3,
            num_heads: 12,
            head_dim: 64,
            ff_dim: 3072,
            input_dim: 80,
            dropout_prob: 0.1,
        }
    }

    pub fn tr_med() -> Self {
        TransformerConfig {
            num_layers: 12,
            num_heads: 6,
            ff_dim: 1536,
            ..Self::tr_small()
        }
    }

    pub fn tr_tiny() -> Self {
        TransformerConfig {
            num_layers: 2,
            num_heads: 4,
            ff_dim: 256,
            ..Self::tr_small()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tr-small" => Some(Self::tr_small()),
            "tr-med" => Some(Self::tr_med()),
            "tr-tiny" => Some(Self::tr_tiny()),
            _ => None,
        }
    }

    pub fn model_dim(&self) -> usize {
        self.num_heads * self.head_dim
    }

    /// Shapes of encoder and reconstruction-head parameters.
    pub fn param_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let d = self.model_dim();
        let mut s = BTreeMap::new();
        let mut put = |k: String, v: Vec<usize>| {
            s.insert(k, v);
        };
        put(format!("{ENCODER_PREFIX}input.weight"), vec![self.input_dim, d]);
        put(format!("{ENCODER_PREFIX}input.bias"), vec![d]);
        for l in 0..self.num_layers {
            let p = format!("{ENCODER_PREFIX}layers.{l}.");
            for m in ["q", "k", "v", "o"] {
                put(format!("{p}attn.{m}.weight"), vec![d, d]);
                put(format!("{p}attn.{m}.bias"), vec![d]);
            }
            put(format!("{p}ff1.weight"), vec![d, self.ff_dim]);
            put(format!("{p}ff1.bias"), vec![self.ff_dim]);
            put(format!("{p}ff2.weight"), vec![self.ff_dim, d]);
            put(format!("{p}ff2.bias"), vec![d]);
            for n in ["ln1", "ln2"] {
                put(format!("{p}{n}.gamma"), vec![d]);
                put(format!("{p}{n}.beta"), vec![d]);
            }
        }
        put(format!("{RECON_PREFIX}weight"), vec![d, self.input_dim]);
        put(format!("{RECON_PREFIX}bias"), vec![self.input_dim]);
        s
    }

    /// Encoder plus reconstruction head, deterministic in `seed`.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in self.param_shapes() {
            let t = if name.ends_with(".gamma") {
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
}

/// Inverted dropout with its own seeded stream.
#[derive(Debug)]
pub struct Dropout {
    pub prob: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(prob: f64, seed: u64) -> Self {
        Dropout {
            prob,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        if self.prob <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.prob;
        let shape = tape.value(x).shape().to_vec();
        let rng = &mut self.rng;
        let mask = Tensor::from_fn(&shape, |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let m = tape.constant(mask);
        tape.mul(x, m)
    }
}

/// Fixed sinusoidal position table, `frames x dim`.
pub fn sinusoidal_positions(frames: usize, dim: usize) -> Tensor {
    Tensor::from_fn(&[frames, dim], |i| {
        let (t, j) = (i / dim, i % dim);
        let rate = 1.0 / 10_000f64.powf((2 * (j / 2)) as f64 / dim as f64);
        let a = t as f64 * rate;
        if j % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    })
}

pub struct EncoderOutput {
    pub hidden: Var,
    /// Attention probabilities, one `T x T` node per layer and head.
    pub attention: Vec<Var>,
}

fn affine(tape: &mut Tape, bind: &Binding, x: Var, prefix: &str) -> Result<Var> {
    let w = bind.var(&format!("{prefix}.weight"))?;
    let b = bind.var(&format!("{prefix}.bias"))?;
    let h = tape.matmul(x, w);
    Ok(tape.add_bias(h, b))
}

/// Input projection plus sinusoidal positions, then per layer:
/// `x = LN(x + MHA(x))`, `x = LN(x + FF(x))` with GELU feed-forward.
pub fn transformer_forward(
    cfg: &TransformerConfig,
    tape: &mut Tape,
    bind: &Binding,
    x: Var,
    mut dropout: Option<&mut Dropout>,
) -> Result<EncoderOutput> {
    let (frames, dim) = {
        let v = tape.value(x);
        (v.rows(), v.cols())
    };
    if dim != cfg.input_dim {
        return Err(Error::contract(format!(
            "encoder expects {}-dim input, got {dim}",
            cfg.input_dim
        )));
    }
    let d = cfg.model_dim();
    let scale = 1.0 / (cfg.head_dim as f64).sqrt();
    let h = affine(tape, bind, x, &format!("{ENCODER_PREFIX}input"))?;
    let pos = tape.constant(sinusoidal_positions(frames, d));
    let mut h = tape.add(h, pos);
    let mut attention = Vec::with_capacity(cfg.num_layers * cfg.num_heads);

    for l in 0..cfg.num_layers {
        let p = format!("{ENCODER_PREFIX}layers.{l}.");
        let q = affine(tape, bind, h, &format!("{p}attn.q"))?;
        let k = affine(tape, bind, h, &format!("{p}attn.k"))?;
        let v = affine(tape, bind, h, &format!("{p}attn.v"))?;
        let mut heads = Vec::with_capacity(cfg.num_heads);
        for head in 0..cfg.num_heads {
            let off = head * cfg.head_dim;
            let qh = tape.slice_cols(q, off, cfg.head_dim);
            let kh = tape.slice_cols(k, off, cfg.head_dim);
            let vh = tape.slice_cols(v, off, cfg.head_dim);
            let scores = tape.matmul_bt(qh, kh);
            let scores = tape.scale(scores, scale);
            let probs = tape.softmax_rows(scores);
            attention.push(probs);
            heads.push(tape.matmul(probs, vh));
        }
        let cat = tape.concat_cols(&heads);
        let mut att = affine(tape, bind, cat, &format!("{p}attn.o"))?;
        if let Some(dr) = dropout.as_deref_mut() {
            att = dr.apply(tape, att);
        }
        let res = tape.add(h, att);
        h = tape.layer_norm(
            res,
            bind.var(&format!("{p}ln1.gamma"))?,
            bind.var(&format!("{p}ln1.beta"))?,
        );
        let f = affine(tape, bind, h, &format!("{p}ff1"))?;
        let f = tape.gelu(f);
        let mut f = affine(tape, bind, f, &format!("{p}ff2"))?;
        if let Some(dr) = dropout.as_deref_mut() {
            f = dr.apply(tape, f);
        }
        let res = tape.add(h, f);
        h = tape.layer_norm(
            res,
            bind.var(&format!("{p}ln2.gamma"))?,
            bind.var(&format!("{p}ln2.beta"))?,
        );
    }
    Ok(EncoderOutput {
        hidden: h,
        attention,
    })
}

/// Affine map from the hidden sequence back to feature space.
pub fn reconstruction_head(tape: &mut Tape, bind: &Binding, hidden: Var) -> Result<Var> {
    affine(tape, bind, hidden, RECON_PREFIX.trim_end_matches('.'))
}
