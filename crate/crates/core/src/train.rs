//! Adam, learning-rate schedules, checkpoints, and the two training loops:
//! masked-reconstruction pretraining and supervised adaptation.
//!
//! Every random draw of step `s` comes from a generator keyed by
//! `(seed, s)`, so a run resumed from a checkpoint replays exactly the
//! draws an uninterrupted run would have made.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;
use crate::graphs::{
    build_denominator, compile_numerator_with, estimate_phone_bigram, Fst, NumeratorOptions, PhoneBigram, PhoneSet,
    Topology,
};
use crate::lfmmi::{cross_entropy_loss, lfmmi_loss};
use crate::mam::{l1_reconstruction_loss, make_training_pair, AlterationConfig};
use crate::nnet::{
    reconstruction_head, transformer_forward, AcousticModel, Dropout, ParamStore, TdnnfConfig, TrainMode,
    TransformerConfig, ENCODER_PREFIX,
};
use crate::numerics::{read_u64, Tape, Tensor};
use crate::recognize::{decode, phone_error_rate, read_alignment, read_manifest, PerReport};
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Moment buffers for the trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub nonfinite_skips: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore, trainable: impl Fn(&str) -> bool) -> Self {
        let zeros = |(k, t): (&String, &Tensor)| (k.clone(), Tensor::zeros(t.shape()));
        AdamState {
            step: 0,
            m: params.iter().filter(|(k, _)| trainable(k)).map(zeros).collect(),
            v: params.iter().filter(|(k, _)| trainable(k)).map(zeros).collect(),
            nonfinite_skips: 0,
        }
    }

    /// One bias-corrected update. Non-finite gradients leave everything
    /// untouched except the anomaly counter, and return `false`.
    pub fn update(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
        lr: impl Fn(&str) -> f64,
    ) -> Result<bool> {
        for (k, g) in grads {
            let m = self
                .m
                .get(k)
                .ok_or_else(|| Error::contract(format!("no optimizer state for `{k}`")))?;
            if m.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    name: k.clone(),
                    expected: m.shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
        }
        if grads.values().any(|g| !g.all_finite()) {
            self.nonfinite_skips += 1;
            log::warn!("non-finite gradient at step {}; update skipped", self.step);
            return Ok(false);
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (k, g) in grads {
            let rate = lr(k);
            let m = self.m.get_mut(k).unwrap().data_mut();
            let v = self.v.get_mut(k).unwrap().data_mut();
            let p = params
                .get_mut(k)
                .ok_or_else(|| Error::contract(format!("gradient for unknown parameter `{k}`")))?
                .data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                p[i] -= rate * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
        Ok(true)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Schedule {
    WarmupLinear {
        peak: f64,
        total_steps: u64,
        warmup_frac: f64,
    },
    Polynomial {
        start: f64,
        end: f64,
        total_steps: u64,
        power: f64,
    },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::WarmupLinear {
                peak,
                total_steps,
                warmup_frac,
            } => {
                if !(peak > 0.0) || total_steps == 0 || !(warmup_frac > 0.0 && warmup_frac < 1.0) {
                    return Err(Error::Config(
                        "warmup-linear needs peak > 0, total_steps > 0, warmup_frac in (0, 1)".into(),
                    ));
                }
            }
            Schedule::Polynomial {
                start,
                end,
                total_steps,
                power,
            } => {
                if !(start > 0.0 && end >= 0.0 && power > 0.0) || total_steps == 0 {
                    return Err(Error::Config(
                        "polynomial needs start > 0, end >= 0, power > 0, total_steps > 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Learning rate at `step`; past the end it stays at the final value.
    pub fn lr_at(&self, step: u64) -> f64 {
        match *self {
            Schedule::WarmupLinear {
                peak,
                total_steps,
                warmup_frac,
            } => {
                if step >= total_steps {
                    return 0.0;
                }
                let (s, t) = (step as f64, total_steps as f64);
                let w = warmup_frac * t;
                if s <= w {
                    peak * s / w
                } else {
                    peak * (t - s) / (t - w)
                }
            }
            Schedule::Polynomial {
                start,
                end,
                total_steps,
                power,
            } => {
                if step >= total_steps {
                    return end;
                }
                let frac = 1.0 - step as f64 / total_steps as f64;
                (start - end) * frac.powf(power) + end
            }
        }
    }

    /// Same shape with every rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Schedule {
        match self.clone() {
            Schedule::WarmupLinear {
                peak,
                total_steps,
                warmup_frac,
            } => Schedule::WarmupLinear {
                peak: peak * factor,
                total_steps,
                warmup_frac,
            },
            Schedule::Polynomial {
                start,
                end,
                total_steps,
                power,
            } => Schedule::Polynomial {
                start: start * factor,
                end: end * factor,
                total_steps,
                power,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub skipped_short: u64,
    pub skipped_empty: u64,
    pub nonfinite: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointKind {
    Pretrain,
    Finetune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: CheckpointKind,
    pub step: u64,
    pub seed: u64,
    pub encoder: Option<TransformerConfig>,
    pub tdnnf: Option<TdnnfConfig>,
    pub mode: Option<TrainMode>,
    #[serde(default)]
    pub subsampling: usize,
    pub counters: Counters,
    pub adam_step: u64,
    pub adam_nonfinite: u64,
    /// Resolved run configuration.
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore,
    pub adam: AdamState,
}

const MAGIC: &[u8; 8] = b"MAMCKPT1";

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let entries: Vec<(String, &Tensor)> = self
            .params
            .iter()
            .map(|(k, t)| (format!("param/{k}"), t))
            .chain(self.adam.m.iter().map(|(k, t)| (format!("adam_m/{k}"), t)))
            .chain(self.adam.v.iter().map(|(k, t)| (format!("adam_v/{k}"), t)))
            .collect();
        w.write_all(&(entries.len() as u64).to_le_bytes())?;
        for (name, t) in entries {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            t.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("truncated checkpoint".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let hlen = read_u64(r)? as usize;
        if hlen > 1 << 26 {
            return Err(Error::Format("corrupt checkpoint header length".into()));
        }
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf)
            .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&hbuf).map_err(|e| Error::Format(format!("corrupt checkpoint header: {e}")))?;
        let count = read_u64(r)?;
        let mut params = ParamStore::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for _ in 0..count {
            let nlen = read_u64(r)? as usize;
            if nlen > 4096 {
                return Err(Error::Format("corrupt tensor name length".into()));
            }
            let mut nbuf = vec![0u8; nlen];
            r.read_exact(&mut nbuf)
                .map_err(|_| Error::Format("truncated tensor name".into()))?;
            let name = String::from_utf8(nbuf).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let t = Tensor::read_from(r).map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
            match name.split_once('/') {
                Some(("param", k)) => params.insert(k, t),
                Some(("adam_m", k)) => {
                    m.insert(k.to_string(), t);
                }
                Some(("adam_v", k)) => {
                    v.insert(k.to_string(), t);
                }
                _ => return Err(Error::Format(format!("unknown checkpoint entry `{name}`"))),
            }
        }
        let adam = AdamState {
            step: header.adam_step,
            m,
            v,
            nonfinite_skips: header.adam_nonfinite,
        };
        Ok(Checkpoint { header, params, adam })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        self.write_to(&mut b).expect("in-memory write");
        b
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(Error::at_path(path))?);
        self.write_to(&mut w)?;
        w.flush().map_err(Error::at_path(path))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path).map_err(Error::at_path(path))?);
        Checkpoint::read_from(&mut r)
    }

    /// Encoder weights for `cfg`, failing on the first tensor whose shape
    /// differs.
    pub fn encoder_params(&self, cfg: &TransformerConfig) -> Result<ParamStore> {
        let expected: BTreeMap<String, Vec<usize>> = cfg
            .param_shapes()
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENCODER_PREFIX))
            .collect();
        let enc = self.params.subset(ENCODER_PREFIX);
        enc.validate_shapes(&expected)?;
        Ok(enc)
    }

    /// Encoder config and weights stored in a pretraining checkpoint.
    pub fn pretrained_encoder(&self) -> Result<(TransformerConfig, ParamStore)> {
        let cfg = self
            .header
            .encoder
            .clone()
            .ok_or_else(|| Error::Format("checkpoint carries no encoder".into()))?;
        let p = self.encoder_params(&cfg)?;
        Ok((cfg, p))
    }
}

/// One JSON-lines training log record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u64>,
    pub lr: BTreeMap<String, f64>,
    pub loss: f64,
    pub utterances: usize,
    pub counters: Counters,
    pub wall_time: f64,
}

/// Optional on-disk outputs of a training run.
#[derive(Debug, Default)]
pub struct RunSink {
    dir: Option<PathBuf>,
    log: Option<BufWriter<File>>,
    checkpoint_every: u64,
}

impl RunSink {
    pub fn none() -> Self {
        RunSink::default()
    }

    /// Log and checkpoints under `dir`; the first log line holds `config`.
    pub fn in_dir(dir: impl Into<PathBuf>, checkpoint_every: u64, config: &impl Serialize) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(Error::at_path(&dir))?;
        let path = dir.join("train_log.jsonl");
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(Error::at_path(&path))?;
        let mut log = BufWriter::new(file);
        writeln!(log, "{}", serde_json::json!({ "header": config }))?;
        Ok(RunSink {
            dir: Some(dir),
            log: Some(log),
            checkpoint_every,
        })
    }

    fn record(&mut self, r: &StepRecord) -> Result<()> {
        if let Some(w) = &mut self.log {
            writeln!(w, "{}", serde_json::to_string(r)?)?;
        }
        Ok(())
    }

    fn maybe_checkpoint(&mut self, step: u64, done: bool, make: impl FnOnce() -> Checkpoint) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let periodic = self.checkpoint_every > 0 && step % self.checkpoint_every == 0;
        if periodic || done {
            let ck = make();
            if periodic {
                ck.save(dir.join(format!("ckpt_{step:08}.bin")))?;
            }
            if done {
                ck.save(dir.join("final.bin"))?;
            }
        }
        if let Some(w) = &mut self.log {
            w.flush()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub seed: u64,
    pub encoder: TransformerConfig,
    pub steps: u64,
    pub batch_size: usize,
    /// Random window of at most this many frames per utterance.
    pub crop_frames: Option<usize>,
    pub peak_lr: f64,
    pub warmup_frac: f64,
    pub alteration: AlterationConfig,
    pub checkpoint_every: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            seed: 0,
            encoder: TransformerConfig::tr_tiny(),
            steps: 200_000,
            batch_size: 36,
            crop_frames: None,
            peak_lr: 2e-4,
            warmup_frac: 0.07,
            alteration: AlterationConfig::default(),
            checkpoint_every: 0,
        }
    }
}

impl PretrainConfig {
    pub fn schedule(&self) -> Schedule {
        Schedule::WarmupLinear {
            peak: self.peak_lr,
            total_steps: self.steps,
            warmup_frac: self.warmup_frac,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        self.alteration.validate(self.encoder.input_dim)?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.crop_frames.is_some_and(|c| c < self.alteration.block_len) {
            return Err(Error::Config("crop_frames shorter than the alteration block".into()));
        }
        Ok(())
    }
}

/// Masked-reconstruction pretraining state.
#[derive(Clone, Debug)]
pub struct Pretrainer {
    pub config: PretrainConfig,
    pub params: ParamStore,
    pub adam: AdamState,
    pub step: u64,
    pub counters: Counters,
    pub history: Vec<StepRecord>,
}

impl Pretrainer {
    pub fn new(config: PretrainConfig) -> Result<Self> {
        config.validate()?;
        let params = config.encoder.init_params(config.seed);
        let adam = AdamState::new(&params, |_| true);
        Ok(Pretrainer {
            config,
            params,
            adam,
            step: 0,
            counters: Counters::default(),
            history: Vec::new(),
        })
    }

    pub fn from_checkpoint(config: PretrainConfig, ck: Checkpoint) -> Result<Self> {
        config.validate()?;
        if ck.header.kind != CheckpointKind::Pretrain {
            return Err(Error::Format("not a pretraining checkpoint".into()));
        }
        ck.params.validate_shapes(&config.encoder.param_shapes())?;
        Ok(Pretrainer {
            config,
            params: ck.params,
            adam: ck.adam,
            step: ck.header.step,
            counters: ck.header.counters,
            history: Vec::new(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                kind: CheckpointKind::Pretrain,
                step: self.step,
                seed: self.config.seed,
                encoder: Some(self.config.encoder.clone()),
                tdnnf: None,
                mode: None,
                subsampling: 0,
                counters: self.counters,
                adam_step: self.adam.step,
                adam_nonfinite: self.adam.nonfinite_skips,
                config: serde_json::to_value(&self.config).expect("config serializes"),
            },
            params: self.params.clone(),
            adam: self.adam.clone(),
        }
    }

    /// Reconstruction loss of one utterance (no update), with the same
    /// alteration draw a training step would make from `rng`.
    pub fn utterance_loss<R: Rng>(
        &self,
        feats: &FeatureMatrix,
        rng: &mut R,
        dropout: Option<&mut Dropout>,
        tape: &mut Tape,
    ) -> Result<(crate::numerics::Var, crate::nnet::Binding)> {
        let cfg = &self.config;
        let x = match cfg.crop_frames {
            Some(c) if feats.frames() > c => {
                let start = rng.random_range(0..=feats.frames() - c);
                feats.slice_frames(start, c)
            }
            _ => feats.clone(),
        };
        let outcome = make_training_pair(&x, &cfg.alteration, rng)?;
        let bind = self.params.bind(tape, |_| true);
        let input = tape.constant(outcome.corrupted.to_tensor());
        let enc = transformer_forward(&cfg.encoder, tape, &bind, input, dropout)?;
        let pred = reconstruction_head(tape, &bind, enc.hidden)?;
        Ok((l1_reconstruction_loss(tape, pred, &outcome)?, bind))
    }

    /// Mean reconstruction loss over `data` with step-0 style draws and no
    /// dropout; used to measure progress.
    pub fn evaluate(&self, data: &[FeatureMatrix], seed: u64) -> Result<f64> {
        let mut rng = stream_rng(seed, u64::MAX);
        let mut total = 0.0;
        let mut n = 0;
        for x in data {
            if x.frames() < self.config.alteration.block_len {
                continue;
            }
            let mut tape = Tape::new();
            let (l, _) = self.utterance_loss(x, &mut rng, None, &mut tape)?;
            total += tape.value(l).data()[0];
            n += 1;
        }
        if n == 0 {
            return Err(Error::TooShort("no utterance long enough to evaluate".into()));
        }
        Ok(total / n as f64)
    }

    pub fn train_step(&mut self, data: &[FeatureMatrix]) -> Result<StepRecord> {
        if data.is_empty() {
            return Err(Error::contract("empty pretraining corpus"));
        }
        let timer = Instant::now();
        let cfg = self.config.clone();
        let mut rng = stream_rng(cfg.seed, self.step);
        let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut loss = 0.0;
        let mut used = 0;
        for b in 0..cfg.batch_size {
            let x = &data[rng.random_range(0..data.len())];
            if x.frames() < cfg.alteration.block_len {
                self.counters.skipped_short += 1;
                continue;
            }
            let mut dropout = Dropout::new(cfg.encoder.dropout_prob, mix(cfg.seed, self.step, b as u64));
            let mut tape = Tape::new();
            let (l, bind) = self.utterance_loss(x, &mut rng, Some(&mut dropout), &mut tape)?;
            tape.backward(l)?;
            loss += tape.value(l).data()[0];
            used += 1;
            accumulate(&mut grads, bind.grads(&tape));
        }
        let lr = cfg.schedule().lr_at(self.step);
        if used > 0 {
            scale_grads(&mut grads, 1.0 / used as f64);
            if !self.adam.update(&mut self.params, &grads, |_| lr)? {
                self.counters.nonfinite += 1;
            }
        }
        let rec = StepRecord {
            step: self.step,
            epoch: None,
            lr: BTreeMap::from([("encoder".to_string(), lr)]),
            loss: if used > 0 { loss / used as f64 } else { f64::NAN },
            utterances: used,
            counters: self.counters,
            wall_time: timer.elapsed().as_secs_f64(),
        };
        self.step += 1;
        Ok(rec)
    }

    /// Trains until `until` steps (capped at the configured total).
    pub fn run(&mut self, data: &[FeatureMatrix], until: u64, sink: &mut RunSink) -> Result<()> {
        let until = until.min(self.config.steps);
        while self.step < until {
            let rec = self.train_step(data)?;
            sink.record(&rec)?;
            self.history.push(rec);
            let done = self.step == until;
            sink.maybe_checkpoint(self.step, done, || self.checkpoint())?;
        }
        if self.adam.nonfinite_skips > self.step / 10 + 1 {
            return Err(Error::Training(format!(
                "{} of {} updates had non-finite gradients",
                self.adam.nonfinite_skips, self.step
            )));
        }
        Ok(())
    }
}

fn mix(seed: u64, step: u64, k: u64) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [step, k] {
        h = (h ^ v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

fn accumulate(into: &mut BTreeMap<String, Tensor>, from: BTreeMap<String, Tensor>) {
    for (k, g) in from {
        match into.get_mut(&k) {
            Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
            None => {
                into.insert(k, g);
            }
        }
    }
}

fn scale_grads(grads: &mut BTreeMap<String, Tensor>, c: f64) {
    for g in grads.values_mut() {
        g.data_mut().iter_mut().for_each(|v| *v *= c);
    }
}

fn clip_grads(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) {
    let norm = grads.values().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        scale_grads(grads, max_norm / norm);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    Lfmmi,
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub seed: u64,
    pub mode: TrainMode,
    pub criterion: Criterion,
    pub tdnnf: TdnnfConfig,
    pub subsampling: usize,
    pub epochs: u64,
    pub batch_size: usize,
    pub head_lr_start: f64,
    pub head_lr_end: f64,
    pub lr_power: f64,
    /// Initial encoder rate; it decays by the same ratio as the head rate.
    pub encoder_lr: f64,
    pub bigram_smoothing: f64,
    /// Weight numerator unit entries with the phone LM.
    pub lm_weighted_numerator: bool,
    pub optional_silence: Option<f64>,
    pub max_skip_frac: f64,
    pub constrain_every: u64,
    pub grad_clip: Option<f64>,
    pub checkpoint_every: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            seed: 0,
            mode: TrainMode::FineTune,
            criterion: Criterion::Lfmmi,
            tdnnf: TdnnfConfig::tiny(),
            subsampling: 1,
            epochs: 15,
            batch_size: 32,
            head_lr_start: 1e-3,
            head_lr_end: 3e-5,
            lr_power: 1.0,
            encoder_lr: 3e-5,
            bigram_smoothing: 1.0,
            lm_weighted_numerator: false,
            optional_silence: None,
            max_skip_frac: 0.1,
            constrain_every: 4,
            grad_clip: None,
            checkpoint_every: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn steps_per_epoch(&self, n_utts: usize) -> u64 {
        n_utts.div_ceil(self.batch_size.max(1)) as u64
    }

    pub fn head_schedule(&self, n_utts: usize) -> Schedule {
        Schedule::Polynomial {
            start: self.head_lr_start,
            end: self.head_lr_end,
            total_steps: (self.epochs * self.steps_per_epoch(n_utts)).max(1),
            power: self.lr_power,
        }
    }

    pub fn encoder_schedule(&self, n_utts: usize) -> Schedule {
        self.head_schedule(n_utts).scaled(self.encoder_lr / self.head_lr_start)
    }

    pub fn validate(&self) -> Result<()> {
        self.head_schedule(1).validate()?;
        if self.batch_size == 0 || self.epochs == 0 || self.subsampling == 0 {
            return Err(Error::Config("batch_size, epochs and subsampling must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.max_skip_frac) {
            return Err(Error::Config("max_skip_frac must lie in [0, 1]".into()));
        }
        if self.encoder_lr <= 0.0 {
            return Err(Error::Config("encoder_lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledUtt {
    pub id: String,
    pub features: FeatureMatrix,
    pub transcript: Vec<usize>,
    /// Per-frame pdf ids at the input frame rate.
    pub alignment: Option<Vec<usize>>,
}

impl LabeledUtt {
    pub fn from_synth(u: &crate::recognize::SynthUtterance, topo: &Topology) -> Result<Self> {
        Ok(LabeledUtt {
            id: u.id.clone(),
            features: u.features.clone(),
            transcript: u.transcript.clone(),
            alignment: Some(topo.alignment_pdfs(&u.segments)?),
        })
    }
}

/// Labeled utterances listed in a manifest.
pub fn load_labeled(manifest: impl AsRef<Path>) -> Result<Vec<LabeledUtt>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let transcript = e
                .transcript
                .ok_or_else(|| Error::Format(format!("utterance {} has no transcript", e.utt_id)))?;
            let features = FeatureMatrix::load(&e.feature_path)?;
            let alignment = e.alignment_path.map(read_alignment).transpose()?;
            Ok(LabeledUtt {
                id: e.utt_id,
                features,
                transcript,
                alignment,
            })
        })
        .collect()
}

pub fn load_unlabeled(manifest: impl AsRef<Path>) -> Result<Vec<FeatureMatrix>> {
    read_manifest(manifest)?
        .iter()
        .map(|e| FeatureMatrix::load(&e.feature_path))
        .collect()
}

/// Topology and denominator graph shared by every utterance of a task.
#[derive(Clone, Debug)]
pub struct SupervisedTask {
    pub phones: PhoneSet,
    pub topo: Topology,
    pub lm: PhoneBigram,
    pub den: Fst,
}

impl SupervisedTask {
    /// Full biphones over `phones`; the bigram is estimated on `transcripts`.
    pub fn new(phones: PhoneSet, transcripts: &[Vec<usize>], smoothing: f64) -> Result<Self> {
        let topo = Topology::full(&phones);
        let lm = estimate_phone_bigram(transcripts, phones.len(), smoothing)?;
        let den = build_denominator(&lm, &topo)?;
        den.check_connected()?;
        Ok(SupervisedTask { phones, topo, lm, den })
    }
}

/// Supervised adaptation state.
#[derive(Clone, Debug)]
pub struct Finetuner {
    pub config: FinetuneConfig,
    pub task: SupervisedTask,
    pub model: AcousticModel,
    pub adam: AdamState,
    pub step: u64,
    pub counters: Counters,
    pub history: Vec<StepRecord>,
    numerators: Vec<Option<Fst>>,
    encoded: Option<Vec<FeatureMatrix>>,
}

impl Finetuner {
    pub fn new(
        config: FinetuneConfig,
        task: SupervisedTask,
        pretrained: Option<(TransformerConfig, ParamStore)>,
    ) -> Result<Self> {
        config.validate()?;
        let model = AcousticModel::assemble(
            config.mode,
            pretrained,
            config.tdnnf.clone(),
            task.topo.num_pdfs(),
            config.subsampling,
            config.seed,
        )?;
        let adam = AdamState::new(&model.params, |k| model.is_trainable(k));
        Ok(Finetuner {
            config,
            task,
            model,
            adam,
            step: 0,
            counters: Counters::default(),
            history: Vec::new(),
            numerators: Vec::new(),
            encoded: None,
        })
    }

    pub fn from_checkpoint(config: FinetuneConfig, task: SupervisedTask, ck: Checkpoint) -> Result<Self> {
        config.validate()?;
        let h = &ck.header;
        if h.kind != CheckpointKind::Finetune {
            return Err(Error::Format("not a fine-tuning checkpoint".into()));
        }
        let mode = h.mode.ok_or_else(|| Error::Format("checkpoint has no training mode".into()))?;
        let tdnnf = h.tdnnf.clone().ok_or_else(|| Error::Format("checkpoint has no TDNNF config".into()))?;
        let model = AcousticModel {
            mode,
            encoder: h.encoder.clone(),
            tdnnf,
            subsampling: h.subsampling.max(1),
            params: ck.params,
        };
        model.params.validate_shapes(&model.expected_shapes())?;
        if model.tdnnf.output_dim != task.topo.num_pdfs() {
            return Err(Error::Config(format!(
                "checkpoint predicts {} pdfs, task has {}",
                model.tdnnf.output_dim,
                task.topo.num_pdfs()
            )));
        }
        Ok(Finetuner {
            config,
            task,
            model,
            adam: ck.adam,
            step: h.step,
            counters: h.counters,
            history: Vec::new(),
            numerators: Vec::new(),
            encoded: None,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                kind: CheckpointKind::Finetune,
                step: self.step,
                seed: self.config.seed,
                encoder: self.model.encoder.clone(),
                tdnnf: Some(self.model.tdnnf.clone()),
                mode: Some(self.model.mode),
                subsampling: self.model.subsampling,
                counters: self.counters,
                adam_step: self.adam.step,
                adam_nonfinite: self.adam.nonfinite_skips,
                config: serde_json::to_value(&self.config).expect("config serializes"),
            },
            params: self.model.params.clone(),
            adam: self.adam.clone(),
        }
    }

    pub fn total_steps(&self, n_utts: usize) -> u64 {
        self.config.epochs * self.config.steps_per_epoch(n_utts)
    }

    fn prepare(&mut self, data: &[LabeledUtt]) -> Result<()> {
        if self.numerators.len() != data.len() {
            let opts = NumeratorOptions {
                optional_silence: self.config.optional_silence,
                lm: self.config.lm_weighted_numerator.then_some(&self.task.lm),
            };
            let sub = self.model.subsampling;
            self.numerators = data
                .iter()
                .map(|u| {
                    let frames = u.features.frames().div_ceil(sub);
                    match compile_numerator_with(&u.transcript, &self.task.topo, frames, &opts) {
                        Ok(f) => Ok(Some(f)),
                        Err(Error::TooShort(msg)) => {
                            log::warn!("{}: {msg}", u.id);
                            Ok(None)
                        }
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<_>>()?;
        }
        if self.model.mode == TrainMode::FrozenExtractor && self.encoded.is_none() {
            self.encoded = Some(data.iter().map(|u| self.model.encode(&u.features)).collect::<Result<_>>()?);
        }
        Ok(())
    }

    pub fn train_step(&mut self, data: &[LabeledUtt]) -> Result<StepRecord> {
        if data.is_empty() {
            return Err(Error::contract("empty supervised corpus"));
        }
        self.prepare(data)?;
        let timer = Instant::now();
        let n = data.len();
        let per_epoch = self.config.steps_per_epoch(n);
        let epoch = self.step / per_epoch;
        let pos = (self.step % per_epoch) as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(self.config.seed, (1 << 40) | epoch));
        let bs = self.config.batch_size;
        let batch = &order[pos * bs..((pos + 1) * bs).min(n)];

        let head = self.config.head_schedule(n);
        let enc = self.config.encoder_schedule(n);
        let (lr_head, lr_enc) = (head.lr_at(self.step), enc.lr_at(self.step));

        let mut grads = BTreeMap::new();
        let mut loss = 0.0;
        let mut used = 0;
        for &i in batch {
            let u = &data[i];
            let mut tape = Tape::new();
            let bind = self.model.bind(&mut tape);
            let logits = match &self.encoded {
                Some(cache) => {
                    let h = tape.constant(cache[i].to_tensor());
                    self.model.head_forward(&mut tape, &bind, h)
                }
                None => self.model.forward(&mut tape, &bind, &u.features),
            };
            let logits = match logits {
                Ok(l) => l,
                Err(Error::TooShort(msg)) => {
                    log::warn!("{}: {msg}; skipped", u.id);
                    self.counters.skipped_short += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let l = match self.config.criterion {
                Criterion::Lfmmi => {
                    let Some(num) = &self.numerators[i] else {
                        self.counters.skipped_empty += 1;
                        continue;
                    };
                    match lfmmi_loss(&mut tape, num, &self.task.den, logits, Some(&u.id)) {
                        Ok(out) => out.loss,
                        Err(Error::EmptyComposition { .. }) => {
                            log::warn!("{}: empty numerator composition; skipped", u.id);
                            self.counters.skipped_empty += 1;
                            continue;
                        }
                        Err(e) => return Err(e),
                    }
                }
                Criterion::CrossEntropy => {
                    let ali = u
                        .alignment
                        .as_ref()
                        .ok_or_else(|| Error::Config(format!("{}: cross-entropy needs an alignment", u.id)))?;
                    let sub = self.model.subsampling;
                    let ali: Vec<usize> = ali.iter().step_by(sub).copied().collect();
                    cross_entropy_loss(&mut tape, logits, &ali)?.0
                }
            };
            tape.backward(l)?;
            loss += tape.value(l).data()[0];
            used += 1;
            accumulate(&mut grads, bind.grads(&tape));
        }
        if used > 0 {
            scale_grads(&mut grads, 1.0 / used as f64);
            if let Some(c) = self.config.grad_clip {
                clip_grads(&mut grads, c);
            }
            let ok = self.adam.update(&mut self.model.params, &grads, |k| {
                if k.starts_with(ENCODER_PREFIX) {
                    lr_enc
                } else {
                    lr_head
                }
            })?;
            if !ok {
                self.counters.nonfinite += 1;
            }
        }
        self.step += 1;
        if self.config.constrain_every > 0 && self.step % self.config.constrain_every == 0 {
            self.model.constrain()?;
        }
        let mut lr = BTreeMap::from([("head".to_string(), lr_head)]);
        if self.model.mode == TrainMode::FineTune {
            lr.insert("encoder".to_string(), lr_enc);
        }
        Ok(StepRecord {
            step: self.step - 1,
            epoch: Some(epoch),
            lr,
            loss: if used > 0 { loss / used as f64 } else { f64::NAN },
            utterances: used,
            counters: self.counters,
            wall_time: timer.elapsed().as_secs_f64(),
        })
    }

    /// Trains until `until` steps (capped at the configured total). Aborts
    /// when more than `max_skip_frac` of the utterances seen were skipped.
    pub fn run(&mut self, data: &[LabeledUtt], until: u64, sink: &mut RunSink) -> Result<()> {
        let until = until.min(self.total_steps(data.len()));
        let per_epoch = self.config.steps_per_epoch(data.len());
        while self.step < until {
            let rec = self.train_step(data)?;
            sink.record(&rec)?;
            self.history.push(rec);
            if self.step % per_epoch == 0 {
                let seen = (self.step / per_epoch) as f64 * data.len() as f64;
                let skipped = self.counters.skipped_empty as f64;
                if skipped > self.config.max_skip_frac * seen {
                    return Err(Error::Training(format!(
                        "{skipped} of {seen} utterances skipped (empty numerator); check transcripts \
                         against utterance lengths and the subsampling factor"
                    )));
                }
                log::info!(
                    "epoch {} done: loss {:.4}, counters {:?}",
                    self.step / per_epoch,
                    self.history.last().map_or(f64::NAN, |r| r.loss),
                    self.counters
                );
            }
            let done = self.step == until;
            sink.maybe_checkpoint(self.step, done, || self.checkpoint())?;
        }
        if self.adam.nonfinite_skips > self.step / 10 + 1 {
            return Err(Error::Training(format!(
                "{} of {} updates had non-finite gradients",
                self.adam.nonfinite_skips, self.step
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, data: &[LabeledUtt]) -> Result<PerReport> {
        evaluate(&self.model, &self.task, self.config.criterion, data)
    }
}

/// Decodes `data` over the task's denominator graph and scores it.
/// Cross-entropy models are decoded from log-posteriors.
pub fn evaluate(model: &AcousticModel, task: &SupervisedTask, criterion: Criterion, data: &[LabeledUtt]) -> Result<PerReport> {
    let mut refs = Vec::with_capacity(data.len());
    let mut hyps = Vec::with_capacity(data.len());
    let mut ids = Vec::with_capacity(data.len());
    for u in data {
        let mut logits = model.infer(&u.features)?;
        if criterion == Criterion::CrossEntropy {
            log_softmax_rows(&mut logits);
        }
        let h = decode(&task.den, &task.topo, &logits)?;
        refs.push(u.transcript.clone());
        hyps.push(h.phones);
        ids.push(u.id.clone());
    }
    phone_error_rate(&refs, &hyps, Some(&ids))
}

pub(crate) fn log_softmax_rows(x: &mut Tensor) {
    let d = x.cols();
    for row in x.data_mut().chunks_mut(d) {
        let lse = crate::numerics::lse_unchecked(row.iter().copied());
        row.iter_mut().for_each(|v| *v -= lse);
    }
}
