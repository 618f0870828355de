//! Command-line driver: JSON job files with dotted overrides, one run
//! directory per invocation, and the multi-seed comparison experiment.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::features::{augment, compute_fbank, FbankConfig, FeatureMatrix, Waveform};
use crate::graphs::{build_denominator, PhoneBigram, PhoneSet, Topology};
use crate::train::log_softmax_rows;
use crate::nnet::TrainMode;
use crate::recognize::{
    decode, phone_error_rate, read_manifest, write_corpus, write_manifest, ManifestEntry, PerReport, SynthSource,
    SynthSpec,
};
use crate::train::{
    evaluate, load_labeled, load_unlabeled, Checkpoint, CheckpointKind, Criterion, FinetuneConfig, Finetuner,
    LabeledUtt, PretrainConfig, Pretrainer, RunSink, SupervisedTask,
};
use crate::{Error, Result};

/// Environment variable naming the directory that holds run directories.
pub const RUN_ROOT_ENV: &str = "MAMCHAIN_RUN_ROOT";

#[derive(Debug, Parser)]
#[command(name = "mamchain", version, about = "Masked acoustic pretraining and LFMMI phone recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct JobArgs {
    /// JSON job file.
    #[arg(long)]
    pub config: PathBuf,
    /// Dotted `key=value` override; the value is parsed as JSON when possible.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Exact output directory instead of a fresh one under the run root.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Log-mel features (optionally speed/volume augmented) for WAV files.
    Fbank(JobArgs),
    /// Synthetic corpus: unlabeled, train and test manifests.
    Synth(JobArgs),
    /// Masked-reconstruction pretraining.
    Pretrain(JobArgs),
    /// Supervised training with LFMMI or cross-entropy.
    Finetune(JobArgs),
    /// Viterbi phone decoding of a manifest.
    Decode(JobArgs),
    /// Phone error rate of hypotheses against a labeled manifest.
    Score(JobArgs),
    /// Scratch / frozen / fine-tune / cross-entropy comparison over seeds.
    Experiment(JobArgs),
    /// Print a checkpoint's header and size.
    Inspect { checkpoint: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbankJob {
    pub fbank: FbankConfig,
    pub inputs: Vec<PathBuf>,
    /// Add speed (0.9/1.0/1.1) and volume perturbed copies.
    pub augment: bool,
    pub seed: u64,
}

impl Default for FbankJob {
    fn default() -> Self {
        FbankJob {
            fbank: FbankConfig::default(),
            inputs: Vec::new(),
            augment: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthJob {
    pub spec: SynthSpec,
    pub unlabeled: usize,
    pub train: usize,
    pub test: usize,
}

impl Default for SynthJob {
    fn default() -> Self {
        SynthJob {
            spec: SynthSpec::default(),
            unlabeled: 2000,
            train: 200,
            test: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainJob {
    pub manifest: PathBuf,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneJob {
    pub train_manifest: PathBuf,
    #[serde(default)]
    pub test_manifest: Option<PathBuf>,
    /// Synthetic phone inventory size (silence plus `num_phones - 1`).
    pub num_phones: usize,
    #[serde(default)]
    pub pretrained: Option<PathBuf>,
    #[serde(default)]
    pub finetune: FinetuneConfig,
    #[serde(default)]
    pub resume: Option<PathBuf>,
}

/// Phone inventory and LM a fine-tuned model was trained against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskFile {
    pub phones: PhoneSet,
    pub lm: PhoneBigram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeJob {
    pub checkpoint: PathBuf,
    pub task: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreJob {
    pub reference: PathBuf,
    pub hypotheses: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypLine {
    pub utt_id: String,
    pub phones: Vec<usize>,
    pub log_score: f64,
}

/// Applies `a.b.c=value` to a JSON object tree, creating objects on the way.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("empty key segment in `{key}`")));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields one segment")
}

/// Reads a job file, applies overrides, and returns the typed job with its
/// fully materialized JSON.
pub fn resolve_job<T: DeserializeOwned + Serialize>(path: &Path, overrides: &[String]) -> Result<(T, Value)> {
    let text = fs::read_to_string(path).map_err(Error::at_path(path))?;
    let raw: Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    // Overrides land on the defaults-filled tree when the file parses on its
    // own, so a partial nested override keeps the sibling defaults.
    let mut v = match serde_json::from_value::<T>(raw.clone()) {
        Ok(job) => serde_json::to_value(&job)?,
        Err(_) => raw,
    };
    for o in overrides {
        apply_override(&mut v, o)?;
    }
    let job: T = serde_json::from_value(v).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let resolved = serde_json::to_value(&job)?;
    Ok((job, resolved))
}

/// First 12 hex digits of SHA-256 over the compact resolved JSON.
pub fn config_hash(resolved: &Value) -> String {
    let digest = Sha256::digest(resolved.to_string().as_bytes());
    hex::encode(digest)[..12].to_string()
}

/// `<root>/<command>-<hash>-<unix seconds>`, root from [`RUN_ROOT_ENV`] or
/// `runs`. Writes `config.resolved.json` into it.
pub fn make_run_dir(command: &str, resolved: &Value, explicit: Option<&Path>) -> Result<PathBuf> {
    let dir = match explicit {
        Some(d) => d.to_path_buf(),
        None => {
            let root = std::env::var_os(RUN_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            let mut dir = root.join(format!("{command}-{}-{secs}", config_hash(resolved)));
            let mut k = 1;
            while dir.exists() {
                dir = root.join(format!("{command}-{}-{secs}.{k}", config_hash(resolved)));
                k += 1;
            }
            dir
        }
    };
    fs::create_dir_all(&dir).map_err(Error::at_path(&dir))?;
    let snap = dir.join("config.resolved.json");
    fs::write(&snap, serde_json::to_string_pretty(resolved)?).map_err(Error::at_path(&snap))?;
    Ok(dir)
}

/// Process exit code for an error: 2 config, 3 data, 4 training anomaly.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) => 2,
        Error::Training(_) | Error::NonFinite(_) => 4,
        _ => 3,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match exit_code(e) {
        2 => "config",
        4 => "training",
        _ => "data",
    }
}

/// Parses `args`, runs the command, and returns the exit code. Errors are
/// printed to stderr as one JSON object.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let msg = serde_json::json!({ "error": error_kind(&e), "message": e.to_string() });
            eprintln!("{msg}");
            exit_code(&e)
        }
    }
}

pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Fbank(a) => {
            let (job, v) = resolve_job::<FbankJob>(&a.config, &a.overrides)?;
            let dir = make_run_dir("fbank", &v, a.run_dir.as_deref())?;
            run_fbank(&job, &dir)
        }
        Command::Synth(a) => {
            let (job, v) = resolve_job::<SynthJob>(&a.config, &a.overrides)?;
            let dir = make_run_dir("synth", &v, a.run_dir.as_deref())?;
            run_synth(&job, &dir)
        }
        Command::Pretrain(a) => {
            let (job, v) = resolve_job::<PretrainJob>(&a.config, &a.overrides)?;
            let dir = make_run_dir("pretrain", &v, a.run_dir.as_deref())?;
            run_pretrain(&job, &dir)
        }
        Command::Finetune(a) => {
            let (job, v) = resolve_job::<FinetuneJob>(&a.config, &a.overrides)?;
            let dir = make_run_dir("finetune", &v, a.run_dir.as_deref())?;
            run_finetune(&job, &dir)
        }
        Command::Decode(a) => {
            let (job, v) = resolve_job::<DecodeJob>(&a.config, &a.overrides)?;
            let dir = make_run_dir("decode", &v, a.run_dir.as_deref())?;
            run_decode(&job, &dir)
        }
        Command::Score(a) => {
            let (job, v) = resolve_job::<ScoreJob>(&a.config, &a.overrides)?;
            let dir = make_run_dir("score", &v, a.run_dir.as_deref())?;
            let r = run_score(&job, &dir)?;
            println!("{}", serde_json::to_string(&r)?);
            Ok(())
        }
        Command::Experiment(a) => {
            let (job, v) = resolve_job::<ExperimentConfig>(&a.config, &a.overrides)?;
            let dir = make_run_dir("experiment", &v, a.run_dir.as_deref())?;
            let report = experiment_claim_table(&job, Some(&dir))?;
            print!("{}", report.render());
            if report.rows.iter().any(|r| r.error.is_some()) {
                return Err(Error::Training("one or more regimes failed to train".into()));
            }
            Ok(())
        }
        Command::Inspect { checkpoint } => {
            print!("{}", inspect(checkpoint)?);
            Ok(())
        }
    }
}

pub fn inspect(path: &Path) -> Result<String> {
    let ck = Checkpoint::load(path)?;
    let mut out = serde_json::to_string_pretty(&ck.header)?;
    out.push('\n');
    out += &format!(
        "parameters: {} tensors, {} values\nstep: {}\nchecksum: {}\n",
        ck.params.len(),
        ck.params.num_values(),
        ck.header.step,
        ck.params.checksum()
    );
    Ok(out)
}

pub fn run_fbank(job: &FbankJob, dir: &Path) -> Result<()> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(job.seed);
    let feats_dir = dir.join("feats");
    fs::create_dir_all(&feats_dir).map_err(Error::at_path(&feats_dir))?;
    let mut entries = Vec::new();
    for input in &job.inputs {
        let wave = Waveform::read_wav(input)?;
        let stem = input
            .file_stem()
            .map_or_else(|| "utt".to_string(), |s| s.to_string_lossy().into_owned());
        let variants = if job.augment {
            augment(&wave, &mut rng)?
        } else {
            vec![wave]
        };
        for (k, w) in variants.iter().enumerate() {
            let id = if job.augment { format!("{stem}-sp{k}") } else { stem.clone() };
            let f = compute_fbank(w, &job.fbank)?;
            let path = feats_dir.join(format!("{id}.feats"));
            f.save(&path)?;
            entries.push(ManifestEntry {
                utt_id: id,
                feature_path: path,
                n_frames: f.frames(),
                transcript: None,
                alignment_path: None,
            });
        }
    }
    write_manifest(dir.join("manifest.jsonl"), &entries)
}

pub fn run_synth(job: &SynthJob, dir: &Path) -> Result<()> {
    let src = SynthSource::new(&job.spec)?;
    let topo = Topology::full(&src.phones);
    for (name, n, stream, labeled) in [
        ("unlabeled", job.unlabeled, 0, false),
        ("train", job.train, 1, true),
        ("test", job.test, 2, true),
    ] {
        let utts = src.generate(n, stream, &format!("{name}-"));
        let entries = write_corpus(dir.join(name), &utts, &topo, labeled)?;
        write_manifest(dir.join(format!("{name}.jsonl")), &entries)?;
    }
    let phones = dir.join("phones.json");
    fs::write(&phones, serde_json::to_string_pretty(&src.phones)?).map_err(Error::at_path(&phones))?;
    Ok(())
}

pub fn run_pretrain(job: &PretrainJob, dir: &Path) -> Result<()> {
    let data = load_unlabeled(&job.manifest)?;
    let mut pt = match &job.resume {
        Some(p) => Pretrainer::from_checkpoint(job.pretrain.clone(), Checkpoint::load(p)?)?,
        None => Pretrainer::new(job.pretrain.clone())?,
    };
    let mut sink = RunSink::in_dir(dir, job.pretrain.checkpoint_every, &job.pretrain)?;
    pt.run(&data, job.pretrain.steps, &mut sink)?;
    log::info!("pretraining finished at step {}", pt.step);
    Ok(())
}

pub fn run_finetune(job: &FinetuneJob, dir: &Path) -> Result<()> {
    let train = load_labeled(&job.train_manifest)?;
    let phones = PhoneSet::synthetic(job.num_phones)?;
    let transcripts: Vec<Vec<usize>> = train.iter().map(|u| u.transcript.clone()).collect();
    let task = SupervisedTask::new(phones, &transcripts, job.finetune.bigram_smoothing)?;
    let task_path = dir.join("task.json");
    let tf = TaskFile {
        phones: task.phones.clone(),
        lm: task.lm.clone(),
    };
    fs::write(&task_path, serde_json::to_string(&tf)?).map_err(Error::at_path(&task_path))?;
    let mut ft = match &job.resume {
        Some(p) => Finetuner::from_checkpoint(job.finetune.clone(), task, Checkpoint::load(p)?)?,
        None => {
            let pre = match (&job.pretrained, job.finetune.mode) {
                (_, TrainMode::Scratch) => None,
                (Some(p), _) => Some(Checkpoint::load(p)?.pretrained_encoder()?),
                (None, m) => return Err(Error::Config(format!("mode {m:?} needs `pretrained`"))),
            };
            Finetuner::new(job.finetune.clone(), task, pre)?
        }
    };
    let mut sink = RunSink::in_dir(dir, job.finetune.checkpoint_every, &job.finetune)?;
    let total = ft.total_steps(train.len());
    ft.run(&train, total, &mut sink)?;
    if let Some(test) = &job.test_manifest {
        let test = load_labeled(test)?;
        ft.evaluate(&test)?.save(dir.join("score.json"))?;
    }
    Ok(())
}

pub fn run_decode(job: &DecodeJob, dir: &Path) -> Result<()> {
    let ck = Checkpoint::load(&job.checkpoint)?;
    if ck.header.kind != CheckpointKind::Finetune {
        return Err(Error::Format("decoding needs a fine-tuned checkpoint".into()));
    }
    let text = fs::read_to_string(&job.task).map_err(Error::at_path(&job.task))?;
    let tf: TaskFile = serde_json::from_str(&text)?;
    let topo = Topology::full(&tf.phones);
    let den = build_denominator(&tf.lm, &topo)?;
    let task = SupervisedTask {
        phones: tf.phones,
        topo,
        lm: tf.lm,
        den,
    };
    let cfg: FinetuneConfig = serde_json::from_value(ck.header.config.clone())?;
    let ft = Finetuner::from_checkpoint(cfg, task, ck)?;
    let path = dir.join("hyp.jsonl");
    let mut w = BufWriter::new(File::create(&path).map_err(Error::at_path(&path))?);
    for e in read_manifest(&job.manifest)? {
        let f = FeatureMatrix::load(&e.feature_path)?;
        let mut logits = ft.model.infer(&f)?;
        if ft.config.criterion == Criterion::CrossEntropy {
            log_softmax_rows(&mut logits);
        }
        let h = decode(&ft.task.den, &ft.task.topo, &logits)?;
        let line = HypLine {
            utt_id: e.utt_id,
            phones: h.phones,
            log_score: h.log_score,
        };
        writeln!(w, "{}", serde_json::to_string(&line)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_score(job: &ScoreJob, dir: &Path) -> Result<PerReport> {
    let refs = read_manifest(&job.reference)?;
    let text = fs::read_to_string(&job.hypotheses).map_err(Error::at_path(&job.hypotheses))?;
    let mut hyps = std::collections::HashMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let h: HypLine = serde_json::from_str(line).map_err(|e| Error::Format(format!("hypothesis line: {e}")))?;
        hyps.insert(h.utt_id, h.phones);
    }
    let mut r = Vec::new();
    let mut h = Vec::new();
    let mut ids = Vec::new();
    for e in refs {
        let hyp = hyps
            .remove(&e.utt_id)
            .ok_or_else(|| Error::Format(format!("no hypothesis for {}", e.utt_id)))?;
        r.push(
            e.transcript
                .ok_or_else(|| Error::Format(format!("{} has no reference transcript", e.utt_id)))?,
        );
        h.push(hyp);
        ids.push(e.utt_id);
    }
    let report = phone_error_rate(&r, &h, Some(&ids))?;
    report.save(dir.join("score.json"))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub synth: SynthSpec,
    pub unlabeled: usize,
    pub train: usize,
    pub test: usize,
    pub pretrain: PretrainConfig,
    /// Shared supervised settings; mode and criterion are set per regime.
    pub finetune: FinetuneConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: (0..5).collect(),
            synth: SynthSpec {
                min_phones: 10,
                max_phones: 30,
                ..Default::default()
            },
            unlabeled: 2000,
            train: 200,
            test: 200,
            pretrain: PretrainConfig {
                steps: 1000,
                batch_size: 4,
                crop_frames: Some(64),
                ..Default::default()
            },
            finetune: FinetuneConfig {
                epochs: 10,
                batch_size: 4,
                ..Default::default()
            },
        }
    }
}

/// The four compared regimes, in report order.
pub const REGIMES: [(&str, TrainMode, Criterion); 4] = [
    ("scratch", TrainMode::Scratch, Criterion::Lfmmi),
    ("frozen", TrainMode::FrozenExtractor, Criterion::Lfmmi),
    ("finetune", TrainMode::FineTune, Criterion::Lfmmi),
    ("finetune-ce", TrainMode::FineTune, Criterion::CrossEntropy),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub regime: String,
    pub seed: u64,
    pub per: Option<f64>,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub regime: String,
    pub mean_per: f64,
    pub std_per: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wins {
    pub better: String,
    pub worse: String,
    /// Seeds where `better` had strictly lower PER.
    pub wins: usize,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClaimReport {
    pub rows: Vec<RegimeRow>,
    pub pretrain_loss: Vec<(u64, f64, f64)>,
    pub summary: Vec<RegimeSummary>,
    pub wins: Vec<Wins>,
}

impl ClaimReport {
    pub fn per(&self, regime: &str, seed: u64) -> Option<f64> {
        self.rows.iter().find(|r| r.regime == regime && r.seed == seed).and_then(|r| r.per)
    }

    pub fn wins(&self, better: &str, worse: &str) -> Option<&Wins> {
        self.wins.iter().find(|w| w.better == better && w.worse == worse)
    }

    pub fn render(&self) -> String {
        let mut s = String::from("regime        mean PER   std    runs\n");
        for r in &self.summary {
            if r.runs == 0 {
                s += &format!("{:<13} {:>8} {:>6} {:>6}\n", r.regime, "-", "-", 0);
            } else {
                s += &format!("{:<13} {:>8.2} {:>6.2} {:>6}\n", r.regime, r.mean_per, r.std_per, r.runs);
            }
        }
        s += "\nper seed:\n";
        let mut seeds: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        seeds.dedup();
        for seed in seeds {
            s += &format!("  seed {seed}:");
            for (name, ..) in REGIMES {
                match self.per(name, seed) {
                    Some(p) => s += &format!(" {name}={p:.2}"),
                    None => s += &format!(" {name}=failed"),
                }
            }
            s.push('\n');
        }
        s += "\nwins:\n";
        for w in &self.wins {
            s += &format!("  {} < {}: {}/{}\n", w.better, w.worse, w.wins, w.seeds);
        }
        s
    }
}

/// Trains every regime for one seed: corpus, pretraining, then the four
/// supervised runs on the same labeled data.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<(Vec<RegimeRow>, (f64, f64))> {
    let spec = SynthSpec {
        seed,
        ..cfg.synth.clone()
    };
    let src = SynthSource::new(&spec)?;
    let topo = Topology::full(&src.phones);
    let unlabeled: Vec<_> = src.generate(cfg.unlabeled, 0, "u").into_iter().map(|u| u.features).collect();
    let label = |n, stream, p: &str| -> Result<Vec<LabeledUtt>> {
        src.generate(n, stream, p).iter().map(|u| LabeledUtt::from_synth(u, &topo)).collect()
    };
    let train = label(cfg.train, 1, "t")?;
    let test = label(cfg.test, 2, "e")?;

    let t0 = Instant::now();
    let mut pt = Pretrainer::new(PretrainConfig {
        seed,
        ..cfg.pretrain.clone()
    })?;
    let probe = &unlabeled[..unlabeled.len().min(50)];
    let before = pt.evaluate(probe, seed)?;
    let mut sink = match out {
        Some(d) => RunSink::in_dir(d.join(format!("seed{seed}/pretrain")), 0, &pt.config)?,
        None => RunSink::none(),
    };
    pt.run(&unlabeled, pt.config.steps, &mut sink)?;
    let after = pt.evaluate(probe, seed)?;
    log::info!(
        "seed {seed}: pretraining L1 {before:.4} -> {after:.4} in {:.1}s",
        t0.elapsed().as_secs_f64()
    );
    let encoder = pt.checkpoint().pretrained_encoder()?;

    let transcripts: Vec<Vec<usize>> = train.iter().map(|u| u.transcript.clone()).collect();
    let task = SupervisedTask::new(src.phones.clone(), &transcripts, cfg.finetune.bigram_smoothing)?;
    let mut rows = Vec::new();
    for (name, mode, criterion) in REGIMES {
        let t = Instant::now();
        let mut fcfg = FinetuneConfig {
            seed,
            mode,
            criterion,
            ..cfg.finetune.clone()
        };
        if mode == TrainMode::Scratch {
            fcfg.tdnnf.input_dim = spec.dim;
        }
        let result = (|| -> Result<PerReport> {
            let pre = (mode != TrainMode::Scratch).then(|| encoder.clone());
            let mut ft = Finetuner::new(fcfg.clone(), task.clone(), pre)?;
            let mut sink = match out {
                Some(d) => RunSink::in_dir(d.join(format!("seed{seed}/{name}")), 0, &fcfg)?,
                None => RunSink::none(),
            };
            ft.run(&train, ft.total_steps(train.len()), &mut sink)?;
            let report = evaluate(&ft.model, &task, criterion, &test)?;
            if let Some(d) = out {
                report.save(d.join(format!("seed{seed}/{name}/score.json")))?;
            }
            Ok(report)
        })();
        let seconds = t.elapsed().as_secs_f64();
        let row = match result {
            Ok(r) => RegimeRow {
                regime: name.to_string(),
                seed,
                per: Some(r.per),
                substitutions: r.substitutions,
                deletions: r.deletions,
                insertions: r.insertions,
                seconds,
                error: None,
            },
            Err(e) => {
                log::error!("seed {seed} regime {name} failed: {e}");
                RegimeRow {
                    regime: name.to_string(),
                    seed,
                    per: None,
                    substitutions: 0,
                    deletions: 0,
                    insertions: 0,
                    seconds,
                    error: Some(e.to_string()),
                }
            }
        };
        log::info!("seed {seed} {name}: PER {:?} in {seconds:.1}s", row.per);
        rows.push(row);
    }
    Ok((rows, (before, after)))
}

pub fn experiment_claim_table(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ClaimReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("experiment needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    let mut pretrain_loss = Vec::new();
    for &seed in &cfg.seeds {
        let (r, (a, b)) = run_seed(cfg, seed, out)?;
        rows.extend(r);
        pretrain_loss.push((seed, a, b));
    }
    let summary = REGIMES
        .iter()
        .map(|(name, ..)| {
            let v: Vec<f64> = rows.iter().filter(|r| r.regime == *name).filter_map(|r| r.per).collect();
            let n = v.len().max(1) as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            RegimeSummary {
                regime: name.to_string(),
                mean_per: mean,
                std_per: var.sqrt(),
                runs: v.len(),
            }
        })
        .collect();
    let pairs = [("finetune", "scratch"), ("finetune", "frozen"), ("finetune", "finetune-ce")];
    let wins = pairs
        .iter()
        .map(|&(a, b)| {
            let per = |name: &str, s: u64| rows.iter().find(|r| r.regime == name && r.seed == s).and_then(|r| r.per);
            let wins = cfg
                .seeds
                .iter()
                .filter(|&&s| matches!((per(a, s), per(b, s)), (Some(x), Some(y)) if x < y))
                .count();
            Wins {
                better: a.to_string(),
                worse: b.to_string(),
                wins,
                seeds: cfg.seeds.len(),
            }
        })
        .collect();
    let report = ClaimReport {
        rows,
        pretrain_loss,
        summary,
        wins,
    };
    if let Some(d) = out {
        let p = d.join("report.json");
        fs::write(&p, serde_json::to_string_pretty(&report)?).map_err(Error::at_path(&p))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_edit_nested_keys() {
        let mut v = serde_json::json!({ "a": { "b": 1 }, "c": "x" });
        apply_override(&mut v, "a.b=2.5").unwrap();
        apply_override(&mut v, "c=hello").unwrap();
        apply_override(&mut v, "d.e=[1,2]").unwrap();
        assert_eq!(v, serde_json::json!({ "a": { "b": 2.5 }, "c": "hello", "d": { "e": [1, 2] } }));
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "c.x=1").is_err());
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        fs::write(&p, r#"{"spec": {"noise_std": 0.1}, "train": 3}"#).unwrap();
        let (job, resolved) = resolve_job::<SynthJob>(&p, &[]).unwrap();
        assert_eq!(job.train, 3);
        assert_eq!(resolved["spec"]["num_phones"], 12);
        let (job, _) = resolve_job::<SynthJob>(&p, &["spec.seed=4".into()]).unwrap();
        assert_eq!((job.spec.seed, job.spec.noise_std), (4, 0.1));
        let err = resolve_job::<SynthJob>(&p, &["spec.nosie_std=0.2".into()]).unwrap_err();
        assert_eq!(exit_code(&err), 2);
        fs::write(&p, r#"{"trian": 3}"#).unwrap();
        assert!(matches!(resolve_job::<SynthJob>(&p, &[]), Err(Error::Config(_))));
    }

    #[test]
    fn run_dirs_embed_the_config_hash() {
        let v = serde_json::json!({ "x": 1 });
        let h = config_hash(&v);
        assert_eq!(h.len(), 12);
        assert_eq!(h, config_hash(&serde_json::json!({ "x": 1 })));
        assert_ne!(h, config_hash(&serde_json::json!({ "x": 2 })));
        let dir = tempfile::tempdir().unwrap();
        let d = make_run_dir("synth", &v, Some(&dir.path().join("r"))).unwrap();
        assert!(d.join("config.resolved.json").exists());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Format("x".into())), 3);
        assert_eq!(exit_code(&Error::Training("x".into())), 4);
        assert_eq!(run(["mamchain", "bogus"]), 2);
        assert_eq!(run(["mamchain", "inspect", "/nonexistent/ckpt.bin"]), 3);
    }
}
