//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints one `PASS`/`FAIL` line even when the run succeeds.
//!
//! `ACCEPTANCE_ONLY=1,4,9` restricts the run to the listed criteria.

use std::f64::consts::PI;
use std::time::Instant;

use mamchain::cli::{experiment_claim_table, ExperimentConfig};
use mamchain::features::{compute_fbank, hz_to_mel, resample_8k_to_16k, FbankConfig, FeatureMatrix, Waveform};
use mamchain::graphs::{
    build_denominator, compile_numerator, enumerate_paths, estimate_phone_bigram, Fst, PhoneSet, Topology,
};
use mamchain::lfmmi::{forward_log, lfmmi_loss, lfmmi_value, posteriors};
use mamchain::mam::{l1_reconstruction_loss, make_training_pair, AlterationConfig, BlockAction};
use mamchain::nnet::{
    reconstruction_head, transformer_forward, AcousticModel, Binding, TdnnfConfig, TrainMode, TransformerConfig,
};
use mamchain::numerics::{finite_diff_check, finite_diff_check_many, Probe, Tensor};
use mamchain::recognize::{viterbi, SynthSource, SynthSpec};
use mamchain::train::{
    Checkpoint, Criterion, FinetuneConfig, Finetuner, LabeledUtt, PretrainConfig, Pretrainer, RunSink, Schedule,
    SupervisedTask,
};
use mamchain::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn random_logits(rng: &mut ChaCha8Rng, frames: usize, pdfs: usize) -> Tensor {
    Tensor::from_fn(&[frames, pdfs], |_| rng.random_range(-3.0..3.0))
}

fn path_score(pdfs: &[usize], weight: f64, logits: &Tensor) -> f64 {
    weight + pdfs.iter().enumerate().map(|(t, &p)| logits.get2(t, p)).sum::<f64>()
}

fn c1_forward_oracle() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_z, mut worst_v) = (0.0f64, 0.0f64);
    let mut accepting = 0;
    for _ in 0..200 {
        let states = rng.random_range(2..=64);
        let num_pdfs = rng.random_range(2..=6);
        let max_out = if states > 16 { 2 } else { 3 };
        let fst = Fst::random(&mut rng, states, num_pdfs, max_out);
        let frames = rng.random_range(1..=10);
        let logits = random_logits(&mut rng, frames, num_pdfs);
        let paths = enumerate_paths(&fst, frames)?;
        let scores: Vec<f64> = paths.iter().map(|(p, w)| path_score(p, *w, &logits)).collect();
        match (forward_log(&fst, &logits), viterbi(&fst, &logits)) {
            (Ok((z, _)), Ok((v, best))) => {
                accepting += 1;
                let oracle = mamchain::numerics::log_sum_exp(&scores)?;
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                worst_z = worst_z.max((z - oracle).abs());
                worst_v = worst_v.max((v - max).abs());
                let on_path = paths
                    .iter()
                    .any(|(p, w)| *p == best && (path_score(p, *w, &logits) - v).abs() < 1e-10);
                if !on_path {
                    return outcome(false, "Viterbi path is not an accepting path with its score");
                }
            }
            (Err(Error::EmptyComposition { .. }), Err(_)) if paths.is_empty() => {}
            (a, b) => {
                return outcome(
                    false,
                    format!("disagreement with enumeration: forward {:?}, viterbi {:?}", a.err(), b.err()),
                )
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_z < 1e-8 && worst_v < 1e-10 && secs < 60.0,
        format!("{accepting}/200 accepting; max |dZ| {worst_z:.1e}, max |dV| {worst_v:.1e}, {secs:.1}s"),
    )
}

struct MmiInstance {
    num: Fst,
    den: Fst,
    logits: Tensor,
}

fn mmi_instances() -> Result<Vec<MmiInstance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut out = Vec::new();
    while out.len() < 50 {
        let p = rng.random_range(3..=5);
        let phones = PhoneSet::synthetic(p)?;
        let topo = Topology::full(&phones);
        let corpus: Vec<Vec<usize>> = (0..6)
            .map(|_| (0..rng.random_range(1..=4)).map(|_| rng.random_range(1..p)).collect())
            .collect();
        let lm = estimate_phone_bigram(&corpus, p, 1.0)?;
        let den = build_denominator(&lm, &topo)?;
        let len = rng.random_range(2..=4);
        let transcript: Vec<usize> = (0..len).map(|_| rng.random_range(0..p)).collect();
        let frames = rng.random_range(6..=10);
        let num = compile_numerator(&transcript, &topo, frames)?;
        let logits = random_logits(&mut rng, frames, topo.num_pdfs());
        out.push(MmiInstance { num, den, logits });
    }
    Ok(out)
}

fn c2_lfmmi_gradient(instances: &[MmiInstance]) -> Result<Outcome> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for inst in instances {
        let err = finite_diff_check(
            |tape, x| Ok(lfmmi_loss(tape, &inst.num, &inst.den, x, None)?.loss),
            &inst.logits,
            1e-5,
        )?;
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 120.0,
        format!("50 instances, max relative error {worst:.2e}, {secs:.1}s"),
    )
}

fn c3_posterior_sums(instances: &[MmiInstance]) -> Result<Outcome> {
    let mut worst = 0.0f64;
    for inst in instances {
        for fst in [&inst.num, &inst.den] {
            let (_, post) = posteriors(fst, &inst.logits)?;
            for s in post.frame_sums() {
                worst = worst.max((s - 1.0).abs());
            }
        }
        let (_, _, _, grad) = lfmmi_value(&inst.num, &inst.den, &inst.logits, None)?;
        for t in 0..grad.rows() {
            worst = worst.max(grad.row(t).iter().sum::<f64>().abs());
        }
    }
    outcome(worst < 1e-6, format!("max |sum gamma - 1| {worst:.1e} over numerators and denominators"))
}

fn model_fd(model: &AcousticModel, loss: &dyn Fn(&mut mamchain::numerics::Tape, mamchain::numerics::Var) -> Result<mamchain::numerics::Var>, feats: &FeatureMatrix, seed: u64) -> Result<f64> {
    let names: Vec<String> = model.params.names().cloned().collect();
    let inputs: Vec<Tensor> = names.iter().map(|n| model.params.get(n).unwrap().clone()).collect();
    finite_diff_check_many(
        |tape, vars| {
            let bind = Binding::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
            let y = model.forward(tape, &bind, feats)?;
            loss(tape, y)
        },
        &inputs,
        1e-5,
        Probe::Sample { per_tensor: 6, seed },
    )
}

fn c4_network_gradients() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let enc = TransformerConfig {
        dropout_prob: 0.0,
        ..TransformerConfig::tr_tiny()
    };
    let enc_params = enc.init_params(1);
    let frames = 12;
    let feats = FeatureMatrix::new(
        frames,
        80,
        (0..frames * 80).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;

    // Encoder plus reconstruction head under the pretraining objective.
    let outcome_pair = make_training_pair(&feats, &AlterationConfig::default(), &mut rng)?;
    let names: Vec<String> = enc_params.names().cloned().collect();
    let inputs: Vec<Tensor> = names.iter().map(|n| enc_params.get(n).unwrap().clone()).collect();
    let tr = finite_diff_check_many(
        |tape, vars| {
            let bind = Binding::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
            let x = tape.constant(outcome_pair.corrupted.to_tensor());
            let out = transformer_forward(&enc, tape, &bind, x, None)?;
            let pred = reconstruction_head(tape, &bind, out.hidden)?;
            l1_reconstruction_loss(tape, pred, &outcome_pair)
        },
        &inputs,
        1e-5,
        Probe::Sample { per_tensor: 6, seed: 1 },
    )?;

    // TDNNF alone and encoder + TDNNF under the LFMMI objective.
    let phones = PhoneSet::synthetic(3)?;
    let topo = Topology::full(&phones);
    let lm = estimate_phone_bigram(&[vec![1, 2], vec![2, 1]], 3, 1.0)?;
    let den = build_denominator(&lm, &topo)?;
    let num = compile_numerator(&[1, 2, 1], &topo, frames)?;
    let mmi = |tape: &mut mamchain::numerics::Tape, y| Ok(lfmmi_loss(tape, &num, &den, y, None)?.loss);
    let scratch = AcousticModel::assemble(TrainMode::Scratch, None, TdnnfConfig::tiny(), topo.num_pdfs(), 1, 2)?;
    let td = model_fd(&scratch, &mmi, &feats, 2)?;
    let full = AcousticModel::assemble(
        TrainMode::FineTune,
        Some((enc.clone(), enc_params.clone())),
        TdnnfConfig::tiny(),
        topo.num_pdfs(),
        1,
        3,
    )?;
    let both = model_fd(&full, &mmi, &feats, 3)?;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        tr.max(td).max(both) < 1e-4 && secs < 300.0,
        format!("Tr-tiny {tr:.1e}, TDNNF-tiny {td:.1e}, Tr-tiny+TDNNF-tiny {both:.1e}, {secs:.1}s"),
    )
}

fn c5_alteration_statistics() -> Result<Outcome> {
    let start = Instant::now();
    let src = SynthSource::new(&SynthSpec::default())?;
    let cfg = AlterationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let n = 10_000;
    let (mut masked, mut frames) = (0usize, 0usize);
    let mut actions = [0usize; 3];
    let mut widths = vec![0usize; cfg.max_freq_channels + 1];
    let mut noisy = 0usize;
    let (mut s1, mut s2, mut count) = (0.0f64, 0.0f64, 0usize);
    let mut utt_rng = ChaCha8Rng::seed_from_u64(506);
    for i in 0..n {
        let u = src.sample_utterance(&mut utt_rng, format!("u{i}"));
        let out = make_training_pair(&u.features, &cfg, &mut rng)?;
        masked += out.time_mask.iter().filter(|&&m| m).count();
        frames += out.time_mask.len();
        for b in &out.blocks {
            actions[match b.action {
                BlockAction::Zero => 0,
                BlockAction::Replace => 1,
                BlockAction::Keep => 2,
            }] += 1;
        }
        widths[out.freq_mask.iter().filter(|&&m| m).count()] += 1;
        if out.noise_applied {
            noisy += 1;
            for t in (0..out.clean.frames()).filter(|&t| !out.time_mask[t]) {
                for f in (0..out.clean.dim()).filter(|&f| !out.freq_mask[f]) {
                    let d = out.corrupted.get(t, f) - out.clean.get(t, f);
                    s1 += d;
                    s2 += d * d;
                    count += 1;
                }
            }
        }
    }
    let frac = masked as f64 / frames as f64;
    let blocks: usize = actions.iter().sum();
    let split: Vec<f64> = actions.iter().map(|&a| a as f64 / blocks as f64).collect();
    let expected = n as f64 / widths.len() as f64;
    let chi2: f64 = widths.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let p_value = 1.0 - ChiSquared::new((widths.len() - 1) as f64).unwrap().cdf(chi2);
    let rate = noisy as f64 / n as f64;
    let mean = s1 / count as f64;
    let var = s2 / count as f64 - mean * mean;
    let secs = start.elapsed().as_secs_f64();
    let pass = (0.13..=0.16).contains(&frac)
        && (split[0] - 0.8).abs() <= 0.02
        && (split[1] - 0.1).abs() <= 0.02
        && (split[2] - 0.1).abs() <= 0.02
        && p_value > 0.01
        && (rate - 0.15).abs() <= 0.01
        && (var - 0.2).abs() <= 0.01
        && secs < 60.0;
    outcome(
        pass,
        format!(
            "masked {frac:.4}; split {:.3}/{:.3}/{:.3}; width chi2 p {p_value:.3}; noise rate {rate:.4}, var {var:.4}; {secs:.1}s",
            split[0], split[1], split[2]
        ),
    )
}

fn c6_schedules() -> Result<Outcome> {
    let warm = Schedule::WarmupLinear {
        peak: 2e-4,
        total_steps: 200_000,
        warmup_frac: 0.07,
    };
    let poly = Schedule::Polynomial {
        start: 1e-3,
        end: 3e-5,
        total_steps: 200_000,
        power: 1.0,
    };
    let checks = [
        (warm.lr_at(14_000), 2e-4),
        (warm.lr_at(200_000), 0.0),
        (poly.lr_at(0), 1e-3),
        (poly.lr_at(200_000), 3e-5),
    ];
    let worst = checks.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(
        worst <= 1e-12,
        format!(
            "warmup lr(14000) {:e}, lr(T) {:e}; polynomial lr(0) {:e}, lr(T) {:e}",
            checks[0].0, checks[1].0, checks[2].0, checks[3].0
        ),
    )
}

/// Pretraining settings shared by the efficacy criterion.
fn efficacy_config() -> PretrainConfig {
    PretrainConfig {
        seed: 7,
        steps: 5000,
        batch_size: 2,
        crop_frames: Some(64),
        ..Default::default()
    }
}

fn c7_pretraining_efficacy() -> Result<Outcome> {
    let start = Instant::now();
    let src = SynthSource::new(&SynthSpec::default())?;
    let data: Vec<FeatureMatrix> = src.generate(2000, 0, "u").into_iter().map(|u| u.features).collect();
    let held_out: Vec<FeatureMatrix> = src.generate(50, 9, "h").into_iter().map(|u| u.features).collect();
    let cfg = efficacy_config();

    let mut a = Pretrainer::new(cfg.clone())?;
    let initial = a.evaluate(&held_out, 1)?;
    a.run(&data, 100, &mut RunSink::none())?;
    let early = a.checkpoint().to_bytes();
    let first_step = a.history[0].loss;
    a.run(&data, cfg.steps, &mut RunSink::none())?;
    let last100 = a.history[a.history.len() - 100..].iter().map(|r| r.loss).sum::<f64>() / 100.0;
    let after = a.evaluate(&held_out, 1)?;

    let mut b = Pretrainer::new(cfg)?;
    b.run(&data, 100, &mut RunSink::none())?;
    let same = b.checkpoint().to_bytes() == early;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        after < 0.5 * initial && last100 < 0.5 * first_step && same && secs < 600.0,
        format!(
            "held-out L1 {initial:.4} -> {after:.4}; training loss step 0 {first_step:.4}, last 100 mean {last100:.4}; rerun bit-identical {same}; {secs:.0}s"
        ),
    )
}

fn c8_claim_experiment() -> Result<Outcome> {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let report = experiment_claim_table(&cfg, None)?;
    let secs = start.elapsed().as_secs_f64();
    for line in report.render().lines() {
        println!("    {line}");
    }
    for (seed, before, after) in &report.pretrain_loss {
        println!("    seed {seed}: pretraining L1 {before:.4} -> {after:.4}");
    }
    let seeds = cfg.seeds.len();
    if report.rows.len() != 4 * seeds || report.rows.iter().any(|r| r.error.is_some()) {
        return Err(Error::Training("a regime failed to train or the report is incomplete".into()));
    }
    let vs_scratch = report.wins("finetune", "scratch").map_or(0, |w| w.wins);
    let vs_frozen = report.wins("finetune", "frozen").map_or(0, |w| w.wins);
    let vs_ce = report.wins("finetune", "finetune-ce").map_or(0, |w| w.wins);
    let need = (4 * seeds).div_ceil(5);
    let pass = vs_scratch >= need && vs_frozen >= need && secs < 45.0 * 60.0;
    outcome(
        pass,
        format!(
            "fine-tune beats scratch {vs_scratch}/{seeds}, beats frozen {vs_frozen}/{seeds} (need {need}); \
             LFMMI beats cross-entropy {vs_ce}/{seeds} (reported only); {:.1} min",
            secs / 60.0
        ),
    )
}

fn c9_determinism_and_resume() -> Result<Outcome> {
    let start = Instant::now();
    let spec = SynthSpec {
        min_phones: 6,
        max_phones: 12,
        ..Default::default()
    };
    let src = SynthSource::new(&spec)?;
    let unlabeled: Vec<FeatureMatrix> = src.generate(20, 0, "u").into_iter().map(|u| u.features).collect();
    let pcfg = PretrainConfig {
        seed: 3,
        steps: 12,
        batch_size: 2,
        crop_frames: Some(32),
        ..Default::default()
    };
    let dir = tempfile::tempdir()?;

    let mut straight = Pretrainer::new(pcfg.clone())?;
    straight.run(&unlabeled, 12, &mut RunSink::none())?;
    let mut again = Pretrainer::new(pcfg.clone())?;
    again.run(&unlabeled, 12, &mut RunSink::none())?;
    let mut half = Pretrainer::new(pcfg.clone())?;
    half.run(&unlabeled, 6, &mut RunSink::none())?;
    half.checkpoint().save(dir.path().join("pre6.bin"))?;
    let mut resumed = Pretrainer::from_checkpoint(pcfg.clone(), Checkpoint::load(dir.path().join("pre6.bin"))?)?;
    resumed.run(&unlabeled, 12, &mut RunSink::none())?;
    let pre_same = straight.checkpoint().to_bytes() == again.checkpoint().to_bytes();
    let pre_resume = straight.checkpoint().to_bytes() == resumed.checkpoint().to_bytes();

    let topo = Topology::full(&src.phones);
    let train: Vec<LabeledUtt> = src
        .generate(12, 1, "t")
        .iter()
        .map(|u| LabeledUtt::from_synth(u, &topo))
        .collect::<Result<_>>()?;
    let transcripts: Vec<Vec<usize>> = train.iter().map(|u| u.transcript.clone()).collect();
    let task = SupervisedTask::new(src.phones.clone(), &transcripts, 1.0)?;
    let encoder = straight.checkpoint().pretrained_encoder()?;
    let mut ft_ok = Vec::new();
    for criterion in [Criterion::Lfmmi, Criterion::CrossEntropy] {
        let fcfg = FinetuneConfig {
            seed: 5,
            criterion,
            epochs: 2,
            batch_size: 3,
            ..Default::default()
        };
        let total = fcfg.steps_per_epoch(train.len()) * fcfg.epochs;
        let run = |until: u64| -> Result<Finetuner> {
            let mut ft = Finetuner::new(fcfg.clone(), task.clone(), Some(encoder.clone()))?;
            ft.run(&train, until, &mut RunSink::none())?;
            Ok(ft)
        };
        let a = run(total)?.checkpoint().to_bytes();
        let b = run(total)?.checkpoint().to_bytes();
        let path = dir.path().join("ft-half.bin");
        run(total / 2)?.checkpoint().save(&path)?;
        let mut r = Finetuner::from_checkpoint(fcfg.clone(), task.clone(), Checkpoint::load(&path)?)?;
        r.run(&train, total, &mut RunSink::none())?;
        ft_ok.push(a == b && a == r.checkpoint().to_bytes());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        pre_same && pre_resume && ft_ok.iter().all(|&x| x),
        format!(
            "pretrain rerun {pre_same}, resume {pre_resume}; fine-tune LFMMI {}, cross-entropy {}; {secs:.1}s",
            ft_ok[0], ft_ok[1]
        ),
    )
}

fn sine(freq: f64, rate: u32, n: usize, amp: f64) -> Waveform {
    Waveform::new(
        (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / rate as f64).sin()).collect(),
        rate,
    )
}

fn c10_feature_pipeline() -> Result<Outcome> {
    let cfg = FbankConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut count_ok = true;
    for _ in 0..1000 {
        let n = rng.random_range(cfg.frame_length..=24_000);
        let want = 1 + (n - cfg.frame_length) / cfg.frame_shift;
        let w = Waveform::new((0..n).map(|_| rng.random_range(-0.5..0.5)).collect(), 16_000);
        let got = compute_fbank(&w, &cfg)?.frames();
        count_ok &= got == want && cfg.num_frames(n) == want;
    }

    let centers = cfg.mel_centers_hz();
    let mut tone_ok = true;
    for freq in [250.0, 700.0, 1000.0, 2200.0, 4000.0, 6500.0] {
        let fb = compute_fbank(&sine(freq, 16_000, 8000, 0.5), &cfg)?;
        let target = hz_to_mel(freq);
        let expected = (0..centers.len())
            .min_by(|&a, &b| {
                (hz_to_mel(centers[a]) - target)
                    .abs()
                    .total_cmp(&(hz_to_mel(centers[b]) - target).abs())
            })
            .unwrap();
        for t in 0..fb.frames() {
            let row = fb.frame(t);
            let arg = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            tone_ok &= arg == expected;
        }
    }

    // Samples within the filter half-width of either end see zero padding
    // and are excluded.
    let margin = 16;
    let mut worst = 0.0f64;
    for freq in [300.0, 1000.0, 2500.0] {
        let r = resample_8k_to_16k(&sine(freq, 8000, 1600, 0.8))?;
        for i in margin..r.len() - margin {
            let want = 0.8 * (2.0 * PI * freq * i as f64 / 16_000.0).sin();
            worst = worst.max((r.samples[i] - want).abs());
        }
    }
    outcome(
        count_ok && tone_ok && worst < 1e-2,
        format!("frame counts exact {count_ok}; tone peaks {tone_ok}; resample max error {worst:.2e}"),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().is_none_or(|v| v.contains(&k));
    let instances = if wanted(2) || wanted(3) { mmi_instances().ok() } else { None };
    let inst = instances.as_deref().unwrap_or(&[]);

    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Result<Outcome> + '_>)> = vec![
        (1, "forward-backward oracle", Box::new(c1_forward_oracle)),
        (2, "LFMMI gradient check", Box::new(|| c2_lfmmi_gradient(inst))),
        (3, "posterior normalization", Box::new(|| c3_posterior_sums(inst))),
        (4, "network gradient check", Box::new(c4_network_gradients)),
        (5, "alteration statistics", Box::new(c5_alteration_statistics)),
        (6, "schedule exactness", Box::new(c6_schedules)),
        (7, "pretraining efficacy", Box::new(c7_pretraining_efficacy)),
        (8, "claim-direction experiment", Box::new(c8_claim_experiment)),
        (9, "determinism and resume", Box::new(c9_determinism_and_resume)),
        (10, "feature pipeline", Box::new(c10_feature_pipeline)),
    ];
    let mut fatal = Vec::new();
    let total = Instant::now();
    for (k, name, run) in &criteria {
        if !wanted(*k) {
            continue;
        }
        // The claim experiment measures a research outcome rather than an
        // implementation property: a FAIL there is reported, while an error
        // (a regime that did not train) still fails the run.
        let (pass, detail, is_fatal) = match run() {
            Ok(o) => (o.pass, o.detail, !o.pass && *k != 8),
            Err(e) => (false, format!("error: {e}"), true),
        };
        println!("{} criterion {k:2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if is_fatal {
            fatal.push(*k);
        }
    }
    println!("acceptance finished in {:.1} min", total.elapsed().as_secs_f64() / 60.0);
    if !fatal.is_empty() {
        eprintln!("failed criteria: {fatal:?}");
        std::process::exit(1);
    }
}
