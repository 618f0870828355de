use std::fs;
use std::path::Path;

use mamchain::cli::{config_hash, run, ClaimReport, ExperimentConfig, REGIMES};
use mamchain::recognize::read_manifest;
use serde_json::{json, Value};

fn write_json(path: &Path, v: &Value) -> String {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn cli(args: &[&str]) -> i32 {
    let mut all = vec!["mamchain"];
    all.extend_from_slice(args);
    run(all)
}

fn tiny_encoder() -> Value {
    json!({ "num_layers": 1, "num_heads": 1, "head_dim": 8, "ff_dim": 8, "input_dim": 12, "dropout_prob": 0.0 })
}

#[test]
fn synth_pretrain_finetune_decode_score() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let data = d.join("data");
    let synth = write_json(
        &d.join("synth.json"),
        &json!({ "spec": { "num_phones": 5, "dim": 12, "min_phones": 4, "max_phones": 8, "template_scale": 1.0 },
                 "unlabeled": 20, "train": 12, "test": 6 }),
    );
    assert_eq!(cli(&["synth", "--config", &synth, "--run-dir", data.to_str().unwrap()]), 0);
    let test = read_manifest(data.join("test.jsonl")).unwrap();
    assert_eq!(test.len(), 6);
    assert!(test.iter().all(|e| e.transcript.is_some() && e.alignment_path.is_some()));
    assert!(read_manifest(data.join("unlabeled.jsonl")).unwrap().iter().all(|e| e.transcript.is_none()));

    let pre_dir = d.join("pre");
    let pre = write_json(
        &d.join("pre.json"),
        &json!({ "manifest": data.join("unlabeled.jsonl"),
                 "pretrain": { "encoder": tiny_encoder(), "steps": 6, "batch_size": 2, "crop_frames": 16,
                               "checkpoint_every": 3, "alteration": { "max_freq_channels": 4 } } }),
    );
    assert_eq!(cli(&["pretrain", "--config", &pre, "--run-dir", pre_dir.to_str().unwrap()]), 0);
    for f in ["config.resolved.json", "train_log.jsonl", "ckpt_00000003.bin", "final.bin"] {
        assert!(pre_dir.join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(pre_dir.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 7);

    let ft_dir = d.join("ft");
    let ft = write_json(
        &d.join("ft.json"),
        &json!({ "train_manifest": data.join("train.jsonl"), "test_manifest": data.join("test.jsonl"),
                 "num_phones": 5, "pretrained": pre_dir.join("final.bin"),
                 "finetune": { "epochs": 1, "batch_size": 4 } }),
    );
    assert_eq!(cli(&["finetune", "--config", &ft, "--run-dir", ft_dir.to_str().unwrap()]), 0);
    let score: Value = serde_json::from_str(&fs::read_to_string(ft_dir.join("score.json")).unwrap()).unwrap();
    assert!(score["per"].as_f64().unwrap() >= 0.0);
    assert!(ft_dir.join("task.json").exists());

    let dec_dir = d.join("dec");
    let dec = write_json(
        &d.join("dec.json"),
        &json!({ "checkpoint": ft_dir.join("final.bin"), "task": ft_dir.join("task.json"),
                 "manifest": data.join("test.jsonl") }),
    );
    assert_eq!(cli(&["decode", "--config", &dec, "--run-dir", dec_dir.to_str().unwrap()]), 0);
    let hyps = fs::read_to_string(dec_dir.join("hyp.jsonl")).unwrap();
    assert_eq!(hyps.lines().count(), 6);

    let sc_dir = d.join("score");
    let sc = write_json(
        &d.join("score.json"),
        &json!({ "reference": data.join("test.jsonl"), "hypotheses": dec_dir.join("hyp.jsonl") }),
    );
    assert_eq!(cli(&["score", "--config", &sc, "--run-dir", sc_dir.to_str().unwrap()]), 0);
    let rescored: Value = serde_json::from_str(&fs::read_to_string(sc_dir.join("score.json")).unwrap()).unwrap();
    assert_eq!(rescored["per"], score["per"]);

    assert_eq!(cli(&["inspect", ft_dir.join("final.bin").to_str().unwrap()]), 0);

    // A pretrained checkpoint cannot be decoded; a scratch run needs no encoder.
    let bad = write_json(
        &d.join("bad-dec.json"),
        &json!({ "checkpoint": pre_dir.join("final.bin"), "task": ft_dir.join("task.json"),
                 "manifest": data.join("test.jsonl") }),
    );
    assert_eq!(cli(&["decode", "--config", &bad, "--run-dir", d.join("x").to_str().unwrap()]), 3);
    let scratch = write_json(
        &d.join("scratch.json"),
        &json!({ "train_manifest": data.join("train.jsonl"), "num_phones": 5 }),
    );
    let args = ["--set", "finetune.mode=scratch", "--set", "finetune.tdnnf.input_dim=12", "--set", "finetune.epochs=1"];
    let mut full = vec!["finetune", "--config", &scratch, "--run-dir"];
    let sdir = d.join("scratch");
    full.push(sdir.to_str().unwrap());
    full.extend_from_slice(&args);
    assert_eq!(cli(&full), 0);
    assert_eq!(cli(&["finetune", "--config", &scratch, "--run-dir", d.join("y").to_str().unwrap()]), 2);
}

#[test]
fn config_and_data_errors_have_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let typo = write_json(&d.join("typo.json"), &json!({ "unlabelled": 3 }));
    assert_eq!(cli(&["synth", "--config", &typo, "--run-dir", d.join("a").to_str().unwrap()]), 2);
    let ok = write_json(&d.join("ok.json"), &json!({ "unlabeled": 1, "train": 1, "test": 1 }));
    assert_eq!(cli(&["synth", "--config", &ok, "--set", "spec.noise=1", "--run-dir", d.join("b").to_str().unwrap()]), 2);
    assert_eq!(cli(&["synth", "--config", d.join("missing.json").to_str().unwrap()]), 3);
    let pre = write_json(&d.join("pre.json"), &json!({ "manifest": d.join("nothing.jsonl") }));
    assert_eq!(cli(&["pretrain", "--config", &pre, "--run-dir", d.join("c").to_str().unwrap()]), 3);
    assert_eq!(cli(&["no-such-command"]), 2);
    assert_eq!(cli(&["--help"]), 0);
}

#[test]
fn run_directories_live_under_the_root_and_embed_the_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    std::env::set_var(mamchain::cli::RUN_ROOT_ENV, &root);
    let job = write_json(&tmp.path().join("s.json"), &json!({ "unlabeled": 1, "train": 1, "test": 1 }));
    assert_eq!(cli(&["synth", "--config", &job]), 0);
    std::env::remove_var(mamchain::cli::RUN_ROOT_ENV);
    let dirs: Vec<_> = fs::read_dir(&root).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1);
    let resolved: Value =
        serde_json::from_str(&fs::read_to_string(dirs[0].join("config.resolved.json")).unwrap()).unwrap();
    let name = dirs[0].file_name().unwrap().to_str().unwrap().to_string();
    assert!(name.starts_with(&format!("synth-{}-", config_hash(&resolved))), "{name}");
}

#[test]
fn experiment_report_has_every_regime_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg: ExperimentConfig = serde_json::from_value(json!({
        "seeds": [0, 1],
        "synth": { "num_phones": 4, "dim": 12, "min_phones": 4, "max_phones": 6, "template_scale": 1.0 },
        "unlabeled": 6, "train": 6, "test": 3,
        "pretrain": { "encoder": tiny_encoder(), "steps": 2, "batch_size": 2, "crop_frames": 16,
                      "alteration": { "max_freq_channels": 4 } },
        "finetune": { "epochs": 1, "batch_size": 3 }
    }))
    .unwrap();
    let path = write_json(&tmp.path().join("exp.json"), &serde_json::to_value(&cfg).unwrap());
    let out = tmp.path().join("exp");
    assert_eq!(cli(&["experiment", "--config", &path, "--run-dir", out.to_str().unwrap()]), 0);
    let report: ClaimReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.rows.len(), REGIMES.len() * 2);
    assert!(report.rows.iter().all(|r| r.per.is_some() && r.error.is_none()));
    assert_eq!(report.summary.len(), 4);
    assert!(report.wins.iter().all(|w| w.seeds == 2 && w.wins <= 2));
    for (name, ..) in REGIMES {
        assert!(out.join(format!("seed0/{name}/score.json")).exists(), "{name}");
    }

    let again = mamchain::cli::experiment_claim_table(&cfg, None).unwrap();
    let per = |r: &ClaimReport| r.rows.iter().map(|x| x.per).collect::<Vec<_>>();
    assert_eq!(per(&again), per(&report));
}
