//! Drives the command-line entry point in-process: a synthetic corpus job
//! with dotted overrides, then `inspect` on a missing file to show the
//! structured error and exit code.

fn main() {
    let dir = std::env::temp_dir().join("mamchain-cli-example");
    std::fs::create_dir_all(&dir).unwrap();
    let job = dir.join("synth.json");
    std::fs::write(&job, r#"{ "spec": { "min_phones": 5, "max_phones": 10 }, "unlabeled": 4 }"#).unwrap();
    let run_dir = dir.join("synth-run");
    let code = mamchain::cli::run([
        "mamchain",
        "synth",
        "--config",
        job.to_str().unwrap(),
        "--set",
        "train=3",
        "--set",
        "test=2",
        "--set",
        "spec.seed=7",
        "--run-dir",
        run_dir.to_str().unwrap(),
    ]);
    println!("synth exit code {code}");
    for name in ["config.resolved.json", "unlabeled.jsonl", "train.jsonl", "test.jsonl"] {
        println!("  {name}: {}", run_dir.join(name).exists());
    }
    let code = mamchain::cli::run(["mamchain", "inspect", "/nonexistent/final.bin"]);
    println!("inspect exit code {code}");
}
