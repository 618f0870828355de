//! Generates a small synthetic corpus on disk and reads it back.

use mamchain::graphs::Topology;
use mamchain::recognize::{min_pairwise_distance, read_manifest, write_corpus, SynthSource, SynthSpec};
use mamchain::train::load_labeled;

fn main() -> mamchain::Result<()> {
    let spec = SynthSpec::default();
    let src = SynthSource::new(&spec)?;
    println!("min template distance {:.3} (noise std {})", min_pairwise_distance(&src.templates), spec.noise_std);

    let topo = Topology::full(&src.phones);
    let utts = src.generate(5, 1, "train-");
    let dir = std::env::temp_dir().join("mamchain-synth-example");
    let entries = write_corpus(&dir, &utts, &topo, true)?;
    let manifest = dir.join("train.jsonl");
    mamchain::recognize::write_manifest(&manifest, &entries)?;

    for e in read_manifest(&manifest)? {
        let ph = e.transcript.as_deref().unwrap_or_default();
        println!("{}: {} frames, {} phones", e.utt_id, e.n_frames, ph.len());
    }
    let data = load_labeled(&manifest)?;
    let u = &data[0];
    let symbols: Vec<&str> = u.transcript.iter().map(|&p| src.phones.symbol(p).unwrap_or("?")).collect();
    println!("{} transcript: {}", u.id, symbols.join(" "));
    Ok(())
}
