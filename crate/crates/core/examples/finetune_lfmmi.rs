//! Supervised LFMMI training of a TDNNF from scratch on a synthetic corpus,
//! followed by decoding and phone error rate on held-out utterances.

use mamchain::graphs::Topology;
use mamchain::nnet::TrainMode;
use mamchain::recognize::{SynthSource, SynthSpec};
use mamchain::train::{Criterion, FinetuneConfig, Finetuner, LabeledUtt, RunSink, SupervisedTask};

fn main() -> mamchain::Result<()> {
    let spec = SynthSpec {
        min_phones: 10,
        max_phones: 30,
        ..Default::default()
    };
    let src = SynthSource::new(&spec)?;
    let topo = Topology::full(&src.phones);
    let label = |n, stream, prefix: &str| -> mamchain::Result<Vec<LabeledUtt>> {
        src.generate(n, stream, prefix).iter().map(|u| LabeledUtt::from_synth(u, &topo)).collect()
    };
    let train = label(100, 1, "t")?;
    let test = label(50, 2, "e")?;

    let transcripts: Vec<Vec<usize>> = train.iter().map(|u| u.transcript.clone()).collect();
    let task = SupervisedTask::new(src.phones.clone(), &transcripts, 1.0)?;
    let cfg = FinetuneConfig {
        mode: TrainMode::Scratch,
        criterion: Criterion::Lfmmi,
        epochs: 6,
        batch_size: 4,
        head_lr_start: 3e-3,
        ..Default::default()
    };
    let mut ft = Finetuner::new(cfg, task, None)?;
    let per_epoch = ft.config.steps_per_epoch(train.len());
    for epoch in 1..=ft.config.epochs {
        ft.run(&train, epoch * per_epoch, &mut RunSink::none())?;
        let r = ft.evaluate(&test)?;
        println!(
            "epoch {epoch}: loss {:8.3}  PER {:6.2}  (S {} D {} I {})",
            ft.history.last().unwrap().loss,
            r.per,
            r.substitutions,
            r.deletions,
            r.insertions
        );
    }
    Ok(())
}
