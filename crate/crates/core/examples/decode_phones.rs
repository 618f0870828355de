//! Viterbi decoding over a denominator graph with planted logits, and phone
//! error rate scoring of the result.

use mamchain::graphs::{build_denominator, estimate_phone_bigram, PhoneSet, Topology};
use mamchain::numerics::Tensor;
use mamchain::recognize::{decode, edit_counts, phone_error_rate};

fn main() -> mamchain::Result<()> {
    let phones = PhoneSet::synthetic(5)?;
    let topo = Topology::full(&phones);
    let truth = vec![(1, 3), (4, 2), (2, 1), (3, 4)];
    let lm = estimate_phone_bigram(&[truth.iter().map(|p| p.0).collect()], phones.len(), 1.0)?;
    let den = build_denominator(&lm, &topo)?;

    let pdfs = topo.alignment_pdfs(&truth)?;
    let mut logits = Tensor::filled(&[pdfs.len(), topo.num_pdfs()], -5.0);
    for (t, &p) in pdfs.iter().enumerate() {
        logits.data_mut()[t * topo.num_pdfs() + p] = 5.0;
    }
    let hyp = decode(&den, &topo, &logits)?;
    let reference: Vec<usize> = truth.iter().map(|p| p.0).collect();
    println!("reference  {reference:?}");
    println!("hypothesis {:?}  (log score {:.2})", hyp.phones, hyp.log_score);

    let refs = vec![reference.clone(), vec![1, 2, 3]];
    let hyps = vec![hyp.phones, vec![1, 3]];
    let c = edit_counts(&refs[1], &hyps[1]);
    println!("[1 2 3] vs [1 3]: {} deletion(s)", c.deletions);
    let report = phone_error_rate(&refs, &hyps, None)?;
    println!("corpus PER {:.2}% over {} phones", report.per, report.n_ref_phones);
    Ok(())
}
