//! Biphone topology, numerator and denominator graphs for a toy phone set.
//! Prints the numerator as text and the denominator as Graphviz.

use mamchain::graphs::{
    build_denominator, compile_numerator, compile_numerator_with, enumerate_paths,
    estimate_phone_bigram, NumeratorOptions, PhoneSet, Topology,
};

fn main() -> mamchain::Result<()> {
    let phones = PhoneSet::synthetic(3)?;
    let topo = Topology::full(&phones);
    println!("{} phones, {} biphone units, {} pdfs", topo.num_phones(), topo.num_units(), topo.num_pdfs());

    let transcripts = vec![vec![1, 2], vec![2, 1, 2], vec![1]];
    let lm = estimate_phone_bigram(&transcripts, phones.len(), 1.0)?;
    println!("p(p2 | p1) = {:.3}", lm.log_prob(1, 2).exp());

    let num = compile_numerator(&[1, 2], &topo, 4)?;
    print!("numerator for p1 p2:\n{}", num.to_text());
    let paths = enumerate_paths(&num, 4)?;
    println!("{} alignments over 4 frames", paths.len());
    for (pdfs, _) in &paths {
        let units: Vec<String> = pdfs
            .iter()
            .map(|&p| {
                let (l, c, lp) = topo.describe_pdf(p).unwrap();
                format!("{}{}{}", phones.symbol(l).unwrap(), if lp { "~" } else { ">" }, phones.symbol(c).unwrap())
            })
            .collect();
        println!("  {}", units.join(" "));
    }

    let opts = NumeratorOptions {
        optional_silence: Some(0.5),
        lm: Some(&lm),
    };
    let with_sil = compile_numerator_with(&[1, 2], &topo, 4, &opts)?;
    println!("with optional silence: {} states, {} arcs", with_sil.num_states(), with_sil.arcs().len());

    let den = build_denominator(&lm, &topo)?;
    println!("denominator: {} states, {} arcs", den.num_states(), den.arcs().len());
    let label = |p: usize| {
        let (l, c, lp) = topo.describe_pdf(p).unwrap();
        format!("{}{}{}", phones.symbol(l).unwrap(), if lp { "~" } else { ">" }, phones.symbol(c).unwrap())
    };
    print!("{}", den.to_dot(Some(&label)));
    Ok(())
}
