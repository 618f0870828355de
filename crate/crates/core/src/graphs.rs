//! Phone inventory, 1-state biphone topology, and the numerator and
//! denominator graphs used by the sequence objective.
//!
//! Every arc consumes exactly one frame, so graphs are epsilon-free and the
//! start state (always 0) is non-emitting.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneSet {
    symbols: Vec<String>,
    silence: usize,
}

impl PhoneSet {
    pub fn new(symbols: Vec<String>, silence_symbol: &str) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if seen.insert(s.as_str(), i).is_some() {
                return Err(Error::Config(format!("duplicate phone symbol `{s}`")));
            }
        }
        let silence = *seen
            .get(silence_symbol)
            .ok_or_else(|| Error::Config(format!("silence symbol `{silence_symbol}` not in phone set")))?;
        Ok(PhoneSet { symbols, silence })
    }

    /// `sil` followed by `p1 .. p{n-1}`.
    pub fn synthetic(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config("need at least silence and one phone".into()));
        }
        let symbols = std::iter::once("sil".to_string())
            .chain((1..n).map(|i| format!("p{i}")))
            .collect();
        PhoneSet::new(symbols, "sil")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn silence(&self) -> usize {
        self.silence
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

/// Context-dependent units `(left, phone)`. Unit `u` emits pdf `2u` on the
/// frame that enters it and pdf `2u + 1` on every self-loop frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    num_phones: usize,
    silence: usize,
    units: Vec<(usize, usize)>,
    index: Vec<Option<usize>>,
}

impl Topology {
    /// All `P * P` biphones, ordered by (left, phone).
    pub fn full(phones: &PhoneSet) -> Self {
        let p = phones.len();
        let units = (0..p).flat_map(|l| (0..p).map(move |c| (l, c))).collect();
        Topology::from_units(p, phones.silence(), units)
    }

    /// Only the biphones occurring in `transcripts` (utterance-initial
    /// phones take silence as left context).
    pub fn from_transcripts(phones: &PhoneSet, transcripts: &[Vec<usize>]) -> Result<Self> {
        let p = phones.len();
        let mut seen = vec![false; p * p];
        for tr in transcripts {
            let mut left = phones.silence();
            for &c in tr {
                if c >= p {
                    return Err(Error::contract(format!("phone id {c} >= {p}")));
                }
                seen[left * p + c] = true;
                left = c;
            }
        }
        let units = (0..p * p).filter(|&i| seen[i]).map(|i| (i / p, i % p)).collect();
        Ok(Topology::from_units(p, phones.silence(), units))
    }

    fn from_units(num_phones: usize, silence: usize, units: Vec<(usize, usize)>) -> Self {
        let mut index = vec![None; num_phones * num_phones];
        for (u, &(l, c)) in units.iter().enumerate() {
            index[l * num_phones + c] = Some(u);
        }
        Topology {
            num_phones,
            silence,
            units,
            index,
        }
    }

    pub fn num_phones(&self) -> usize {
        self.num_phones
    }

    pub fn silence(&self) -> usize {
        self.silence
    }

    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    pub fn num_pdfs(&self) -> usize {
        2 * self.units.len()
    }

    pub fn unit(&self, left: usize, phone: usize) -> Option<usize> {
        if left >= self.num_phones || phone >= self.num_phones {
            return None;
        }
        self.index[left * self.num_phones + phone]
    }

    pub fn units(&self) -> &[(usize, usize)] {
        &self.units
    }

    pub fn forward_pdf(unit: usize) -> usize {
        2 * unit
    }

    pub fn self_loop_pdf(unit: usize) -> usize {
        2 * unit + 1
    }

    /// `(left, phone, is_self_loop)` for a pdf id.
    pub fn describe_pdf(&self, pdf: usize) -> Option<(usize, usize, bool)> {
        let &(l, c) = self.units.get(pdf / 2)?;
        Some((l, c, pdf % 2 == 1))
    }

    /// Collapses a frame-level pdf sequence to phones: a phone starts at each
    /// forward pdf.
    pub fn pdfs_to_phones(&self, pdfs: &[usize]) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for &pdf in pdfs {
            let (_, c, looped) = self
                .describe_pdf(pdf)
                .ok_or_else(|| Error::contract(format!("pdf {pdf} out of range")))?;
            if !looped {
                out.push(c);
            }
        }
        Ok(out)
    }

    /// Frame-level pdf ids for a segmentation given as `(phone, frames)`
    /// pairs; repeated phones stay distinct segments.
    pub fn alignment_pdfs(&self, segments: &[(usize, usize)]) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        let mut left = self.silence;
        for &(phone, dur) in segments {
            let u = self.unit(left, phone).ok_or_else(|| {
                Error::contract(format!("biphone ({left}, {phone}) not in topology"))
            })?;
            if dur == 0 {
                return Err(Error::contract("zero-length segment"));
            }
            out.push(Topology::forward_pdf(u));
            out.extend(std::iter::repeat_n(Topology::self_loop_pdf(u), dur - 1));
            left = phone;
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub src: usize,
    pub dst: usize,
    pub pdf: usize,
    pub weight: f64,
}

/// Weighted acceptor over pdf ids; state 0 is the start state.
#[derive(Clone, Debug, PartialEq)]
pub struct Fst {
    num_states: usize,
    arcs: Vec<Arc>,
    finals: Vec<Option<f64>>,
}

impl Fst {
    pub fn new(num_states: usize) -> Self {
        Fst {
            num_states,
            arcs: Vec::new(),
            finals: vec![None; num_states],
        }
    }

    pub fn add_state(&mut self) -> usize {
        self.num_states += 1;
        self.finals.push(None);
        self.num_states - 1
    }

    pub fn add_arc(&mut self, src: usize, dst: usize, pdf: usize, weight: f64) {
        assert!(src < self.num_states && dst < self.num_states, "arc endpoint out of range");
        self.arcs.push(Arc { src, dst, pdf, weight });
    }

    pub fn set_final(&mut self, state: usize, weight: f64) {
        self.finals[state] = Some(weight);
    }

    pub fn start(&self) -> usize {
        0
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn final_weight(&self, state: usize) -> Option<f64> {
        self.finals[state]
    }

    pub fn finals(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.finals.iter().enumerate().filter_map(|(s, w)| w.map(|w| (s, w)))
    }

    pub fn max_pdf(&self) -> Option<usize> {
        self.arcs.iter().map(|a| a.pdf).max()
    }

    /// Every arc pdf must be below `num_pdfs`.
    pub fn check_pdfs(&self, num_pdfs: usize) -> Result<()> {
        match self.arcs.iter().find(|a| a.pdf >= num_pdfs) {
            Some(a) => Err(Error::contract(format!(
                "arc {}->{} uses pdf {} but the model has {num_pdfs}",
                a.src, a.dst, a.pdf
            ))),
            None => Ok(()),
        }
    }

    /// Errors unless every state is reachable from the start and can reach a
    /// final state.
    pub fn check_connected(&self) -> Result<()> {
        let n = self.num_states;
        if n == 0 {
            return Err(Error::contract("graph has no states"));
        }
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut inc: Vec<Vec<usize>> = vec![Vec::new(); n];
        for a in &self.arcs {
            out[a.src].push(a.dst);
            inc[a.dst].push(a.src);
        }
        let fwd = reach(&out, std::iter::once(0));
        let bwd = reach(&inc, self.finals().map(|(s, _)| s));
        if let Some(s) = (0..n).find(|&s| !fwd[s]) {
            return Err(Error::contract(format!("state {s} is unreachable")));
        }
        if let Some(s) = (0..n).find(|&s| !bwd[s]) {
            return Err(Error::contract(format!("state {s} cannot reach a final state")));
        }
        Ok(())
    }

    /// One arc per line `src dst pdf weight`, then `F state weight` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for a in &self.arcs {
            writeln!(s, "{} {} {} {:?}", a.src, a.dst, a.pdf, a.weight).unwrap();
        }
        for (st, w) in self.finals() {
            writeln!(s, "F {st} {w:?}").unwrap();
        }
        s
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut arcs = Vec::new();
        let mut finals = Vec::new();
        let mut n = 1;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Format(format!("fst line {}: `{line}`", lineno + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                ["F", st, w] => {
                    let st: usize = st.parse().map_err(|_| bad())?;
                    let w: f64 = w.parse().map_err(|_| bad())?;
                    n = n.max(st + 1);
                    finals.push((st, w));
                }
                [src, dst, pdf, w] => {
                    let a = Arc {
                        src: src.parse().map_err(|_| bad())?,
                        dst: dst.parse().map_err(|_| bad())?,
                        pdf: pdf.parse().map_err(|_| bad())?,
                        weight: w.parse().map_err(|_| bad())?,
                    };
                    n = n.max(a.src + 1).max(a.dst + 1);
                    arcs.push(a);
                }
                _ => return Err(bad()),
            }
        }
        let mut fst = Fst::new(n);
        fst.arcs = arcs;
        for (st, w) in finals {
            fst.set_final(st, w);
        }
        Ok(fst)
    }

    /// Graphviz rendering; pdfs are labelled with `label` when given.
    pub fn to_dot(&self, label: Option<&dyn Fn(usize) -> String>) -> String {
        let mut s = String::from("digraph fst {\n  rankdir=LR;\n");
        for st in 0..self.num_states {
            match self.finals[st] {
                Some(w) => writeln!(s, "  {st} [shape=doublecircle, label=\"{st}/{w:.3}\"];").unwrap(),
                None => writeln!(s, "  {st} [shape=circle];").unwrap(),
            }
        }
        for a in &self.arcs {
            let l = label.map(|f| f(a.pdf)).unwrap_or_else(|| a.pdf.to_string());
            writeln!(s, "  {} -> {} [label=\"{l}/{:.3}\"];", a.src, a.dst, a.weight).unwrap();
        }
        s.push_str("}\n");
        s
    }

    /// Random epsilon-free graph for oracle tests: every state gets between
    /// one and `max_out` outgoing arcs, and the result is trimmed to its
    /// connected part. Weights are uniform in `[-2, 0]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, states: usize, num_pdfs: usize, max_out: usize) -> Self {
        assert!(states >= 1 && num_pdfs >= 1 && max_out >= 1);
        loop {
            let mut fst = Fst::new(states);
            for src in 0..states {
                for _ in 0..rng.random_range(1..=max_out) {
                    let dst = rng.random_range(0..states);
                    let pdf = rng.random_range(0..num_pdfs);
                    fst.add_arc(src, dst, pdf, -2.0 * rng.random::<f64>());
                }
            }
            for st in 0..states {
                if rng.random::<f64>() < 0.3 {
                    fst.set_final(st, -rng.random::<f64>());
                }
            }
            if let Some(t) = fst.trimmed() {
                return t;
            }
        }
    }

    /// The connected part of the graph with states renumbered, or `None` if
    /// no final state is reachable.
    pub fn trimmed(&self) -> Option<Fst> {
        let n = self.num_states;
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut inc: Vec<Vec<usize>> = vec![Vec::new(); n];
        for a in &self.arcs {
            out[a.src].push(a.dst);
            inc[a.dst].push(a.src);
        }
        let fwd = reach(&out, std::iter::once(0));
        let bwd = reach(&inc, self.finals().map(|(s, _)| s));
        if !bwd[0] {
            return None;
        }
        let mut map = vec![usize::MAX; n];
        let mut next = 0;
        for s in 0..n {
            if fwd[s] && bwd[s] {
                map[s] = next;
                next += 1;
            }
        }
        let mut t = Fst::new(next);
        for a in &self.arcs {
            if map[a.src] != usize::MAX && map[a.dst] != usize::MAX {
                t.add_arc(map[a.src], map[a.dst], a.pdf, a.weight);
            }
        }
        for (s, w) in self.finals() {
            if map[s] != usize::MAX {
                t.set_final(map[s], w);
            }
        }
        Some(t)
    }
}

fn reach(adj: &[Vec<usize>], seeds: impl Iterator<Item = usize>) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack: Vec<usize> = seeds.collect();
    for &s in &stack {
        seen[s] = true;
    }
    while let Some(s) = stack.pop() {
        for &d in &adj[s] {
            if !seen[d] {
                seen[d] = true;
                stack.push(d);
            }
        }
    }
    seen
}

/// Phone bigram with sentence boundaries. Row `P` is the start context and
/// column `P` the end-of-sequence event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhoneBigram {
    num_phones: usize,
    log_probs: Vec<f64>,
}

impl PhoneBigram {
    pub fn num_phones(&self) -> usize {
        self.num_phones
    }

    fn at(&self, row: usize, col: usize) -> f64 {
        self.log_probs[row * (self.num_phones + 1) + col]
    }

    /// `log p(next | prev)`.
    pub fn log_prob(&self, prev: usize, next: usize) -> f64 {
        self.at(prev, next)
    }

    pub fn log_start(&self, next: usize) -> f64 {
        self.at(self.num_phones, next)
    }

    pub fn log_end(&self, prev: usize) -> f64 {
        self.at(prev, self.num_phones)
    }

    /// Log-probability of a whole sequence including both boundaries.
    pub fn sequence_log_prob(&self, seq: &[usize]) -> f64 {
        let mut prev = self.num_phones;
        let mut lp = 0.0;
        for &c in seq {
            lp += self.at(prev, c);
            prev = c;
        }
        lp + self.at(prev, self.num_phones)
    }

    /// Row sums in the probability domain (start row last).
    pub fn row_sums(&self) -> Vec<f64> {
        let w = self.num_phones + 1;
        (0..w)
            .map(|r| (0..w).map(|c| self.at(r, c).exp()).sum())
            .collect()
    }
}

/// Add-`k` estimate; each context has `P + 1` continuations (all phones
/// plus end of sequence).
pub fn estimate_phone_bigram(transcripts: &[Vec<usize>], num_phones: usize, k: f64) -> Result<PhoneBigram> {
    if transcripts.is_empty() {
        return Err(Error::contract("cannot estimate a bigram from an empty corpus"));
    }
    if k <= 0.0 {
        return Err(Error::Config("bigram smoothing must be positive".into()));
    }
    let w = num_phones + 1;
    let mut counts = vec![0.0f64; w * w];
    for tr in transcripts {
        let mut prev = num_phones;
        for &c in tr {
            if c >= num_phones {
                return Err(Error::contract(format!("phone id {c} >= {num_phones}")));
            }
            counts[prev * w + c] += 1.0;
            prev = c;
        }
        counts[prev * w + num_phones] += 1.0;
    }
    let mut log_probs = vec![0.0; w * w];
    for r in 0..w {
        let total: f64 = counts[r * w..(r + 1) * w].iter().sum();
        let denom = total + k * w as f64;
        for c in 0..w {
            log_probs[r * w + c] = ((counts[r * w + c] + k) / denom).ln();
        }
    }
    Ok(PhoneBigram {
        num_phones,
        log_probs,
    })
}

#[derive(Clone, Debug, Default)]
pub struct NumeratorOptions<'a> {
    /// Probability of an optional silence unit at each utterance boundary.
    pub optional_silence: Option<f64>,
    /// Weights unit entries with bigram log-probabilities, matching the
    /// denominator so that every numerator path scores at most its
    /// denominator twin.
    pub lm: Option<&'a PhoneBigram>,
}

/// Linear chain of the transcript's biphone units with self-loops.
pub fn compile_numerator(transcript: &[usize], topo: &Topology, frames: usize) -> Result<Fst> {
    compile_numerator_with(transcript, topo, frames, &NumeratorOptions::default())
}

pub fn compile_numerator_with(
    transcript: &[usize],
    topo: &Topology,
    frames: usize,
    opts: &NumeratorOptions,
) -> Result<Fst> {
    if transcript.is_empty() {
        return Err(Error::contract("empty transcript"));
    }
    if frames < transcript.len() {
        return Err(Error::TooShort(format!(
            "transcript longer than utterance ({} phones, {frames} frames)",
            transcript.len()
        )));
    }
    let sil = topo.silence();
    let lm_w = |prev: Option<usize>, next: Option<usize>| -> f64 {
        match (opts.lm, prev, next) {
            (None, _, _) => 0.0,
            (Some(lm), None, Some(n)) => lm.log_start(n),
            (Some(lm), Some(p), Some(n)) => lm.log_prob(p, n),
            (Some(lm), Some(p), None) => lm.log_end(p),
            (Some(_), None, None) => 0.0,
        }
    };
    let unit = |l: usize, c: usize| {
        topo.unit(l, c)
            .ok_or_else(|| Error::contract(format!("biphone ({l}, {c}) not in topology")))
    };
    let (p_sil, p_skip) = match opts.optional_silence {
        Some(p) if (0.0..1.0).contains(&p) && p > 0.0 => (p.ln(), (1.0 - p).ln()),
        Some(p) => return Err(Error::Config(format!("silence probability {p} not in (0, 1)"))),
        None => (f64::NEG_INFINITY, 0.0),
    };
    let lead = opts.optional_silence.is_some() && transcript[0] != sil;
    let trail = opts.optional_silence.is_some() && *transcript.last().unwrap() != sil;

    let mut fst = Fst::new(1);
    let first = transcript[0];
    let mut prev_state = fst.add_state();
    let u0 = unit(sil, first)?;
    fst.add_arc(0, prev_state, Topology::forward_pdf(u0), p_skip + lm_w(None, Some(first)));
    if lead {
        let us = unit(sil, sil)?;
        let s = fst.add_state();
        fst.add_arc(0, s, Topology::forward_pdf(us), p_sil + lm_w(None, Some(sil)));
        fst.add_arc(s, s, Topology::self_loop_pdf(us), 0.0);
        fst.add_arc(s, prev_state, Topology::forward_pdf(u0), lm_w(Some(sil), Some(first)));
    }
    fst.add_arc(prev_state, prev_state, Topology::self_loop_pdf(u0), 0.0);
    for w in transcript.windows(2) {
        let u = unit(w[0], w[1])?;
        let s = fst.add_state();
        fst.add_arc(prev_state, s, Topology::forward_pdf(u), lm_w(Some(w[0]), Some(w[1])));
        fst.add_arc(s, s, Topology::self_loop_pdf(u), 0.0);
        prev_state = s;
    }
    let last = *transcript.last().unwrap();
    fst.set_final(prev_state, p_skip + lm_w(Some(last), None));
    if trail {
        let u = unit(last, sil)?;
        let s = fst.add_state();
        fst.add_arc(prev_state, s, Topology::forward_pdf(u), p_sil + lm_w(Some(last), Some(sil)));
        fst.add_arc(s, s, Topology::self_loop_pdf(u), 0.0);
        fst.set_final(s, lm_w(Some(sil), None));
    }
    Ok(fst)
}

/// One state per topology unit plus the start state. Entering `(a, b)` from any unit ending in `a` costs
/// `log p(b | a)`; self-loops are free. Units that cannot be reached or
/// cannot finish are trimmed away.
pub fn build_denominator(lm: &PhoneBigram, topo: &Topology) -> Result<Fst> {
    if lm.num_phones() != topo.num_phones() {
        return Err(Error::contract(format!(
            "bigram over {} phones, topology over {}",
            lm.num_phones(),
            topo.num_phones()
        )));
    }
    let mut fst = Fst::new(topo.num_units() + 1);
    let mut by_left: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (u, &(l, _)) in topo.units().iter().enumerate() {
        by_left.entry(l).or_default().push(u);
    }
    let sil = topo.silence();
    for &u in by_left.get(&sil).into_iter().flatten() {
        let (_, c) = topo.units()[u];
        fst.add_arc(0, u + 1, Topology::forward_pdf(u), lm.log_start(c));
    }
    for (u, &(_, c)) in topo.units().iter().enumerate() {
        fst.add_arc(u + 1, u + 1, Topology::self_loop_pdf(u), 0.0);
        for &v in by_left.get(&c).into_iter().flatten() {
            let (_, d) = topo.units()[v];
            fst.add_arc(u + 1, v + 1, Topology::forward_pdf(v), lm.log_prob(c, d));
        }
        fst.set_final(u + 1, lm.log_end(c));
    }
    Ok(fst.trimmed().unwrap_or(fst))
}

pub const ENUMERATE_MAX_FRAMES: usize = 12;
pub const ENUMERATE_MAX_STATES: usize = 64;

/// Every accepting path of exactly `frames` arcs as (pdf sequence, summed
/// arc and final weight). Brute force; guarded to small graphs.
pub fn enumerate_paths(fst: &Fst, frames: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    if frames > ENUMERATE_MAX_FRAMES || fst.num_states() > ENUMERATE_MAX_STATES {
        return Err(Error::contract(format!(
            "path enumeration limited to {ENUMERATE_MAX_FRAMES} frames and \
             {ENUMERATE_MAX_STATES} states (got {frames}, {})",
            fst.num_states()
        )));
    }
    let mut out_arcs: Vec<Vec<&Arc>> = vec![Vec::new(); fst.num_states()];
    for a in fst.arcs() {
        out_arcs[a.src].push(a);
    }
    let mut paths = Vec::new();
    let mut pdfs = Vec::with_capacity(frames);
    fn dfs(
        state: usize,
        weight: f64,
        left: usize,
        fst: &Fst,
        out_arcs: &[Vec<&Arc>],
        pdfs: &mut Vec<usize>,
        paths: &mut Vec<(Vec<usize>, f64)>,
    ) {
        if left == 0 {
            if let Some(f) = fst.final_weight(state) {
                paths.push((pdfs.clone(), weight + f));
            }
            return;
        }
        for a in &out_arcs[state] {
            pdfs.push(a.pdf);
            dfs(a.dst, weight + a.weight, left - 1, fst, out_arcs, pdfs, paths);
            pdfs.pop();
        }
    }
    dfs(0, 0.0, frames, fst, &out_arcs, &mut pdfs, &mut paths);
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn binom(n: u64, k: u64) -> u64 {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn phone_set_rejects_duplicates_and_missing_silence() {
        assert!(PhoneSet::new(vec!["a".into(), "a".into()], "a").is_err());
        assert!(PhoneSet::new(vec!["a".into(), "b".into()], "sil").is_err());
        let p = PhoneSet::synthetic(4).unwrap();
        assert_eq!(p.silence(), 0);
        assert_eq!(p.id("p3"), Some(3));
        assert_eq!(p.symbol(1), Some("p1"));
    }

    #[test]
    fn bigram_hand_count() {
        let lm = estimate_phone_bigram(&[vec![0, 1], vec![0, 1]], 2, 1.0).unwrap();
        assert!((lm.log_prob(0, 1).exp() - 0.6).abs() < 1e-12);
        // start row: two counts of phone 0 out of 2, three continuations
        assert!((lm.log_start(0).exp() - 0.6).abs() < 1e-12);
        assert!((lm.log_end(1).exp() - 0.6).abs() < 1e-12);
        for s in lm.row_sums() {
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bigram_uniform_corpus_gives_uniform_rows() {
        let p = 3;
        let mut corpus = Vec::new();
        for a in 0..p {
            for b in 0..p {
                corpus.push(vec![a, b]);
            }
        }
        let lm = estimate_phone_bigram(&corpus, p, 1.0).unwrap();
        for a in 0..p {
            let row: Vec<f64> = (0..p).map(|b| lm.log_prob(a, b)).collect();
            assert!(row.iter().all(|v| (v - row[0]).abs() < 1e-12));
        }
        assert!(estimate_phone_bigram(&[], p, 1.0).is_err());
        assert!(estimate_phone_bigram(&[vec![5]], p, 1.0).is_err());
    }

    #[test]
    fn numerator_path_counts_match_binomial() {
        let phones = PhoneSet::synthetic(5).unwrap();
        let topo = Topology::full(&phones);
        for l in 1..=4usize {
            let tr: Vec<usize> = (0..l).map(|i| 1 + (i * 2) % 4).collect();
            for t in l..=8 {
                let fst = compile_numerator(&tr, &topo, t).unwrap();
                fst.check_connected().unwrap();
                let paths = enumerate_paths(&fst, t).unwrap();
                assert_eq!(paths.len() as u64, binom(t as u64 - 1, l as u64 - 1), "L={l} T={t}");
                for (pdfs, w) in &paths {
                    assert_eq!(*w, 0.0);
                    assert_eq!(topo.pdfs_to_phones(pdfs).unwrap(), tr);
                }
            }
        }
    }

    #[test]
    fn numerator_small_cases() {
        let phones = PhoneSet::synthetic(3).unwrap();
        let topo = Topology::full(&phones);
        let one = compile_numerator(&[1], &topo, 1).unwrap();
        assert_eq!(enumerate_paths(&one, 1).unwrap().len(), 1);
        let two = compile_numerator(&[1, 2], &topo, 3).unwrap();
        let mut p: Vec<Vec<usize>> = enumerate_paths(&two, 3).unwrap().into_iter().map(|x| x.0).collect();
        p.sort();
        let a = topo.unit(0, 1).unwrap();
        let b = topo.unit(1, 2).unwrap();
        let mut expect = vec![
            vec![2 * a, 2 * a + 1, 2 * b],
            vec![2 * a, 2 * b, 2 * b + 1],
        ];
        expect.sort();
        assert_eq!(p, expect);
        assert_eq!(enumerate_paths(&compile_numerator(&[1, 2, 1], &topo, 5).unwrap(), 5).unwrap().len(), 6);
        let err = compile_numerator(&[1, 2, 1], &topo, 2).unwrap_err();
        assert!(err.to_string().contains("transcript longer than utterance"));
    }

    #[test]
    fn optional_silence_adds_alternatives() {
        let phones = PhoneSet::synthetic(3).unwrap();
        let topo = Topology::full(&phones);
        let opts = NumeratorOptions {
            optional_silence: Some(0.5),
            lm: None,
        };
        let fst = compile_numerator_with(&[1], &topo, 3, &opts).unwrap();
        fst.check_connected().unwrap();
        let paths = enumerate_paths(&fst, 3).unwrap();
        // [1] alone; sil+1 (2 splits); 1+sil (2 splits); sil+1+sil (1)
        assert_eq!(paths.len(), 6);
        let total: f64 = paths.iter().map(|(_, w)| w.exp()).sum();
        assert!((total - (0.25 + 2.0 * 0.25 + 2.0 * 0.25 + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn denominator_counts_and_connectivity() {
        let phones = PhoneSet::synthetic(2).unwrap();
        let topo = Topology::full(&phones);
        assert_eq!(topo.num_units(), 4);
        assert_eq!(topo.num_pdfs(), 8);
        let lm = estimate_phone_bigram(&[vec![0, 1], vec![1, 1, 0]], 2, 1.0).unwrap();
        let den = build_denominator(&lm, &topo).unwrap();
        den.check_connected().unwrap();
        den.check_pdfs(topo.num_pdfs()).unwrap();
        assert!(den.arcs().iter().all(|a| a.weight <= 0.0));
        assert!(den.finals().all(|(_, w)| w <= 0.0));
        assert_eq!(den.to_text(), build_denominator(&lm, &topo).unwrap().to_text());
    }

    #[test]
    fn denominator_path_mass_has_closed_form() {
        // Each phone sequence of length L is spread over C(T-1, L-1)
        // segmentations, all with the sequence's LM probability.
        let phones = PhoneSet::synthetic(2).unwrap();
        let topo = Topology::full(&phones);
        let lm = estimate_phone_bigram(&[vec![0, 1], vec![1, 1, 0], vec![1]], 2, 1.0).unwrap();
        let den = build_denominator(&lm, &topo).unwrap();
        for t in 1..=6usize {
            let paths = enumerate_paths(&den, t).unwrap();
            let mass: f64 = paths.iter().map(|(_, w)| w.exp()).sum();
            let mut expect = 0.0;
            for l in 1..=t {
                for code in 0..(1usize << l) {
                    let seq: Vec<usize> = (0..l).map(|i| (code >> i) & 1).collect();
                    expect += lm.sequence_log_prob(&seq).exp() * binom(t as u64 - 1, l as u64 - 1) as f64;
                }
            }
            assert!((mass - expect).abs() < 1e-12, "T={t}: {mass} vs {expect}");
        }
    }

    #[test]
    fn lm_weighted_numerator_is_dominated_by_denominator() {
        let phones = PhoneSet::synthetic(3).unwrap();
        let topo = Topology::full(&phones);
        let lm = estimate_phone_bigram(&[vec![1, 2], vec![2, 2, 1]], 3, 1.0).unwrap();
        let den = build_denominator(&lm, &topo).unwrap();
        let opts = NumeratorOptions {
            optional_silence: None,
            lm: Some(&lm),
        };
        let num = compile_numerator_with(&[1, 2, 2], &topo, 5, &opts).unwrap();
        let den_paths: HashMap<Vec<usize>, f64> = enumerate_paths(&den, 5).unwrap().into_iter().collect();
        for (pdfs, w) in enumerate_paths(&num, 5).unwrap() {
            let dw = den_paths[&pdfs];
            assert!((dw - w).abs() < 1e-12);
            assert!((w - lm.sequence_log_prob(&[1, 2, 2])).abs() < 1e-12);
        }
    }

    #[test]
    fn seen_topology_is_smaller_and_dense() {
        let phones = PhoneSet::synthetic(4).unwrap();
        let topo = Topology::from_transcripts(&phones, &[vec![1, 2], vec![2, 3]]).unwrap();
        assert_eq!(topo.units(), &[(0, 1), (0, 2), (1, 2), (2, 3)]);
        assert_eq!(topo.num_pdfs(), 8);
        assert!(compile_numerator(&[3], &topo, 2).is_err());
        let lm = estimate_phone_bigram(&[vec![1, 2], vec![2, 3]], 4, 1.0).unwrap();
        let den = build_denominator(&lm, &topo).unwrap();
        den.check_connected().unwrap();
    }

    #[test]
    fn alignment_pdfs_round_trip_to_phones() {
        let phones = PhoneSet::synthetic(3).unwrap();
        let topo = Topology::full(&phones);
        let pdfs = topo.alignment_pdfs(&[(1, 2), (1, 3), (2, 1)]).unwrap();
        assert_eq!(pdfs.len(), 6);
        assert_eq!(topo.pdfs_to_phones(&pdfs).unwrap(), vec![1, 1, 2]);
    }

    #[test]
    fn text_format_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let fst = Fst::random(&mut rng, 10, 6, 3);
            fst.check_connected().unwrap();
            let back = Fst::parse_text(&fst.to_text()).unwrap();
            assert_eq!(back, fst);
        }
        assert!(Fst::parse_text("0 1 x 0.0").is_err());
        let dot = Fst::parse_text("0 1 3 -0.5\nF 1 0\n").unwrap().to_dot(None);
        assert!(dot.contains("0 -> 1 [label=\"3/-0.500\"]"));
    }

    #[test]
    fn enumeration_guard() {
        let fst = Fst::new(65);
        assert!(enumerate_paths(&fst, 3).is_err());
        assert!(enumerate_paths(&Fst::new(2), 13).is_err());
    }
}
