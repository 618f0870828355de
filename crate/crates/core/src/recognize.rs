//! Viterbi phone decoding, phone-error-rate scoring, and the synthetic
//! corpus used for end-to-end experiments.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};
use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;
use crate::graphs::{Fst, PhoneSet, Topology};
use crate::numerics::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub phones: Vec<usize>,
    pub log_score: f64,
    pub pdfs: Vec<usize>,
}

/// Best length-`T` accepting path: `(score, pdf sequence)`.
pub fn viterbi(fst: &Fst, logits: &Tensor) -> Result<(f64, Vec<usize>)> {
    if logits.shape().len() != 2 || logits.rows() == 0 {
        return Err(Error::contract(format!("bad logits shape {:?}", logits.shape())));
    }
    fst.check_pdfs(logits.cols())?;
    let (t_len, d, n) = (logits.rows(), logits.cols(), fst.num_states());
    let lg = logits.data();
    let arcs = fst.arcs();
    let mut delta = vec![f64::NEG_INFINITY; n];
    delta[fst.start()] = 0.0;
    let mut back = vec![usize::MAX; t_len * n];
    let mut next = vec![f64::NEG_INFINITY; n];
    for t in 0..t_len {
        next.fill(f64::NEG_INFINITY);
        for (i, a) in arcs.iter().enumerate() {
            let v = delta[a.src] + a.weight + lg[t * d + a.pdf];
            if v > next[a.dst] {
                next[a.dst] = v;
                back[t * n + a.dst] = i;
            }
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for (s, w) in fst.finals() {
        let v = delta[s] + w;
        if v > best.0 {
            best = (v, s);
        }
    }
    if best.1 == usize::MAX {
        return Err(Error::EmptyComposition { utt: None });
    }
    let mut pdfs = vec![0; t_len];
    let mut s = best.1;
    for t in (0..t_len).rev() {
        let a = &arcs[back[t * n + s]];
        pdfs[t] = a.pdf;
        s = a.src;
    }
    Ok((best.0, pdfs))
}

/// Viterbi followed by collapsing the pdf path to phones.
pub fn decode(fst: &Fst, topo: &Topology, logits: &Tensor) -> Result<Hypothesis> {
    let (log_score, pdfs) = viterbi(fst, logits)?;
    Ok(Hypothesis {
        phones: topo.pdfs_to_phones(&pdfs)?,
        log_score,
        pdfs,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Levenshtein alignment with unit costs. Among equal-cost alignments,
/// substitutions are preferred, then deletions.
pub fn edit_counts(reference: &[usize], hyp: &[usize]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut dp = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        dp[i * w] = i;
    }
    for j in 0..=m {
        dp[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            dp[i * w + j] = sub.min(dp[(i - 1) * w + j] + 1).min(dp[i * w + j - 1] + 1);
        }
    }
    let mut c = EditCounts {
        ref_len: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 && here == dp[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]) {
            if reference[i - 1] != hyp[j - 1] {
                c.substitutions += 1;
            }
            i -= 1;
            j -= 1;
        } else if i > 0 && here == dp[(i - 1) * w + j] + 1 {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UttScore {
    pub utt_id: String,
    #[serde(flatten)]
    pub counts: EditCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerReport {
    pub per: f64,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub n_ref_phones: usize,
    #[serde(skip)]
    pub utterances: Vec<UttScore>,
}

/// Corpus PER, `100 * (S + D + I) / N`. `ids` names the utterances in the
/// breakdown; indices are used when it is `None`.
pub fn phone_error_rate(refs: &[Vec<usize>], hyps: &[Vec<usize>], ids: Option<&[String]>) -> Result<PerReport> {
    if refs.len() != hyps.len() || ids.is_some_and(|i| i.len() != refs.len()) {
        return Err(Error::contract(format!(
            "{} references vs {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let mut total = EditCounts::default();
    let mut utterances = Vec::with_capacity(refs.len());
    for (k, (r, h)) in refs.iter().zip(hyps).enumerate() {
        let c = edit_counts(r, h);
        total.substitutions += c.substitutions;
        total.deletions += c.deletions;
        total.insertions += c.insertions;
        total.ref_len += c.ref_len;
        utterances.push(UttScore {
            utt_id: ids.map_or_else(|| k.to_string(), |i| i[k].clone()),
            counts: c,
        });
    }
    if total.ref_len == 0 {
        return Err(Error::contract("references contain no phones"));
    }
    Ok(PerReport {
        per: 100.0 * total.errors() as f64 / total.ref_len as f64,
        substitutions: total.substitutions,
        deletions: total.deletions,
        insertions: total.insertions,
        n_ref_phones: total.ref_len,
        utterances,
    })
}

impl PerReport {
    /// Summary JSON to `path`, per-utterance JSON lines beside it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<PathBuf> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(Error::at_path(path))?;
        let detail = path.with_extension("utts.jsonl");
        let mut w = BufWriter::new(File::create(&detail).map_err(Error::at_path(&detail))?);
        for u in &self.utterances {
            writeln!(w, "{}", serde_json::to_string(u)?)?;
        }
        w.flush()?;
        Ok(detail)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_phones: usize,
    pub dim: usize,
    pub noise_std: f64,
    /// Per-coordinate std of the random phone templates.
    pub template_scale: f64,
    pub mean_duration: f64,
    pub min_phones: usize,
    pub max_phones: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_phones: 12,
            dim: 80,
            noise_std: 0.3,
            template_scale: 0.5,
            mean_duration: 5.0,
            min_phones: 20,
            max_phones: 60,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_phones < 3 {
            return Err(Error::Config("synthetic corpus needs at least 3 phones".into()));
        }
        if self.dim == 0 || self.min_phones == 0 || self.min_phones > self.max_phones {
            return Err(Error::Config("bad synthetic dims or phone-count range".into()));
        }
        if self.mean_duration < 1.0 {
            return Err(Error::Config("mean duration must be at least one frame".into()));
        }
        if !(self.noise_std >= 0.0 && self.template_scale > 0.0) {
            return Err(Error::Config("noise and template scale must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthUtterance {
    pub id: String,
    pub features: FeatureMatrix,
    pub transcript: Vec<usize>,
    /// `(phone, frames)` per segment.
    pub segments: Vec<(usize, usize)>,
}

/// Fixed acoustic and phonotactic source: templates and a bigram with no
/// self-transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSource {
    pub spec: SynthSpec,
    pub phones: PhoneSet,
    pub templates: Vec<Vec<f64>>,
    /// Row-stochastic `P x P` transition table; row `P` is the start row.
    pub transitions: Vec<Vec<f64>>,
}

impl SynthSource {
    pub fn new(spec: &SynthSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7e3a_91c4_0b5d_2f68);
        let p = spec.num_phones;
        let min_dist = 4.0 * spec.noise_std;
        let tmpl = Normal::new(0.0, spec.template_scale).expect("positive scale");
        let mut templates = None;
        for _ in 0..1000 {
            let cand: Vec<Vec<f64>> = (0..p)
                .map(|_| (0..spec.dim).map(|_| tmpl.sample(&mut rng)).collect())
                .collect();
            if min_pairwise_distance(&cand) > min_dist {
                templates = Some(cand);
                break;
            }
        }
        let templates = templates.ok_or_else(|| {
            Error::Config(format!(
                "could not draw templates {min_dist} apart; raise template_scale"
            ))
        })?;
        let transitions = (0..=p)
            .map(|row| {
                let w: Vec<f64> = (0..p)
                    .map(|c| if c == row { 0.0 } else { 0.2 + rng.random::<f64>() })
                    .collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|x| x / s).collect()
            })
            .collect();
        Ok(SynthSource {
            spec: spec.clone(),
            phones: PhoneSet::synthetic(p)?,
            templates,
            transitions,
        })
    }

    pub fn sample_utterance<R: Rng + ?Sized>(&self, rng: &mut R, id: String) -> SynthUtterance {
        let s = &self.spec;
        let n = rng.random_range(s.min_phones..=s.max_phones);
        let dur = Geometric::new(1.0 / s.mean_duration).expect("valid duration");
        let noise = Normal::new(0.0, s.noise_std.max(f64::MIN_POSITIVE)).expect("valid noise");
        let ids: Vec<usize> = (0..s.num_phones).collect();
        let mut prev = s.num_phones;
        let mut transcript = Vec::with_capacity(n);
        let mut segments = Vec::with_capacity(n);
        for _ in 0..n {
            let row = &self.transitions[prev];
            let c = *ids.choose_weighted(rng, |&c| row[c]).expect("non-empty row");
            let d = 1 + dur.sample(rng) as usize;
            transcript.push(c);
            segments.push((c, d));
            prev = c;
        }
        let frames: usize = segments.iter().map(|x| x.1).sum();
        let mut feats = FeatureMatrix::zeros(frames, s.dim);
        let mut t = 0;
        for &(c, d) in &segments {
            for _ in 0..d {
                for (x, m) in feats.frame_mut(t).iter_mut().zip(&self.templates[c]) {
                    *x = m + if s.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
                }
                t += 1;
            }
        }
        SynthUtterance {
            id,
            features: feats,
            transcript,
            segments,
        }
    }

    /// `n` utterances from an independent stream keyed by `stream`.
    pub fn generate(&self, n: usize, stream: u64, prefix: &str) -> Vec<SynthUtterance> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(stream);
        (0..n)
            .map(|i| self.sample_utterance(&mut rng, format!("{prefix}{i:05}")))
            .collect()
    }

    /// Index of the nearest template for each frame.
    pub fn nearest_template(&self, feats: &FeatureMatrix) -> Vec<usize> {
        (0..feats.frames())
            .map(|t| {
                let f = feats.frame(t);
                (0..self.templates.len())
                    .min_by(|&a, &b| {
                        sq_dist(f, &self.templates[a]).total_cmp(&sq_dist(f, &self.templates[b]))
                    })
                    .unwrap()
            })
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn min_pairwise_distance(templates: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..templates.len() {
        for j in i + 1..templates.len() {
            best = best.min(sq_dist(&templates[i], &templates[j]).sqrt());
        }
    }
    best
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub feature_path: PathBuf,
    pub n_frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment_path: Option<PathBuf>,
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(Error::at_path(path))?);
    for e in entries {
        writeln!(w, "{}", serde_json::to_string(e)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let r = BufReader::new(File::open(path).map_err(Error::at_path(path))?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: ManifestEntry = serde_json::from_str(&line)
            .map_err(|err| Error::Format(format!("{}:{}: {err}", path.display(), i + 1)))?;
        out.push(e);
    }
    Ok(out)
}

/// Per-frame pdf ids, whitespace separated.
pub fn write_alignment(path: impl AsRef<Path>, pdfs: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let text = pdfs.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    fs::write(path, text + "\n").map_err(Error::at_path(path))
}

pub fn read_alignment(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(Error::at_path(path))?;
    text.split_whitespace()
        .map(|s| s.parse().map_err(|_| Error::Format(format!("{}: bad pdf id `{s}`", path.display()))))
        .collect()
}

/// Writes features (and, when `labeled`, transcripts and oracle alignments
/// against `topo`) under `dir`; returns the manifest entries.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    utts: &[SynthUtterance],
    topo: &Topology,
    labeled: bool,
) -> Result<Vec<ManifestEntry>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(Error::at_path(dir))?;
    let mut entries = Vec::with_capacity(utts.len());
    for u in utts {
        let feature_path = dir.join(format!("{}.feats", u.id));
        u.features.save(&feature_path)?;
        let alignment_path = if labeled {
            let p = dir.join(format!("{}.ali", u.id));
            write_alignment(&p, &topo.alignment_pdfs(&u.segments)?)?;
            Some(p)
        } else {
            None
        };
        entries.push(ManifestEntry {
            utt_id: u.id.clone(),
            feature_path,
            n_frames: u.features.frames(),
            transcript: labeled.then(|| u.transcript.clone()),
            alignment_path,
        });
    }
    Ok(entries)
}
