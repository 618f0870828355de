//! Log-semiring forward-backward over pdf graphs and the MMI objective.

use serde::{Deserialize, Serialize};

use crate::graphs::Fst;
use crate::numerics::{lse_unchecked, softmax_in_place, Tape, Tensor, Var};
use crate::{Error, Result};

/// Forward and backward log-scores, both `(T + 1) x states`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeScores {
    pub alpha: Tensor,
    pub beta: Tensor,
    pub log_z: f64,
}

/// Per-frame pdf occupancies, `T x num_pdfs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Posteriors {
    pub gamma: Tensor,
}

impl Posteriors {
    pub fn frame_sums(&self) -> Vec<f64> {
        (0..self.gamma.rows()).map(|t| self.gamma.row(t).iter().sum()).collect()
    }
}

/// Running `ln(sum(exp))` accumulator with one `exp` per added term.
#[derive(Clone, Copy)]
struct Acc {
    max: f64,
    sum: f64,
}

impl Acc {
    const EMPTY: Acc = Acc {
        max: f64::NEG_INFINITY,
        sum: 0.0,
    };

    #[inline]
    fn add(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.sum += (v - self.max).exp();
        }
    }

    fn value(self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

fn check_logits(fst: &Fst, logits: &Tensor) -> Result<()> {
    if logits.shape().len() != 2 || logits.rows() == 0 {
        return Err(Error::contract(format!(
            "logits must be a non-empty T x num_pdfs matrix, got {:?}",
            logits.shape()
        )));
    }
    fst.check_pdfs(logits.cols())?;
    if !logits.all_finite() {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(())
}

/// `ln` of the total weight of all length-`T` accepting paths, where a path
/// scores its arc weights, its final weight, and `logits[t][pdf]` per frame.
pub fn forward_log(fst: &Fst, logits: &Tensor) -> Result<(f64, LatticeScores)> {
    forward_log_for(fst, logits, None)
}

/// As [`forward_log`], naming `utt` in the empty-composition error.
pub fn forward_log_for(fst: &Fst, logits: &Tensor, utt: Option<&str>) -> Result<(f64, LatticeScores)> {
    check_logits(fst, logits)?;
    let t_len = logits.rows();
    let d = logits.cols();
    let n = fst.num_states();
    let lg = logits.data();
    let mut alpha = vec![f64::NEG_INFINITY; (t_len + 1) * n];
    alpha[fst.start()] = 0.0;
    let mut acc = vec![Acc::EMPTY; n];
    for t in 0..t_len {
        acc.fill(Acc::EMPTY);
        let (prev, next) = alpha.split_at_mut((t + 1) * n);
        let prev = &prev[t * n..];
        for a in fst.arcs() {
            let p = prev[a.src];
            if p != f64::NEG_INFINITY {
                acc[a.dst].add(p + a.weight + lg[t * d + a.pdf]);
            }
        }
        for (s, c) in acc.iter().enumerate() {
            next[s] = c.value();
        }
    }
    let mut beta = vec![f64::NEG_INFINITY; (t_len + 1) * n];
    for (s, w) in fst.finals() {
        beta[t_len * n + s] = w;
    }
    for t in (0..t_len).rev() {
        acc.fill(Acc::EMPTY);
        let (cur, after) = beta.split_at_mut((t + 1) * n);
        for a in fst.arcs() {
            let b = after[a.dst];
            if b != f64::NEG_INFINITY {
                acc[a.src].add(b + a.weight + lg[t * d + a.pdf]);
            }
        }
        for (s, c) in acc.iter().enumerate() {
            cur[t * n + s] = c.value();
        }
    }
    let mut z = Acc::EMPTY;
    for (s, w) in fst.finals() {
        z.add(alpha[t_len * n + s] + w);
    }
    let log_z = z.value();
    if !log_z.is_finite() {
        return Err(Error::EmptyComposition {
            utt: utt.map(str::to_string),
        });
    }
    let scores = LatticeScores {
        alpha: Tensor::matrix(t_len + 1, n, alpha),
        beta: Tensor::matrix(t_len + 1, n, beta),
        log_z,
    };
    Ok((log_z, scores))
}

/// `gamma[t][pdf]`: posterior mass of arcs carrying `pdf` at frame `t`.
pub fn occupancies(fst: &Fst, logits: &Tensor, scores: &LatticeScores) -> Result<Posteriors> {
    check_logits(fst, logits)?;
    let t_len = logits.rows();
    let d = logits.cols();
    let n = fst.num_states();
    if scores.alpha.shape() != [t_len + 1, n] || scores.beta.shape() != [t_len + 1, n] {
        return Err(Error::contract(format!(
            "lattice scores {:?} do not match T = {t_len}, {n} states",
            scores.alpha.shape()
        )));
    }
    let (al, be, lg) = (scores.alpha.data(), scores.beta.data(), logits.data());
    let mut gamma = vec![0.0; t_len * d];
    for t in 0..t_len {
        for a in fst.arcs() {
            let v = al[t * n + a.src] + a.weight + lg[t * d + a.pdf] + be[(t + 1) * n + a.dst] - scores.log_z;
            if v > f64::NEG_INFINITY {
                gamma[t * d + a.pdf] += v.exp();
            }
        }
    }
    Ok(Posteriors {
        gamma: Tensor::matrix(t_len, d, gamma),
    })
}

pub fn posteriors(fst: &Fst, logits: &Tensor) -> Result<(f64, Posteriors)> {
    let (z, scores) = forward_log(fst, logits)?;
    Ok((z, occupancies(fst, logits, &scores)?))
}

/// Everything one MMI evaluation produces.
#[derive(Clone, Debug)]
pub struct MmiOutput {
    /// Scalar tape node `Z_den - Z_num`.
    pub loss: Var,
    pub value: f64,
    pub log_z_num: f64,
    pub log_z_den: f64,
    /// `gamma_den - gamma_num`.
    pub grad: Tensor,
}

/// Negated MMI objective on `logits` (a tape node), differentiable through
/// the tape. An empty numerator yields [`Error::EmptyComposition`] carrying
/// `utt`; an empty denominator is reported as a contract violation since it
/// means the denominator graph is broken.
pub fn lfmmi_loss(tape: &mut Tape, num: &Fst, den: &Fst, logits: Var, utt: Option<&str>) -> Result<MmiOutput> {
    let x = tape.value(logits).clone();
    let (value, log_z_num, log_z_den, grad) = lfmmi_value(num, den, &x, utt)?;
    let loss = tape.external_loss(logits, value, grad.clone());
    Ok(MmiOutput {
        loss,
        value,
        log_z_num,
        log_z_den,
        grad,
    })
}

/// Tape-free form of [`lfmmi_loss`]: `(loss, Z_num, Z_den, grad)`.
pub fn lfmmi_value(num: &Fst, den: &Fst, logits: &Tensor, utt: Option<&str>) -> Result<(f64, f64, f64, Tensor)> {
    let (z_num, s_num) = forward_log_for(num, logits, utt)?;
    let (z_den, s_den) = match forward_log_for(den, logits, utt) {
        Err(Error::EmptyComposition { .. }) => {
            return Err(Error::contract(format!(
                "denominator graph accepts no path of {} frames",
                logits.rows()
            )))
        }
        r => r?,
    };
    let g_num = occupancies(num, logits, &s_num)?;
    let g_den = occupancies(den, logits, &s_den)?;
    let grad: Vec<f64> = g_den
        .gamma
        .data()
        .iter()
        .zip(g_num.gamma.data())
        .map(|(d, n)| d - n)
        .collect();
    Ok((
        z_den - z_num,
        z_num,
        z_den,
        Tensor::new(logits.shape().to_vec(), grad)?,
    ))
}

/// Mean over frames of `-log softmax(logits[t])[alignment[t]]`.
pub fn cross_entropy_loss(tape: &mut Tape, logits: Var, alignment: &[usize]) -> Result<(Var, f64)> {
    let x = tape.value(logits).clone();
    let (value, grad) = cross_entropy_value(&x, alignment)?;
    Ok((tape.external_loss(logits, value, grad), value))
}

pub fn cross_entropy_value(logits: &Tensor, alignment: &[usize]) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 2 || logits.rows() != alignment.len() || alignment.is_empty() {
        return Err(Error::contract(format!(
            "alignment of {} frames for logits {:?}",
            alignment.len(),
            logits.shape()
        )));
    }
    let d = logits.cols();
    if let Some(&bad) = alignment.iter().find(|&&p| p >= d) {
        return Err(Error::contract(format!("pdf {bad} out of range for {d} outputs")));
    }
    let t_len = alignment.len() as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (t, &p) in alignment.iter().enumerate() {
        loss += lse_unchecked(logits.row(t).iter().copied()) - logits.get2(t, p);
        let row = &mut grad.data_mut()[t * d..(t + 1) * d];
        softmax_in_place(row);
        row[p] -= 1.0;
        row.iter_mut().for_each(|g| *g /= t_len);
    }
    Ok((loss / t_len, grad))
}

/// One diagnostic line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmiDiagnostics {
    pub step: u64,
    pub loss: f64,
    #[serde(rename = "Z_num")]
    pub z_num: f64,
    #[serde(rename = "Z_den")]
    pub z_den: f64,
    pub grad_norm: f64,
}

impl MmiDiagnostics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("diagnostics serialize")
    }
}
