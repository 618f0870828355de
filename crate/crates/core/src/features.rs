//! Log-mel filterbank extraction, waveform augmentation, and the binary
//! feature-file format.
//!
//! Frames are 25 ms long with a 10 ms shift at 16 kHz. Each frame is
//! pre-emphasized, Hamming-windowed, transformed with a 512-point FFT and
//! pooled through triangular HTK-mel filters between 20 Hz and 7600 Hz before
//! taking the floored log.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::numerics::{read_u64, Tensor};
use crate::{Error, Result};

pub const SPEED_FACTORS: [f64; 3] = [0.9, 1.0, 1.1];
pub const VOLUME_GAIN_RANGE: (f64, f64) = (0.125, 2.0);
const RESAMPLE_TAPS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Reads a PCM16 WAV file; multi-channel input is averaged to mono.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let reader = hound::WavReader::open(path.as_ref())?;
        let spec = reader.spec();
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(Error::Format(format!(
                "{}: expected PCM16, found {:?} {}-bit",
                path.as_ref().display(),
                spec.sample_format,
                spec.bits_per_sample
            )));
        }
        let channels = spec.channels.max(1) as usize;
        let raw: Vec<i16> = reader.into_samples::<i16>().collect::<std::result::Result<_, _>>()?;
        let samples = raw
            .chunks(channels)
            .map(|c| c.iter().map(|&s| s as f64 / 32768.0).sum::<f64>() / c.len() as f64)
            .collect();
        Ok(Waveform {
            samples,
            sample_rate: spec.sample_rate,
        })
    }

    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
        }
        w.finalize()?;
        Ok(())
    }
}

/// `frames x dim` matrix of log energies (row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if frames * dim != data.len() {
            return Err(Error::contract(format!(
                "feature matrix {frames}x{dim} given {} values",
                data.len()
            )));
        }
        Ok(FeatureMatrix { frames, dim, data })
    }

    pub fn zeros(frames: usize, dim: usize) -> Self {
        FeatureMatrix {
            frames,
            dim,
            data: vec![0.0; frames * dim],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn get(&self, t: usize, f: usize) -> f64 {
        self.data[t * self.dim + f]
    }

    /// Contiguous frame range `[start, start + len)`.
    pub fn slice_frames(&self, start: usize, len: usize) -> FeatureMatrix {
        let end = (start + len).min(self.frames);
        FeatureMatrix {
            frames: end - start,
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.frames, self.dim, self.data.clone())
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        FeatureMatrix {
            frames: t.rows(),
            dim: t.cols(),
            data: t.data().to_vec(),
        }
    }

    /// Subtracts the per-channel mean over the utterance.
    pub fn mean_normalize(&mut self) {
        if self.frames == 0 {
            return;
        }
        let mut mean = vec![0.0; self.dim];
        for row in self.data.chunks_exact(self.dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= self.frames as f64;
        }
        for row in self.data.chunks_exact_mut(self.dim) {
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
    }

    /// Binary layout: `frames` and `dim` as little-endian u64, then row-major f64.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&(self.frames as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let frames = read_u64(r)? as usize;
        let dim = read_u64(r)? as usize;
        let n = frames
            .checked_mul(dim)
            .ok_or_else(|| Error::Format("feature header overflows".into()))?;
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(FeatureMatrix { frames, dim, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(Error::at_path(path))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(Error::at_path(path))?;
        Self::read_from(&mut BufReader::new(f))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbankConfig {
    pub sample_rate: u32,
    pub frame_length: usize,
    pub frame_shift: usize,
    pub fft_size: usize,
    pub num_mel: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub preemphasis: f64,
    pub log_floor: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        FbankConfig {
            sample_rate: 16_000,
            frame_length: 400,
            frame_shift: 160,
            fft_size: 512,
            num_mel: 80,
            low_hz: 20.0,
            high_hz: 7600.0,
            preemphasis: 0.97,
            log_floor: 1e-10,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl FbankConfig {
    pub fn num_frames(&self, num_samples: usize) -> usize {
        if num_samples < self.frame_length {
            0
        } else {
            1 + (num_samples - self.frame_length) / self.frame_shift
        }
    }

    /// Center frequency (Hz) of every mel filter.
    pub fn mel_centers_hz(&self) -> Vec<f64> {
        let (lo, hi) = (hz_to_mel(self.low_hz), hz_to_mel(self.high_hz));
        let step = (hi - lo) / (self.num_mel + 1) as f64;
        (1..=self.num_mel).map(|i| mel_to_hz(lo + step * i as f64)).collect()
    }

    /// Triangular filters laid over `fft_size / 2 + 1` bins, `num_mel` rows.
    pub fn mel_filters(&self) -> Vec<Vec<f64>> {
        let bins = self.fft_size / 2 + 1;
        let (lo, hi) = (hz_to_mel(self.low_hz), hz_to_mel(self.high_hz));
        let step = (hi - lo) / (self.num_mel + 1) as f64;
        let bin_mel: Vec<f64> = (0..bins)
            .map(|b| hz_to_mel(b as f64 * self.sample_rate as f64 / self.fft_size as f64))
            .collect();
        (0..self.num_mel)
            .map(|m| {
                let left = lo + step * m as f64;
                let center = left + step;
                let right = center + step;
                bin_mel
                    .iter()
                    .map(|&mel| {
                        if mel <= left || mel >= right {
                            0.0
                        } else if mel <= center {
                            (mel - left) / (center - left)
                        } else {
                            (right - mel) / (right - center)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.num_mel == 0 {
            return Err(Error::contract("num_mel must be at least 1"));
        }
        if self.frame_length == 0 || self.frame_shift == 0 || self.fft_size < self.frame_length {
            return Err(Error::contract("frame length, shift and fft size are inconsistent"));
        }
        if !(0.0..self.high_hz).contains(&self.low_hz)
            || self.high_hz > self.sample_rate as f64 / 2.0
        {
            return Err(Error::contract("mel band must lie inside [0, nyquist]"));
        }
        Ok(())
    }
}

pub fn compute_fbank(wave: &Waveform, config: &FbankConfig) -> Result<FeatureMatrix> {
    config.validate()?;
    if wave.sample_rate != config.sample_rate {
        return Err(Error::contract(format!(
            "expected {} Hz audio, got {} Hz",
            config.sample_rate, wave.sample_rate
        )));
    }
    let frames = config.num_frames(wave.len());
    if frames == 0 {
        return Err(Error::TooShort(format!(
            "utterance too short: {} samples < one {}-sample window",
            wave.len(),
            config.frame_length
        )));
    }

    let n = config.frame_length;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect();
    let filters = config.mel_filters();
    // Sparse support of each filter.
    let support: Vec<(usize, usize)> = filters
        .iter()
        .map(|f| {
            let first = f.iter().position(|&w| w > 0.0).unwrap_or(0);
            let last = f.iter().rposition(|&w| w > 0.0).map_or(0, |l| l + 1);
            (first, last.max(first))
        })
        .collect();

    let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); config.fft_size];
    let bins = config.fft_size / 2 + 1;
    let mut power = vec![0.0; bins];
    let mut out = Vec::with_capacity(frames * config.num_mel);

    for t in 0..frames {
        let seg = &wave.samples[t * config.frame_shift..t * config.frame_shift + n];
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < n {
                let prev = if i == 0 { seg[0] } else { seg[i - 1] };
                Complex::new((seg[i] - config.preemphasis * prev) * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for (f, &(a, b)) in filters.iter().zip(&support) {
            let e: f64 = (a..b).map(|k| f[k] * power[k]).sum();
            out.push(e.max(config.log_floor).ln());
        }
    }
    FeatureMatrix::new(frames, config.num_mel, out)
}

/// Linear-interpolation time stretch; output length `round(len / factor)`.
pub fn speed_perturb(wave: &Waveform, factor: f64) -> Result<Waveform> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::contract(format!("speed factor must be positive, got {factor}")));
    }
    if wave.is_empty() {
        return Ok(wave.clone());
    }
    let n = wave.len();
    let out_len = ((n as f64 / factor).round() as usize).max(1);
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * factor;
            let i0 = (pos.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let frac = pos - i0 as f64;
            if frac <= 0.0 {
                wave.samples[i0]
            } else {
                wave.samples[i0] * (1.0 - frac) + wave.samples[i1] * frac
            }
        })
        .collect();
    Ok(Waveform::new(samples, wave.sample_rate))
}

/// Scales by `gain` and clips to `[-1, 1]`.
pub fn volume_perturb(wave: &Waveform, gain: f64) -> Result<Waveform> {
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(Error::contract(format!("gain must be positive, got {gain}")));
    }
    let samples = wave
        .samples
        .iter()
        .map(|&s| (s * gain).clamp(-1.0, 1.0))
        .collect();
    Ok(Waveform::new(samples, wave.sample_rate))
}

pub fn draw_volume_gain<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(VOLUME_GAIN_RANGE.0..=VOLUME_GAIN_RANGE.1)
}

/// Speed-perturbed copies at every factor in [`SPEED_FACTORS`], each with a
/// random volume gain.
pub fn augment<R: Rng + ?Sized>(wave: &Waveform, rng: &mut R) -> Result<Vec<Waveform>> {
    SPEED_FACTORS
        .iter()
        .map(|&f| volume_perturb(&speed_perturb(wave, f)?, draw_volume_gain(rng)))
        .collect()
}

fn resample_kernel() -> [f64; RESAMPLE_TAPS] {
    // Half-sample sinc with a Blackman window, normalized to unit DC gain.
    let mut taps = [0.0; RESAMPLE_TAPS];
    let half = RESAMPLE_TAPS as f64 / 2.0;
    for (j, tap) in taps.iter_mut().enumerate() {
        let x = j as f64 - (half - 1.0) - 0.5;
        let sinc = (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x);
        let u = (j as f64 + 0.5) / RESAMPLE_TAPS as f64;
        let w = 0.42 - 0.5 * (2.0 * std::f64::consts::PI * u).cos()
            + 0.08 * (4.0 * std::f64::consts::PI * u).cos();
        *tap = sinc * w;
    }
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Doubles the rate with a 16-tap windowed-sinc interpolator. Even output
/// samples are the inputs; odd ones are interpolated half-way between.
pub fn resample_8k_to_16k(wave: &Waveform) -> Result<Waveform> {
    if wave.sample_rate != 8000 {
        return Err(Error::contract(format!(
            "expected 8000 Hz input, got {} Hz",
            wave.sample_rate
        )));
    }
    if wave.is_empty() {
        return Err(Error::contract("cannot resample an empty waveform"));
    }
    let taps = resample_kernel();
    let n = wave.len() as isize;
    let half = (RESAMPLE_TAPS / 2) as isize;
    let mut out = Vec::with_capacity(2 * wave.len());
    for i in 0..n {
        out.push(wave.samples[i as usize]);
        let v: f64 = taps
            .iter()
            .enumerate()
            .map(|(j, &w)| {
                let idx = (i - (half - 1) + j as isize).clamp(0, n - 1);
                w * wave.samples[idx as usize]
            })
            .sum();
        out.push(v);
    }
    Ok(Waveform::new(out, 16_000))
}
