//! Masked acoustic modeling: time, frequency and magnitude alterations of a
//! feature matrix, and the L1 reconstruction objective.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;
use crate::numerics::{Tape, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlterationConfig {
    pub block_len: usize,
    pub target_mask_frac: f64,
    pub zero_prob: f64,
    pub replace_prob: f64,
    pub keep_prob: f64,
    /// Widest frequency block `W_c`.
    pub max_freq_channels: usize,
    pub magnitude_prob: f64,
    pub magnitude_var: f64,
    pub rng_seed: u64,
}

impl Default for AlterationConfig {
    fn default() -> Self {
        AlterationConfig {
            block_len: 7,
            target_mask_frac: 0.15,
            zero_prob: 0.8,
            replace_prob: 0.1,
            keep_prob: 0.1,
            max_freq_channels: 16,
            magnitude_prob: 0.15,
            magnitude_var: 0.2,
            rng_seed: 0,
        }
    }
}

impl AlterationConfig {
    /// No alteration of any kind; used to probe the identity path.
    pub fn disabled() -> Self {
        AlterationConfig {
            target_mask_frac: 0.0,
            max_freq_channels: 0,
            magnitude_prob: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let total = self.zero_prob + self.replace_prob + self.keep_prob;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "zero/replace/keep probabilities sum to {total}, not 1"
            )));
        }
        if !(0.0..=1.0).contains(&self.target_mask_frac) || !(0.0..=1.0).contains(&self.magnitude_prob)
        {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        if self.block_len == 0 {
            return Err(Error::Config("block_len must be positive".into()));
        }
        if self.max_freq_channels > dim {
            return Err(Error::Config(format!(
                "max_freq_channels {} exceeds feature dim {dim}",
                self.max_freq_channels
            )));
        }
        if self.magnitude_var < 0.0 {
            return Err(Error::Config("magnitude_var must be non-negative".into()));
        }
        Ok(())
    }

    /// Number of block start points for an utterance of `frames` frames.
    pub fn num_blocks(&self, frames: usize) -> usize {
        (self.target_mask_frac * frames as f64 / self.block_len as f64).ceil() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockAction {
    Zero,
    Replace,
    Keep,
}

/// One time-alteration block, already clipped to the utterance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlteredBlock {
    pub start: usize,
    pub len: usize,
    pub action: BlockAction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeAlteration {
    pub features: FeatureMatrix,
    pub mask: Vec<bool>,
    pub blocks: Vec<AlteredBlock>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyAlteration {
    pub features: FeatureMatrix,
    pub mask: Vec<bool>,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeAlteration {
    pub features: FeatureMatrix,
    pub noise_applied: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlterationOutcome {
    pub corrupted: FeatureMatrix,
    pub clean: FeatureMatrix,
    pub time_mask: Vec<bool>,
    pub freq_mask: Vec<bool>,
    pub blocks: Vec<AlteredBlock>,
    pub noise_applied: bool,
}

/// Marks `ceil(frac * T / block_len)` blocks of `block_len` frames.
///
/// Start points are uniform over every position whose block touches the
/// utterance (`1 - block_len ..= T - 1`), so each frame has the same chance
/// of being covered; blocks are clipped to `[0, T)` and may overlap. Each
/// block draws one action: zero, replace with a same-length segment of the
/// clean utterance, or keep. The mask covers every selected frame whatever
/// its action.
pub fn time_alteration<R: Rng + ?Sized>(
    x: &FeatureMatrix,
    cfg: &AlterationConfig,
    rng: &mut R,
) -> Result<TimeAlteration> {
    let t_len = x.frames();
    let b = cfg.block_len;
    if t_len < b && cfg.num_blocks(t_len) > 0 {
        return Err(Error::TooShort(format!(
            "{t_len} frames < block length {b}"
        )));
    }
    let mut out = x.clone();
    let mut mask = vec![false; t_len];
    let mut blocks = Vec::new();
    let lowest = 1 - b as i64;
    for _ in 0..cfg.num_blocks(t_len) {
        let s = rng.random_range(lowest..t_len as i64);
        let start = s.max(0) as usize;
        let end = ((s + b as i64) as usize).min(t_len);
        let len = end - start;
        let u: f64 = rng.random();
        let action = if u < cfg.zero_prob {
            BlockAction::Zero
        } else if u < cfg.zero_prob + cfg.replace_prob {
            BlockAction::Replace
        } else {
            BlockAction::Keep
        };
        match action {
            BlockAction::Zero => {
                for t in start..end {
                    out.frame_mut(t).fill(0.0);
                }
            }
            BlockAction::Replace => {
                let src = rng.random_range(0..=t_len - len);
                for k in 0..len {
                    let row = x.frame(src + k).to_vec();
                    out.frame_mut(start + k).copy_from_slice(&row);
                }
            }
            BlockAction::Keep => {}
        }
        mask[start..end].fill(true);
        blocks.push(AlteredBlock { start, len, action });
    }
    Ok(TimeAlteration {
        features: out,
        mask,
        blocks,
    })
}

/// Zeroes `w ~ U{0..=W_c}` consecutive channels starting at `U{0..=F-w}`.
pub fn frequency_alteration<R: Rng + ?Sized>(
    x: &FeatureMatrix,
    cfg: &AlterationConfig,
    rng: &mut R,
) -> Result<FrequencyAlteration> {
    let f = x.dim();
    if f < cfg.max_freq_channels {
        return Err(Error::contract(format!(
            "feature dim {f} < max_freq_channels {}",
            cfg.max_freq_channels
        )));
    }
    let width = rng.random_range(0..=cfg.max_freq_channels);
    let start = rng.random_range(0..=f - width);
    let mut out = x.clone();
    let mut mask = vec![false; f];
    if width > 0 {
        mask[start..start + width].fill(true);
        for t in 0..out.frames() {
            out.frame_mut(t)[start..start + width].fill(0.0);
        }
    }
    Ok(FrequencyAlteration {
        features: out,
        mask,
        width,
    })
}

/// With probability `magnitude_prob`, adds i.i.d. `N(0, magnitude_var)` noise
/// to every entry.
pub fn magnitude_alteration<R: Rng + ?Sized>(
    x: &FeatureMatrix,
    cfg: &AlterationConfig,
    rng: &mut R,
) -> Result<MagnitudeAlteration> {
    let apply = rng.random::<f64>() < cfg.magnitude_prob;
    let mut out = x.clone();
    if apply {
        let normal = Normal::new(0.0, cfg.magnitude_var.sqrt())
            .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
        for v in out.data_mut() {
            *v += normal.sample(rng);
        }
    }
    Ok(MagnitudeAlteration {
        features: out,
        noise_applied: apply,
    })
}

/// Time, then frequency, then magnitude alteration.
pub fn make_training_pair<R: Rng + ?Sized>(
    x: &FeatureMatrix,
    cfg: &AlterationConfig,
    rng: &mut R,
) -> Result<AlterationOutcome> {
    cfg.validate(x.dim())?;
    let time = time_alteration(x, cfg, rng)?;
    let freq = frequency_alteration(&time.features, cfg, rng)?;
    let mag = magnitude_alteration(&freq.features, cfg, rng)?;
    Ok(AlterationOutcome {
        corrupted: mag.features,
        clean: x.clone(),
        time_mask: time.mask,
        freq_mask: freq.mask,
        blocks: time.blocks,
        noise_applied: mag.noise_applied,
    })
}

/// Mean absolute error over every `T x F` entry against the clean features.
pub fn l1_reconstruction_loss(
    tape: &mut Tape,
    prediction: Var,
    outcome: &AlterationOutcome,
) -> Result<Var> {
    let target = outcome.clean.to_tensor();
    if tape.value(prediction).shape() != target.shape() {
        return Err(Error::contract(format!(
            "prediction shape {:?} differs from clean {:?}",
            tape.value(prediction).shape(),
            target.shape()
        )));
    }
    Ok(tape.l1_loss(prediction, &target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(frames: usize, dim: usize) -> FeatureMatrix {
        FeatureMatrix::new(
            frames,
            dim,
            (0..frames * dim).map(|i| 1.0 + i as f64 * 0.01).collect(),
        )
        .unwrap()
    }

    #[test]
    fn hundred_frames_gives_three_blocks() {
        let cfg = AlterationConfig::default();
        assert_eq!(cfg.num_blocks(100), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = time_alteration(&ramp(100, 4), &cfg, &mut rng).unwrap();
            assert_eq!(a.blocks.len(), 3);
            assert!(a.mask.iter().filter(|&&m| m).count() <= 21);
        }
    }

    #[test]
    fn zero_fraction_is_identity() {
        let cfg = AlterationConfig {
            target_mask_frac: 0.0,
            ..Default::default()
        };
        let x = ramp(30, 4);
        let a = time_alteration(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(a.features, x);
        assert!(a.mask.iter().all(|m| !m));
    }

    #[test]
    fn short_utterance_is_rejected() {
        let r = time_alteration(&ramp(6, 4), &AlterationConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::TooShort(_))));
    }

    #[test]
    fn zeroed_blocks_and_unmarked_frames() {
        let cfg = AlterationConfig {
            zero_prob: 1.0,
            replace_prob: 0.0,
            keep_prob: 0.0,
            ..Default::default()
        };
        let x = ramp(120, 5);
        let a = time_alteration(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for t in 0..120 {
            if a.mask[t] {
                assert!(a.features.frame(t).iter().all(|&v| v == 0.0));
            } else {
                assert_eq!(a.features.frame(t), x.frame(t));
            }
        }
    }

    #[test]
    fn replaced_frames_come_from_the_same_utterance() {
        let cfg = AlterationConfig {
            zero_prob: 0.0,
            replace_prob: 1.0,
            keep_prob: 0.0,
            ..Default::default()
        };
        let x = ramp(60, 3);
        let a = time_alteration(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for t in 0..60 {
            let row = a.features.frame(t);
            assert!((0..60).any(|s| x.frame(s) == row));
        }
    }

    #[test]
    fn frequency_mask_columns_are_zero() {
        let cfg = AlterationConfig::default();
        let x = ramp(10, 80);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = frequency_alteration(&x, &cfg, &mut rng).unwrap();
            assert_eq!(a.mask.iter().filter(|&&m| m).count(), a.width);
            for t in 0..10 {
                for f in 0..80 {
                    if a.mask[f] {
                        assert_eq!(a.features.get(t, f), 0.0);
                    } else {
                        assert_eq!(a.features.get(t, f), x.get(t, f));
                    }
                }
            }
        }
    }

    #[test]
    fn frequency_width_zero_is_identity() {
        let cfg = AlterationConfig {
            max_freq_channels: 0,
            ..Default::default()
        };
        let x = ramp(10, 8);
        let a = frequency_alteration(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(a.features, x);
        assert_eq!(a.width, 0);
    }

    #[test]
    fn magnitude_noise_statistics() {
        let cfg = AlterationConfig {
            magnitude_prob: 1.0,
            ..Default::default()
        };
        let x = ramp(100, 100);
        let a = magnitude_alteration(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(a.noise_applied);
        let d: Vec<f64> = a.features.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 0.2).abs() < 0.01, "{var}");

        let off = AlterationConfig {
            magnitude_prob: 0.0,
            ..Default::default()
        };
        let b = magnitude_alteration(&x, &off, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(b.features, x);
    }

    #[test]
    fn disabled_config_is_identity_and_seeded_runs_repeat() {
        let x = ramp(40, 20);
        let o = make_training_pair(&x, &AlterationConfig::disabled(), &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(o.corrupted, o.clean);

        let cfg = AlterationConfig::default();
        let a = make_training_pair(&ramp(200, 80), &cfg, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        let b = make_training_pair(&ramp(200, 80), &cfg, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_probabilities_are_rejected() {
        let cfg = AlterationConfig {
            keep_prob: 0.3,
            ..Default::default()
        };
        assert!(cfg.validate(80).is_err());
    }

    #[test]
    fn l1_loss_values_and_gradient() {
        let clean = ramp(4, 3);
        let outcome = make_training_pair(&clean, &AlterationConfig::disabled(), &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let mut tape = Tape::new();
        let p = tape.constant(clean.to_tensor());
        let l = l1_reconstruction_loss(&mut tape, p, &outcome).unwrap();
        assert_eq!(tape.value(l).data()[0], 0.0);

        let shifted = Tensor::from_fn(&[4, 3], |i| clean.data()[i] + 1.0);
        let p = tape.constant(shifted);
        let l = l1_reconstruction_loss(&mut tape, p, &outcome).unwrap();
        assert!((tape.value(l).data()[0] - 1.0).abs() < 1e-12);

        let wrong = tape.constant(Tensor::zeros(&[3, 3]));
        assert!(l1_reconstruction_loss(&mut tape, wrong, &outcome).is_err());

        let pred = Tensor::from_fn(&[4, 3], |i| clean.data()[i] + if i % 2 == 0 { 0.3 } else { -0.2 });
        let err = finite_diff_check(|t, v| l1_reconstruction_loss(t, v, &outcome), &pred, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
