//! Log-mel features for a synthetic two-tone waveform, with the speed and
//! volume augmentation copies and the 8 kHz to 16 kHz resampler.

use std::f64::consts::PI;

use mamchain::features::{augment, compute_fbank, resample_8k_to_16k, FbankConfig, Waveform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tone(freqs: &[f64], rate: u32, n: usize) -> Waveform {
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate as f64;
            freqs.iter().map(|f| 0.3 * (2.0 * PI * f * t).sin()).sum()
        })
        .collect();
    Waveform::new(samples, rate)
}

fn main() -> mamchain::Result<()> {
    let cfg = FbankConfig::default();
    let wave = tone(&[440.0, 2500.0], 16_000, 16_000);

    let dir = std::env::temp_dir().join("mamchain-fbank-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("tone.wav");
    wave.write_wav(&path)?;
    let wave = Waveform::read_wav(&path)?;

    let fb = compute_fbank(&wave, &cfg)?;
    println!("{} samples -> {} frames x {} mel bins", wave.len(), fb.frames(), fb.dim());
    let row = fb.frame(fb.frames() / 2);
    let peak = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
    println!("loudest bin {peak} (centre {:.0} Hz)", cfg.mel_centers_hz()[peak]);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (k, w) in augment(&wave, &mut rng)?.iter().enumerate() {
        let peak = w.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        println!("copy {k}: {} samples, {} frames, peak {peak:.3}", w.len(), cfg.num_frames(w.len()));
    }

    let narrow = tone(&[1000.0], 8000, 8000);
    let wide = resample_8k_to_16k(&narrow)?;
    println!("8 kHz: {} samples -> 16 kHz: {} samples", narrow.len(), wide.len());
    Ok(())
}
