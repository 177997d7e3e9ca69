use super::{AudioClip, AudioError, SAMPLE_RATE_HZ};

/// Frames quieter than this (RMS re full scale) are excluded from power measurement.
pub const ACTIVITY_GATE_DBFS: f64 = -60.0;

/// Gate frame length in samples (10 ms at 16 kHz).
pub const GATE_FRAME_LEN: usize = 160;

#[derive(Debug, Clone)]
pub struct MixOutcome {
    pub clip: AudioClip,
    /// Gain applied to the looped noise before adding it.
    pub noise_gain: f64,
    /// Samples that had to be clamped to [-1, 1].
    pub clipped_samples: usize,
}

/// Per-sample mask of the gate frames whose RMS exceeds [`ACTIVITY_GATE_DBFS`].
pub fn active_frame_mask(samples: &[f32]) -> Vec<bool> {
    let gate_power = 10f64.powf(ACTIVITY_GATE_DBFS / 10.0);
    let mut mask = Vec::with_capacity(samples.len());
    for frame in samples.chunks(GATE_FRAME_LEN) {
        let power = frame.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / frame.len() as f64;
        mask.extend(std::iter::repeat_n(power > gate_power, frame.len()));
    }
    mask
}

/// Adds `noise` to `speech` so the speech-to-noise power ratio over the
/// speech's active region equals `snr_db`.
///
/// The noise is looped or truncated to the speech length. `snr_db = +inf`
/// returns the speech untouched.
pub fn mix_noise_at_snr(
    speech: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
) -> Result<MixOutcome, AudioError> {
    speech.require_rate(SAMPLE_RATE_HZ)?;
    noise.require_rate(SAMPLE_RATE_HZ)?;
    if noise.samples().iter().all(|&s| s == 0.0) {
        return Err(AudioError::SilentNoise);
    }
    if snr_db == f64::INFINITY {
        return Ok(MixOutcome {
            clip: speech.clone(),
            noise_gain: 0.0,
            clipped_samples: 0,
        });
    }

    let s = speech.samples();
    let looped: Vec<f32> = noise.samples().iter().copied().cycle().take(s.len()).collect();
    let mask = active_frame_mask(s);
    let mut speech_power = 0.0f64;
    let mut noise_power = 0.0f64;
    let mut active = 0usize;
    for ((&x, &n), &on) in s.iter().zip(&looped).zip(&mask) {
        if on {
            speech_power += (x as f64).powi(2);
            noise_power += (n as f64).powi(2);
            active += 1;
        }
    }
    if active == 0 {
        return Err(AudioError::SilentSpeech(ACTIVITY_GATE_DBFS));
    }
    if noise_power == 0.0 {
        return Err(AudioError::SilentNoise);
    }
    speech_power /= active as f64;
    noise_power /= active as f64;

    let gain = (speech_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut clipped = 0usize;
    let mixed = s
        .iter()
        .zip(&looped)
        .map(|(&x, &n)| {
            let v = x as f64 + gain * n as f64;
            if v.abs() > 1.0 {
                clipped += 1;
            }
            v.clamp(-1.0, 1.0) as f32
        })
        .collect();
    if clipped > 0 {
        log::warn!("noise mix at {snr_db} dB clipped {clipped} samples");
    }
    Ok(MixOutcome {
        clip: AudioClip::new(mixed, SAMPLE_RATE_HZ)?,
        noise_gain: gain,
        clipped_samples: clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn constant_rms(rms: f32, n: usize, flip: bool) -> AudioClip {
        // Alternating +-rms has RMS exactly `rms`.
        let s = (0..n)
            .map(|i| if (i % 2 == 0) ^ flip { rms } else { -rms })
            .collect();
        AudioClip::new(s, 16_000).unwrap()
    }

    #[test]
    fn equal_power_at_zero_db_uses_unit_gain() {
        let out = mix_noise_at_snr(&constant_rms(0.1, 1600, false), &constant_rms(0.1, 800, true), 0.0)
            .unwrap();
        assert!((out.noise_gain - 1.0).abs() < 1e-9);
    }

    #[test]
    fn twenty_db_scales_noise_by_a_tenth() {
        let out = mix_noise_at_snr(&constant_rms(0.1, 1600, false), &constant_rms(0.1, 800, true), 20.0)
            .unwrap();
        assert!((out.noise_gain - 0.1).abs() < 1e-9);
    }

    #[test]
    fn infinite_snr_is_identity() {
        let speech = constant_rms(0.2, 1000, false);
        let out = mix_noise_at_snr(&speech, &constant_rms(0.5, 10, false), f64::INFINITY).unwrap();
        assert_eq!(out.clip, speech);
    }

    #[test]
    fn silent_inputs_are_errors() {
        let speech = constant_rms(0.2, 1000, false);
        let silent = AudioClip::new(vec![0.0; 100], 16_000).unwrap();
        assert!(matches!(
            mix_noise_at_snr(&speech, &silent, 10.0),
            Err(AudioError::SilentNoise)
        ));
        let whisper = AudioClip::new(vec![1e-5; 1000], 16_000).unwrap();
        assert!(matches!(
            mix_noise_at_snr(&whisper, &speech, 10.0),
            Err(AudioError::SilentSpeech(_))
        ));
    }

    #[test]
    fn clipping_is_counted() {
        let speech = constant_rms(0.9, 1600, false);
        let noise = constant_rms(0.9, 1600, false);
        let out = mix_noise_at_snr(&speech, &noise, 0.0).unwrap();
        assert!(out.clipped_samples > 0);
        assert!(out.clip.samples().iter().all(|s| s.abs() <= 1.0));
    }

    #[test]
    fn gate_excludes_leading_silence() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut s = vec![0.0f32; 3200];
        s.extend((0..3200).map(|_| rng.gen_range(-0.3f32..0.3)));
        let mask = active_frame_mask(&s);
        assert!(mask[..3200].iter().all(|m| !m));
        assert!(mask[3200..].iter().all(|&m| m));
    }
}
