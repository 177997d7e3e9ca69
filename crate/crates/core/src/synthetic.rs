//! Synthetic phrase corpus for end-to-end benchmarks.
//!
//! Each speaker gets a bank of tonal "syllables" (two or three gliding
//! partials). A phrase is a fixed sequence of syllables; every rendition
//! re-synthesizes it with a random time warp, small pitch and level jitter,
//! variable leading and trailing silence, and additive white noise. Aggressor
//! utterances are longer random syllable strings from the same bank.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::audio::{mix_noise_at_snr, write_wav_i16, AudioClip, AudioError, SAMPLE_RATE_HZ};
use crate::eval::AGGRESSOR;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub speakers: usize,
    pub phrases: usize,
    /// Near-mic renditions per phrase in the first session.
    pub renditions: usize,
    /// Far-mic renditions per phrase in the first session.
    pub far_renditions: usize,
    /// Extra sessions, each with `renditions` near-mic renditions per phrase.
    pub other_sessions: usize,
    pub aggressors: usize,
    pub snr_db: f64,
    /// Maximum relative time stretch, e.g. 0.2 for ±20%.
    pub time_warp: f64,
    pub syllable_bank: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            speakers: 1,
            phrases: 10,
            renditions: 5,
            far_renditions: 0,
            other_sessions: 0,
            aggressors: 10,
            snr_db: 20.0,
            time_warp: 0.2,
            syllable_bank: 24,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Syllable {
    /// `(start frequency Hz, relative amplitude)`.
    partials: Vec<(f64, f64)>,
    duration: f64,
    /// End-to-start frequency ratio.
    glide: f64,
}

fn syllable_bank(rng: &mut ChaCha8Rng, n: usize) -> Vec<Syllable> {
    (0..n)
        .map(|_| {
            let count = rng.gen_range(2..=3);
            let partials = (0..count)
                .map(|_| (rng.gen_range(250.0..3500.0), rng.gen_range(0.3..1.0)))
                .collect();
            Syllable {
                partials,
                duration: rng.gen_range(0.08..0.16),
                glide: rng.gen_range(0.8..1.25),
            }
        })
        .collect()
}

/// Distinct syllable sequences of length 3 to 5.
fn phrase_recipes(rng: &mut ChaCha8Rng, bank: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.gen_range(3..=5);
        let recipe: Vec<usize> = (0..len).map(|_| rng.gen_range(0..bank)).collect();
        if !out.contains(&recipe) {
            out.push(recipe);
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Rendering {
    warp: f64,
    pitch: f64,
    level: f64,
}

fn render(bank: &[Syllable], recipe: &[usize], r: Rendering, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let sr = SAMPLE_RATE_HZ as f64;
    let silence = |rng: &mut ChaCha8Rng| vec![0.0f32; (rng.gen_range(0.08..0.16) * sr) as usize];
    let mut out = silence(rng);
    for (k, &idx) in recipe.iter().enumerate() {
        if k > 0 {
            out.extend(vec![0.0f32; (r.warp * 0.03 * sr) as usize]);
        }
        let syl = &bank[idx];
        let local = (r.warp * rng.gen_range(0.97..1.03)).clamp(0.0, f64::MAX);
        let len = (syl.duration * local * sr) as usize;
        let ramp = (0.01 * sr) as usize;
        let norm: f64 = syl.partials.iter().map(|p| p.1).sum();
        let mut phases = vec![0.0f64; syl.partials.len()];
        for i in 0..len {
            let pos = i as f64 / len as f64;
            let env = if i < ramp {
                0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos()
            } else if len - i < ramp {
                0.5 - 0.5 * (PI * (len - i) as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            let mut v = 0.0;
            for ((f0, amp), ph) in syl.partials.iter().zip(phases.iter_mut()) {
                let f = f0 * r.pitch * syl.glide.powf(pos);
                *ph += 2.0 * PI * f / sr;
                v += amp * ph.sin();
            }
            out.push((r.level * env * v / norm) as f32);
        }
    }
    out.extend(silence(rng));
    out
}

/// Muffled, quieter version of a near-mic signal.
fn far_field(samples: &[f32]) -> Vec<f32> {
    let mut y = 0.0f32;
    samples
        .iter()
        .map(|&x| {
            y = 0.6 * y + 0.4 * x;
            0.5 * y
        })
        .collect()
}

fn add_noise(samples: Vec<f32>, snr_db: f64, rng: &mut ChaCha8Rng) -> Result<AudioClip, AudioError> {
    let clip = AudioClip::new(samples, SAMPLE_RATE_HZ)?;
    if snr_db == f64::INFINITY {
        return Ok(clip);
    }
    let noise: Vec<f32> = (0..clip.len()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Ok(mix_noise_at_snr(&clip, &AudioClip::new(noise, SAMPLE_RATE_HZ)?, snr_db)?.clip)
}

/// Writes WAV files and `manifest.jsonl` under `dir`; returns the manifest path.
pub fn generate_corpus(cfg: &SyntheticConfig, dir: impl AsRef<Path>) -> Result<PathBuf, AudioError> {
    let dir = dir.as_ref();
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| AudioError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest_path = dir.join("manifest.jsonl");
    let mut lines = Vec::new();

    for s in 0..cfg.speakers {
        let speaker = format!("spk{s:02}");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(s as u64 + 1)));
        let bank = syllable_bank(&mut rng, cfg.syllable_bank);
        let recipes = phrase_recipes(&mut rng, cfg.syllable_bank, cfg.phrases);
        let voice = rng.gen_range(0.9..1.1);
        let spk_dir = dir.join(&speaker);
        std::fs::create_dir_all(&spk_dir).map_err(io_err(&spk_dir))?;

        let rendition = |rng: &mut ChaCha8Rng, recipe: &[usize], pitch_shift: f64| {
            let r = Rendering {
                warp: 1.0 + rng.gen_range(-cfg.time_warp..=cfg.time_warp),
                pitch: voice * pitch_shift * rng.gen_range(0.98..1.02),
                level: rng.gen_range(0.3..0.6),
            };
            render(&bank, recipe, r, rng)
        };

        let sessions = 1 + cfg.other_sessions;
        for session in 0..sessions {
            let session_id = format!("sess{session}");
            let shift = 1.0 + 0.03 * session as f64;
            for (p, recipe) in recipes.iter().enumerate() {
                let far = if session == 0 { cfg.far_renditions } else { 0 };
                for rep in 0..cfg.renditions + far {
                    let is_far = rep >= cfg.renditions;
                    let mut samples = rendition(&mut rng, recipe, shift);
                    if is_far {
                        samples = far_field(&samples);
                    }
                    let clip = add_noise(samples, cfg.snr_db, &mut rng)?;
                    let rel = format!("{speaker}/{session_id}_p{p:02}_r{rep}.wav");
                    write_wav_i16(dir.join(&rel), &clip)?;
                    lines.push(json!({
                        "path": rel,
                        "speaker": speaker,
                        "phrase": format!("phrase{p:02}"),
                        "session": session_id,
                        "mic": if is_far { "far" } else { "near" },
                        "rep": rep,
                    }));
                }
            }
        }
        for a in 0..cfg.aggressors {
            let len = rng.gen_range(6..=9);
            let mut recipe: Vec<usize> = (0..cfg.syllable_bank).collect();
            recipe.shuffle(&mut rng);
            recipe.truncate(len.min(cfg.syllable_bank));
            let samples = rendition(&mut rng, &recipe, 1.0);
            let clip = add_noise(samples, cfg.snr_db, &mut rng)?;
            let rel = format!("{speaker}/aggressor_{a:02}.wav");
            write_wav_i16(dir.join(&rel), &clip)?;
            lines.push(json!({
                "path": rel,
                "speaker": speaker,
                "phrase": AGGRESSOR,
                "session": format!("sess{}", a % sessions),
                "mic": "near",
            }));
        }
    }

    let mut f = std::fs::File::create(&manifest_path).map_err(io_err(&manifest_path))?;
    for l in &lines {
        writeln!(f, "{l}").map_err(io_err(&manifest_path))?;
    }
    Ok(manifest_path)
}
