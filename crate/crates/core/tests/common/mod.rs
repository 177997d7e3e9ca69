//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use lpm_core::embedding::ModelWeights;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => (1.0 - dot / (na * nb)).max(0.0),
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn rows(m: &Array2<f32>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

/// Enumerates every monotone path with unit steps and returns the cost of
/// the cheapest one (ties go to the shorter path), optionally divided by
/// its cell count. `band` restricts cells to `|i - j| <= r`.
pub fn brute_force_dtw(
    a: &Array2<f32>,
    b: &Array2<f32>,
    cosine_metric: bool,
    normalize: bool,
    band: Option<usize>,
) -> f64 {
    let (ra, rb) = (rows(a), rows(b));
    let local = |i: usize, j: usize| {
        if cosine_metric {
            cosine(&ra[i], &rb[j])
        } else {
            euclidean(&ra[i], &rb[j])
        }
    };
    let (n, m) = (ra.len(), rb.len());
    let mut best: Option<(f64, usize)> = None;
    let mut stack = vec![(0usize, 0usize, local(0, 0), 1usize)];
    while let Some((i, j, cost, len)) = stack.pop() {
        if i == n - 1 && j == m - 1 {
            best = match best {
                Some((c, l)) if c < cost - 1e-12 || ((c - cost).abs() <= 1e-12 && l <= len) => Some((c, l)),
                _ => Some((cost, len)),
            };
            continue;
        }
        for (di, dj) in [(1, 0), (0, 1), (1, 1)] {
            let (ni, nj) = (i + di, j + dj);
            if ni < n && nj < m && band.is_none_or(|r| ni.abs_diff(nj) <= r) {
                stack.push((ni, nj, cost + local(ni, nj), len + 1));
            }
        }
    }
    let (cost, len) = best.expect("a path exists");
    if normalize {
        cost / len as f64
    } else {
        cost
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK mel filters over `n_fft / 2 + 1` bins.
pub fn reference_filters(n_mels: usize, n_fft: usize, sr: f64, fmin: f64, fmax: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let pts: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bins = n_fft / 2 + 1;
    let filters = (0..n_mels)
        .map(|m| {
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sr / n_fft as f64;
                    let up = (f - pts[m]) / (pts[m + 1] - pts[m]);
                    let down = (pts[m + 2] - f) / (pts[m + 2] - pts[m + 1]);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect();
    (filters, pts[1..=n_mels].to_vec())
}

/// Log-mel via a direct O(N^2) DFT of each periodic-Hann-windowed frame.
pub fn naive_log_mel(samples: &[f32]) -> Array2<f64> {
    let (win, hop, n_fft, n_mels) = (400usize, 160usize, 512usize, 64usize);
    let (filters, _) = reference_filters(n_mels, n_fft, 16_000.0, 60.0, 7800.0);
    let frames = (samples.len() - win) / hop + 1;
    let mut out = Array2::zeros((frames, n_mels));
    for t in 0..frames {
        let x: Vec<f64> = (0..win)
            .map(|n| samples[t * hop + n] as f64 * (0.5 - 0.5 * (2.0 * PI * n as f64 / win as f64).cos()))
            .collect();
        let power: Vec<f64> = (0..=n_fft / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, &v) in x.iter().enumerate() {
                    let ang = -2.0 * PI * (k * n) as f64 / n_fft as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                re * re + im * im
            })
            .collect();
        for (m, f) in filters.iter().enumerate() {
            let e: f64 = f.iter().zip(&power).map(|(w, p)| w * p).sum();
            out[[t, m]] = (e + 1e-6).ln();
        }
    }
    out
}

fn leaky(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        0.01 * x
    }
}

/// Direct dilated convolution, `w[o][i][k]`, symmetric zero padding.
fn direct_conv(x: &[Vec<f64>], w: &[f32], bias: &[f32], out_c: usize, taps: usize, dil: usize) -> Vec<Vec<f64>> {
    let t = x.len();
    let in_c = x[0].len();
    let half = (taps / 2) as isize;
    (0..t)
        .map(|n| {
            (0..out_c)
                .map(|o| {
                    let mut s = bias[o] as f64;
                    for i in 0..in_c {
                        for k in 0..taps {
                            let src = n as isize + (k as isize - half) * dil as isize;
                            if (0..t as isize).contains(&src) {
                                s += w[(o * in_c + i) * taps + k] as f64 * x[src as usize][i];
                            }
                        }
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// Straight-line forward pass returning (projection, activated projection, sad).
pub fn reference_forward(w: &ModelWeights, mel: &Array2<f32>) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let meta = w.metadata();
    let c = meta.input_dim;
    let get = |n: &str| &w.tensor(n).unwrap().data;
    let mut x = rows(mel);
    for b in 0..meta.num_blocks {
        let h = direct_conv(&x, get(&format!("blocks.{b}.conv1.weight")), get(&format!("blocks.{b}.conv1.bias")), c, 5, b + 1);
        let h: Vec<Vec<f64>> = h.into_iter().map(|r| r.into_iter().map(leaky).collect()).collect();
        let h = direct_conv(&h, get(&format!("blocks.{b}.conv2.weight")), get(&format!("blocks.{b}.conv2.bias")), c, 1, 1);
        for (xr, hr) in x.iter_mut().zip(h) {
            for (xv, hv) in xr.iter_mut().zip(hr) {
                *xv += leaky(hv);
            }
        }
    }
    let proj = direct_conv(&x, get("embed.weight"), get("embed.bias"), meta.embed_dim, 1, 1);
    let act: Vec<Vec<f64>> = proj.iter().map(|r| r.iter().copied().map(leaky).collect()).collect();
    let head = direct_conv(&act, get("head.weight"), get("head.bias"), meta.vocab_size + 1, 1, 1);
    let sad = head.iter().map(|r| 1.0 / (1.0 + (-r[meta.vocab_size]).exp())).collect();
    let to_arr = |v: &Vec<Vec<f64>>| {
        Array2::from_shape_vec((v.len(), v[0].len()), v.iter().flatten().copied().collect()).unwrap()
    };
    (to_arr(&proj), to_arr(&act), sad)
}

/// Phrase-subset sampler written from its description: SHA-256 over
/// length-prefixed parts seeds a ChaCha8 stream, which drives a partial
/// Fisher-Yates shuffle of the sorted pool.
pub fn reference_sample(pool: &[String], n: usize, seed: u64, trial: usize, speaker: &str) -> Vec<String> {
    let mut h = Sha256::new();
    for part in [&b"phrases"[..], &seed.to_le_bytes(), &(trial as u64).to_le_bytes(), speaker.as_bytes()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    let digest = h.finalize();
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().unwrap()));
    let mut items = pool.to_vec();
    items.sort();
    for i in 0..n {
        let j = rng.gen_range(i..items.len());
        items.swap(i, j);
    }
    let mut chosen = items[..n].to_vec();
    chosen.sort();
    chosen
}

/// Random f32 matrix with entries in [-1, 1].
pub fn random_matrix(rng: &mut ChaCha8Rng, t: usize, f: usize) -> Array2<f32> {
    Array2::from_shape_fn((t, f), |_| rng.gen_range(-1.0f32..1.0))
}
