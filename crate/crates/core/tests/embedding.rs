mod common;

use common::{random_matrix, reference_forward};
use lpm_core::audio::MelSpectrogram;
use lpm_core::embedding::{
    encode_lpmw, infer, load_weights, random_tensors, random_weights, EmbeddingError, EmbeddingTap, ModelMetadata,
    ModelWeights, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn mel(seed: u64, t: usize) -> MelSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MelSpectrogram::from_frames(random_matrix(&mut rng, t, 64) * 4.0)
}

#[test]
fn forward_pass_matches_direct_convolution() {
    for tap in [EmbeddingTap::Projection, EmbeddingTap::ProjectionActivated] {
        let meta = ModelMetadata { tap, ..ModelMetadata::default() };
        let w = random_weights(&meta, 17);
        let m = mel(5, 60);
        let out = infer(&w, &m).unwrap();
        let (proj, act, sad) = reference_forward(&w, m.frames());
        let want = if tap == EmbeddingTap::Projection { &proj } else { &act };
        for (a, b) in out.frames().iter().zip(want.iter()) {
            assert!((*a as f64 - b).abs() < 1e-5, "{a} vs {b}");
        }
        for (a, b) in out.sad().iter().zip(&sad) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }
}

#[test]
fn receptive_field_is_bounded() {
    let meta = ModelMetadata::default();
    assert_eq!(meta.receptive_half_width(), 42);
    assert_eq!(meta.receptive_field(), 85);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for probe in 0..20u64 {
        let w = random_weights(&meta, 1000 + probe);
        let t = 200;
        let base = mel(probe, t);
        let out = infer(&w, &base).unwrap();
        let k = rng.gen_range(0..t);
        let mut frames = base.frames().clone();
        for v in frames.row_mut(k).iter_mut() {
            *v += rng.gen_range(1.0..5.0);
        }
        let moved = infer(&w, &MelSpectrogram::from_frames(frames)).unwrap();
        for j in 0..t {
            let same = out.frames().row(j) == moved.frames().row(j) && out.sad()[j] == moved.sad()[j];
            if j.abs_diff(k) > 42 {
                assert!(same, "probe {probe}: frame {k} leaked into output {j}");
            }
            if j == k {
                assert!(!same, "perturbation had no local effect");
            }
        }
    }
}

#[test]
fn weight_norm_pairs_fold_to_direct_kernels() {
    let meta = ModelMetadata { input_dim: 8, embed_dim: 6, vocab_size: 3, num_blocks: 2, ..ModelMetadata::default() };
    let pairs = random_tensors(&meta, 4);
    let folded = ModelWeights::from_bytes(&encode_lpmw(&meta, &pairs)).unwrap();
    let plain: Vec<(String, Tensor)> = meta
        .architecture_manifest()
        .into_iter()
        .map(|(name, _)| (name.clone(), folded.tensor(&name).unwrap().clone()))
        .collect();
    for (name, t) in &plain {
        if let Some((_, v)) = pairs.iter().find(|(n, _)| *n == format!("{name}_v")) {
            let g = &pairs.iter().find(|(n, _)| *n == format!("{name}_g")).unwrap().1;
            let per_out = v.data.len() / v.dims[0];
            for o in 0..v.dims[0] {
                let row = &v.data[o * per_out..(o + 1) * per_out];
                let norm = row.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
                for (i, &x) in row.iter().enumerate() {
                    let want = g.data[o] as f64 * x as f64 / norm;
                    assert!((t.data[o * per_out + i] as f64 - want).abs() < 1e-6);
                }
            }
        }
    }
    // Storing the folded kernels directly yields an equivalent model.
    let direct = ModelWeights::from_bytes(&encode_lpmw(&meta, &plain)).unwrap();
    let m = MelSpectrogram::from_frames(random_matrix(&mut ChaCha8Rng::seed_from_u64(1), 20, 8));
    assert_eq!(infer(&folded, &m).unwrap(), infer(&direct, &m).unwrap());
}

#[test]
fn file_roundtrip_hash_and_corruption() {
    let meta = ModelMetadata::default();
    let bytes = encode_lpmw(&meta, &random_tensors(&meta, 8));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.lpmw");
    std::fs::write(&p, &bytes).unwrap();
    let w = load_weights(&p).unwrap();
    assert_eq!(w.hash(), <[u8; 32]>::from(Sha256::digest(&bytes)));
    assert_eq!(w.metadata(), &meta);

    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x40;
    std::fs::write(&p, &bad).unwrap();
    assert!(matches!(load_weights(&p), Err(EmbeddingError::ChecksumMismatch { .. })));
    std::fs::write(&p, &bytes[..bytes.len() - 7]).unwrap();
    assert!(load_weights(&p).is_err());
    assert!(matches!(
        load_weights(dir.path().join("missing.lpmw")),
        Err(EmbeddingError::Io { .. })
    ));
}

#[test]
fn inference_is_deterministic() {
    let w = random_weights(&ModelMetadata::default(), 2);
    let m = mel(3, 50);
    assert_eq!(infer(&w, &m).unwrap(), infer(&w, &m).unwrap());
}
