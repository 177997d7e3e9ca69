//! Forward pass of the residual dilated temporal CNN.
//!
//! Block `i` is `Conv1D(k=5, d=i+1) -> LeakyReLU -> Conv1D(k=1) -> LeakyReLU`
//! added back onto its input. All convolutions use symmetric zero padding so
//! every layer preserves the frame count. Activations are carried in f64.

use ndarray::Array2;

use super::weights::{EmbeddingTap, ModelMetadata, ModelWeights, KERNEL_SIZE};
use super::{EmbeddingError, EmbeddingSequence};
use crate::audio::MelSpectrogram;

pub const LEAKY_SLOPE: f64 = 0.01;

fn leaky(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Time-major activations: `data[t * width + c]`.
struct Activations {
    frames: usize,
    width: usize,
    data: Vec<f64>,
}

impl Activations {
    fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.width..(t + 1) * self.width]
    }
}

/// Dilated 1-D convolution. `kernel` is `[out][in][k]`, as stored.
fn conv1d(
    input: &Activations,
    kernel: &[f32],
    bias: &[f32],
    out_width: usize,
    taps: usize,
    dilation: usize,
) -> Activations {
    let in_width = input.width;
    let half = (taps - 1) / 2;
    let mut data = vec![0.0f64; input.frames * out_width];
    for t in 0..input.frames {
        let out = &mut data[t * out_width..(t + 1) * out_width];
        for (o, slot) in out.iter_mut().enumerate() {
            *slot = bias[o] as f64;
        }
        for k in 0..taps {
            let offset = k as isize - half as isize;
            let src = t as isize + offset * dilation as isize;
            if src < 0 || src >= input.frames as isize {
                continue;
            }
            let x = input.row(src as usize);
            for (o, slot) in out.iter_mut().enumerate() {
                let w = &kernel[o * in_width * taps..(o + 1) * in_width * taps];
                let mut acc = 0.0f64;
                for (i, &xi) in x.iter().enumerate() {
                    acc += w[i * taps + k] as f64 * xi;
                }
                *slot += acc;
            }
        }
    }
    Activations {
        frames: input.frames,
        width: out_width,
        data,
    }
}

fn linear(input: &Activations, weight: &[f32], bias: &[f32], out_width: usize) -> Activations {
    conv1d(input, weight, bias, out_width, 1, 1)
}

/// Runs the keyword model and returns per-frame embeddings plus the
/// speech-activity posterior (last channel of the sigmoid head).
pub fn infer(weights: &ModelWeights, mel: &MelSpectrogram) -> Result<EmbeddingSequence, EmbeddingError> {
    let meta: &ModelMetadata = weights.metadata();
    if mel.n_mels() != meta.input_dim {
        return Err(EmbeddingError::DimensionMismatch {
            expected: meta.input_dim,
            found: mel.n_mels(),
        });
    }
    let t = mel.num_frames();
    let c = meta.input_dim;
    let get = |name: &str| &weights.tensor(name).expect("validated at load").data;

    let mut x = Activations {
        frames: t,
        width: c,
        data: mel.frames().iter().map(|&v| v as f64).collect(),
    };

    for block in 0..meta.num_blocks {
        let mut h = conv1d(
            &x,
            get(&format!("blocks.{block}.conv1.weight")),
            get(&format!("blocks.{block}.conv1.bias")),
            c,
            KERNEL_SIZE,
            ModelMetadata::dilation(block),
        );
        h.data.iter_mut().for_each(|v| *v = leaky(*v));
        let mut h = linear(
            &h,
            get(&format!("blocks.{block}.conv2.weight")),
            get(&format!("blocks.{block}.conv2.bias")),
            c,
        );
        h.data.iter_mut().for_each(|v| *v = leaky(*v));
        for (xi, hi) in x.data.iter_mut().zip(&h.data) {
            *xi += hi;
        }
    }

    let projection = linear(&x, get("embed.weight"), get("embed.bias"), meta.embed_dim);
    let activated = Activations {
        frames: t,
        width: meta.embed_dim,
        data: projection.data.iter().map(|&v| leaky(v)).collect(),
    };
    let head = linear(&activated, get("head.weight"), get("head.bias"), meta.head_dim());
    let sad_channel = meta.head_dim() - 1;
    let sad: Vec<f32> = (0..t)
        .map(|i| sigmoid(head.row(i)[sad_channel]) as f32)
        .collect();

    let exported = match meta.tap {
        EmbeddingTap::Projection => &projection,
        EmbeddingTap::ProjectionActivated => &activated,
    };
    let frames = Array2::from_shape_vec(
        (t, meta.embed_dim),
        exported.data.iter().map(|&v| v as f32).collect(),
    )
    .expect("shape matches");
    Ok(EmbeddingSequence::new(frames, sad).expect("frame and sad lengths agree"))
}
