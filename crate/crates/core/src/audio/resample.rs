use std::f64::consts::PI;

/// Zero crossings of the sinc kernel on each side of the output instant.
const ZERO_CROSSINGS: f64 = 16.0;

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// The output holds `round(len * to / from)` samples. When downsampling the
/// kernel cutoff drops to the target Nyquist frequency.
pub fn resample(input: &[f32], from_hz: u32, to_hz: u32) -> Vec<f32> {
    if from_hz == to_hz || input.is_empty() {
        return input.to_vec();
    }
    let out_len =
        ((input.len() as u64 * to_hz as u64 + from_hz as u64 / 2) / from_hz as u64) as usize;
    let step = from_hz as f64 / to_hz as f64;
    let cutoff = (to_hz as f64 / from_hz as f64).min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;

    (0..out_len)
        .map(|n| {
            let t = n as f64 * step;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(input.len() - 1);
            let mut acc = 0.0f64;
            for (k, &x) in input.iter().enumerate().take(hi + 1).skip(lo) {
                let dt = t - k as f64;
                acc += x as f64 * cutoff * sinc(cutoff * dt) * hann(dt / half_width);
            }
            acc as f32
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Hann taper on [-1, 1].
fn hann(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        0.5 + 0.5 * (PI * u).cos()
    }
}
