//! Dynamic time warping between variable-length feature sequences.
//!
//! Sequences are row-major `t x f` matrices, one feature vector per frame.
//! The step pattern is the symmetric `{(1,1), (1,0), (0,1)}` set with unit
//! weights, and the default local cost is cosine distance.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LocalMetric {
    #[default]
    Cosine,
    Euclidean,
}

impl std::str::FromStr for LocalMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "euclidean" => Ok(Self::Euclidean),
            other => Err(format!("unknown metric `{other}` (expected cosine|euclidean)")),
        }
    }
}

impl std::fmt::Display for LocalMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cosine => "cosine",
            Self::Euclidean => "euclidean",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DtwConfig {
    pub metric: LocalMetric,
    /// Divide the optimal cumulative cost by the number of cells on its path.
    pub normalize_by_path_length: bool,
    /// Sakoe-Chiba radius: cells with `|i - j| > radius` are excluded.
    pub band_radius: Option<usize>,
}

impl Default for DtwConfig {
    fn default() -> Self {
        Self {
            metric: LocalMetric::Cosine,
            normalize_by_path_length: true,
            band_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DtwError {
    #[error("sequence has no frames")]
    EmptySequence,
    #[error("feature dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("band radius {radius} cannot connect sequences of lengths {len_a} and {len_b}")]
    BandTooNarrow {
        radius: usize,
        len_a: usize,
        len_b: usize,
    },
    #[error("reference {index}: {source}")]
    InReference {
        index: usize,
        #[source]
        source: Box<DtwError>,
    },
    #[error("reference list is empty")]
    NoReferences,
}

/// A sequence with per-frame quantities the local metrics need, computed once.
///
/// For the cosine metric each frame is divided by its largest magnitude
/// before the squared norm is taken. That division is exact under any
/// scaling of the frame that is itself exact, so scores do not drift when
/// embeddings are rescaled.
#[derive(Debug, Clone)]
pub struct PreparedSequence {
    len: usize,
    dim: usize,
    raw: Vec<f64>,
    unit_scaled: Vec<f64>,
    sq_norms: Vec<f64>,
}

/// Four-lane dot product. Squared norms use the same routine, so a frame's
/// dot product with itself equals its squared norm exactly.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl PreparedSequence {
    pub fn new(frames: ArrayView2<'_, f32>) -> Self {
        let (len, dim) = frames.dim();
        let mut raw = Vec::with_capacity(len * dim);
        let mut unit_scaled = Vec::with_capacity(len * dim);
        let mut sq_norms = Vec::with_capacity(len);
        for row in frames.rows() {
            let start = raw.len();
            raw.extend(row.iter().map(|&v| v as f64));
            let frame = &raw[start..];
            let peak = frame.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if peak == 0.0 {
                unit_scaled.extend(std::iter::repeat_n(0.0, dim));
                sq_norms.push(0.0);
            } else {
                let s0 = unit_scaled.len();
                unit_scaled.extend(frame.iter().map(|v| v / peak));
                let u = &unit_scaled[s0..];
                sq_norms.push(dot(u, u));
            }
        }
        Self {
            len,
            dim,
            raw,
            unit_scaled,
            sq_norms,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn local(&self, i: usize, other: &Self, j: usize, metric: LocalMetric) -> f64 {
        let d = self.dim;
        match metric {
            LocalMetric::Cosine => {
                let (na, nb) = (self.sq_norms[i], other.sq_norms[j]);
                match (na == 0.0, nb == 0.0) {
                    (true, true) => 0.0,
                    (true, false) | (false, true) => 1.0,
                    (false, false) => {
                        let a = &self.unit_scaled[i * d..(i + 1) * d];
                        let b = &other.unit_scaled[j * d..(j + 1) * d];
                        (1.0 - dot(a, b) / (na * nb).sqrt()).clamp(0.0, 2.0)
                    }
                }
            }
            LocalMetric::Euclidean => {
                let a = &self.raw[i * d..(i + 1) * d];
                let b = &other.raw[j * d..(j + 1) * d];
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }
}

/// Local cost between two frames.
///
/// Cosine distance treats two zero vectors as identical (0) and a zero vector
/// against a nonzero one as orthogonal (1).
pub fn frame_distance(a: &[f32], b: &[f32], metric: LocalMetric) -> Result<f64, DtwError> {
    if a.len() != b.len() {
        return Err(DtwError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let pa = PreparedSequence::new(ArrayView2::from_shape((1, a.len()), a).expect("row shape"));
    let pb = PreparedSequence::new(ArrayView2::from_shape((1, b.len()), b).expect("row shape"));
    Ok(pa.local(0, &pb, 0, metric))
}

pub fn dtw_distance(
    a: ArrayView2<'_, f32>,
    b: ArrayView2<'_, f32>,
    cfg: &DtwConfig,
) -> Result<f64, DtwError> {
    dtw_prepared(&PreparedSequence::new(a), &PreparedSequence::new(b), cfg)
}

#[derive(Clone, Copy)]
struct Cell {
    cost: f64,
    len: u32,
}

const BLOCKED: Cell = Cell {
    cost: f64::INFINITY,
    len: u32::MAX,
};

impl Cell {
    /// Lower cumulative cost wins; equal costs prefer the shorter path.
    fn better(self, other: Cell) -> Cell {
        if other.cost < self.cost || (other.cost == self.cost && other.len < self.len) {
            other
        } else {
            self
        }
    }
}

/// DTW over prepared sequences, using `O(min(t_a, t_b))` working memory.
pub fn dtw_prepared(
    a: &PreparedSequence,
    b: &PreparedSequence,
    cfg: &DtwConfig,
) -> Result<f64, DtwError> {
    if a.is_empty() || b.is_empty() {
        return Err(DtwError::EmptySequence);
    }
    if a.dim != b.dim {
        return Err(DtwError::DimensionMismatch {
            left: a.dim,
            right: b.dim,
        });
    }
    if let Some(radius) = cfg.band_radius {
        if radius < a.len.abs_diff(b.len) {
            return Err(DtwError::BandTooNarrow {
                radius,
                len_a: a.len,
                len_b: b.len,
            });
        }
    }

    // Both local metrics are symmetric, so the shorter sequence can always
    // be placed on the inner axis.
    let (outer, inner) = if a.len >= b.len { (a, b) } else { (b, a) };
    let (n, m) = (outer.len, inner.len);
    let radius = cfg.band_radius.unwrap_or(usize::MAX);

    let mut prev = vec![BLOCKED; m];
    let mut cur = vec![BLOCKED; m];
    for i in 0..n {
        let lo = i.saturating_sub(radius);
        let hi = i.saturating_add(radius).min(m - 1);
        cur.fill(BLOCKED);
        if lo <= hi {
            for j in lo..=hi {
                let local = outer.local(i, inner, j, cfg.metric);
                let best = if i == 0 && j == 0 {
                    Cell { cost: 0.0, len: 0 }
                } else {
                    let mut best = BLOCKED;
                    if i > 0 && j > 0 {
                        best = best.better(prev[j - 1]);
                    }
                    if i > 0 {
                        best = best.better(prev[j]);
                    }
                    if j > 0 {
                        best = best.better(cur[j - 1]);
                    }
                    best
                };
                if best.cost.is_finite() {
                    cur[j] = Cell {
                        cost: best.cost + local,
                        len: best.len + 1,
                    };
                }
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    let end = prev[m - 1];
    debug_assert!(end.cost.is_finite());
    Ok(if cfg.normalize_by_path_length {
        end.cost / end.len as f64
    } else {
        end.cost
    })
}

/// Scores `query` against every reference in parallel.
///
/// Element `k` equals `dtw_distance(query, refs[k])` regardless of how the
/// work is scheduled.
pub fn dtw_one_to_many(
    query: ArrayView2<'_, f32>,
    refs: &[ArrayView2<'_, f32>],
    cfg: &DtwConfig,
) -> Result<Vec<f64>, DtwError> {
    let q = PreparedSequence::new(query);
    let prepared: Vec<PreparedSequence> =
        refs.par_iter().map(|r| PreparedSequence::new(*r)).collect();
    dtw_prepared_one_to_many(&q, &prepared, cfg)
}

pub fn dtw_prepared_one_to_many(
    query: &PreparedSequence,
    refs: &[PreparedSequence],
    cfg: &DtwConfig,
) -> Result<Vec<f64>, DtwError> {
    if refs.is_empty() {
        return Err(DtwError::NoReferences);
    }
    refs.par_iter()
        .enumerate()
        .map(|(index, r)| {
            dtw_prepared(query, r, cfg).map_err(|e| DtwError::InReference {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn cfg(metric: LocalMetric) -> DtwConfig {
        DtwConfig {
            metric,
            ..DtwConfig::default()
        }
    }

    #[test]
    fn cosine_frame_distance_examples() {
        let c = LocalMetric::Cosine;
        assert_eq!(frame_distance(&[1.0, 0.0], &[1.0, 0.0], c).unwrap(), 0.0);
        assert_eq!(frame_distance(&[1.0, 0.0], &[0.0, 1.0], c).unwrap(), 1.0);
        assert_eq!(frame_distance(&[1.0, 1.0], &[2.0, 2.0], c).unwrap(), 0.0);
        assert_eq!(frame_distance(&[0.0, 0.0], &[0.0, 0.0], c).unwrap(), 0.0);
        assert_eq!(frame_distance(&[0.0, 0.0], &[0.0, 3.0], c).unwrap(), 1.0);
        assert_eq!(frame_distance(&[1.0, 0.0], &[-1.0, 0.0], c).unwrap(), 2.0);
    }

    #[test]
    fn euclidean_frame_distance() {
        let d = frame_distance(&[0.0, 3.0], &[4.0, 0.0], LocalMetric::Euclidean).unwrap();
        assert_eq!(d, 5.0);
    }

    #[test]
    fn frame_dimension_mismatch() {
        assert_eq!(
            frame_distance(&[1.0], &[1.0, 2.0], LocalMetric::Cosine),
            Err(DtwError::DimensionMismatch { left: 1, right: 2 })
        );
    }

    #[test]
    fn self_distance_is_zero() {
        let a = array![[0.3f32, -1.2, 4.0], [0.1, 0.1, 0.1], [7.0, -2.0, 0.5]];
        for m in [LocalMetric::Cosine, LocalMetric::Euclidean] {
            assert_eq!(dtw_distance(a.view(), a.view(), &cfg(m)).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_cell_orthogonal() {
        let a = array![[1.0f32, 0.0]];
        let b = array![[0.0f32, 1.0]];
        assert_eq!(dtw_distance(a.view(), b.view(), &cfg(LocalMetric::Cosine)).unwrap(), 1.0);
    }

    #[test]
    fn unnormalized_cost_counts_every_cell() {
        // a = [x, y], b = [x]: path (0,0),(1,0) with cost 0 + 1.
        let a = array![[1.0f32, 0.0], [0.0, 1.0]];
        let b = array![[1.0f32, 0.0]];
        let mut c = cfg(LocalMetric::Cosine);
        c.normalize_by_path_length = false;
        assert_eq!(dtw_distance(a.view(), b.view(), &c).unwrap(), 1.0);
        c.normalize_by_path_length = true;
        assert_eq!(dtw_distance(a.view(), b.view(), &c).unwrap(), 0.5);
    }

    #[test]
    fn stretched_copy_aligns_at_zero_cost() {
        let a = array![[1.0f32, 2.0], [-1.0, 0.5], [3.0, 3.0], [0.0, 1.0]];
        let stretched = Array2::from_shape_fn((8, 2), |(i, j)| a[[i / 2, j]]);
        for m in [LocalMetric::Cosine, LocalMetric::Euclidean] {
            assert_eq!(dtw_distance(stretched.view(), a.view(), &cfg(m)).unwrap(), 0.0);
        }
    }

    #[test]
    fn band_errors_and_equivalence() {
        let a = Array2::from_shape_fn((5, 2), |(i, j)| (i * 3 + j) as f32 + 0.5);
        let b = Array2::from_shape_fn((8, 2), |(i, j)| ((i * 7 + j * 5) % 4) as f32 - 1.5);
        let mut c = cfg(LocalMetric::Euclidean);
        c.band_radius = Some(2);
        assert_eq!(
            dtw_distance(a.view(), b.view(), &c),
            Err(DtwError::BandTooNarrow {
                radius: 2,
                len_a: 5,
                len_b: 8
            })
        );
        let full = dtw_distance(a.view(), b.view(), &cfg(LocalMetric::Euclidean)).unwrap();
        c.band_radius = Some(8);
        assert_eq!(dtw_distance(a.view(), b.view(), &c).unwrap(), full);
        c.band_radius = Some(3);
        assert!(dtw_distance(a.view(), b.view(), &c).unwrap() >= full);
    }

    #[test]
    fn empty_and_mismatched_sequences() {
        let e = Array2::<f32>::zeros((0, 2));
        let a = Array2::<f32>::ones((3, 2));
        let b = Array2::<f32>::ones((3, 3));
        let c = DtwConfig::default();
        assert_eq!(dtw_distance(e.view(), a.view(), &c), Err(DtwError::EmptySequence));
        assert_eq!(
            dtw_distance(a.view(), b.view(), &c),
            Err(DtwError::DimensionMismatch { left: 2, right: 3 })
        );
    }

    #[test]
    fn one_to_many_examples() {
        let q = array![[1.0f32, 0.0], [0.5, 0.5]];
        let orth = array![[0.0f32, 1.0]];
        let c = DtwConfig::default();
        assert_eq!(dtw_one_to_many(q.view(), &[q.view()], &c).unwrap(), vec![0.0]);
        let zero_dim = array![[1.0f32, 0.0]];
        let d = dtw_one_to_many(zero_dim.view(), &[zero_dim.view(), orth.view()], &c).unwrap();
        assert_eq!(d, vec![0.0, 1.0]);
    }

    #[test]
    fn one_to_many_reports_offending_index() {
        let q = array![[1.0f32, 0.0]];
        let ok = array![[1.0f32, 1.0]];
        let bad = array![[1.0f32, 1.0, 1.0]];
        let err = dtw_one_to_many(q.view(), &[ok.view(), bad.view()], &DtwConfig::default())
            .unwrap_err();
        assert!(matches!(err, DtwError::InReference { index: 1, .. }));
        assert_eq!(
            dtw_one_to_many(q.view(), &[], &DtwConfig::default()),
            Err(DtwError::NoReferences)
        );
    }
}
