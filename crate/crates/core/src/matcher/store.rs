//! LPMS phrase-set files.
//!
//! ```text
//! "LPMS" | version u32 | alpha f64 | metric u8 | normalize u8 | band_radius u32 (0 = none)
//!        | backend hash [u8; 32] | template_count u32
//! per template: label_len u16 | label (UTF-8) | tau f64 | t u32 | f u32 | f32 * t * f
//! crc32 u32 over every preceding byte
//! ```
//!
//! All integers and floats are little-endian. An infinite alpha (and the
//! matching infinite thresholds) is stored as IEEE `+inf`; NaN is rejected.

use std::path::Path;

use ndarray::Array2;

use super::{Alpha, MatchError, PhraseSet, PhraseTemplate};
use crate::dtw::{DtwConfig, LocalMetric};
use crate::engine::BackendId;

pub const LPMS_MAGIC: &[u8; 4] = b"LPMS";
pub const LPMS_VERSION: u32 = 1;

fn encode(set: &PhraseSet) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(LPMS_MAGIC);
    buf.extend_from_slice(&LPMS_VERSION.to_le_bytes());
    buf.extend_from_slice(&set.alpha.value().to_le_bytes());
    let cfg = set.dtw_config();
    buf.push(match cfg.metric {
        LocalMetric::Cosine => 0,
        LocalMetric::Euclidean => 1,
    });
    buf.push(cfg.normalize_by_path_length as u8);
    buf.extend_from_slice(&(cfg.band_radius.unwrap_or(0) as u32).to_le_bytes());
    buf.extend_from_slice(&set.backend.to_bytes());
    buf.extend_from_slice(&(set.templates.len() as u32).to_le_bytes());
    for t in &set.templates {
        buf.extend_from_slice(&(t.label.len() as u16).to_le_bytes());
        buf.extend_from_slice(t.label.as_bytes());
        buf.extend_from_slice(&t.threshold.to_le_bytes());
        buf.extend_from_slice(&(t.embedding.nrows() as u32).to_le_bytes());
        buf.extend_from_slice(&(t.embedding.ncols() as u32).to_le_bytes());
        for &v in t.embedding.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn save_phrase_set(set: &PhraseSet, path: impl AsRef<Path>) -> Result<(), MatchError> {
    let path = path.as_ref();
    std::fs::write(path, encode(set)).map_err(|source| MatchError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a phrase set. When `expected` is given the stored backend must match it.
pub fn load_phrase_set(
    path: impl AsRef<Path>,
    expected: Option<BackendId>,
) -> Result<PhraseSet, MatchError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| MatchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let set = decode(&bytes)?;
    if let Some(expected) = expected {
        if set.backend != expected {
            return Err(MatchError::BackendMismatch {
                expected,
                found: set.backend,
            });
        }
    }
    Ok(set)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MatchError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| MatchError::CorruptFile("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], MatchError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, MatchError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, MatchError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, MatchError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, MatchError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

fn decode(bytes: &[u8]) -> Result<PhraseSet, MatchError> {
    if bytes.len() < 8 {
        return Err(MatchError::CorruptFile("file too short".into()));
    }
    if &bytes[..4] != LPMS_MAGIC {
        return Err(MatchError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != LPMS_VERSION {
        return Err(MatchError::VersionMismatch {
            found: version,
            expected: LPMS_VERSION,
        });
    }
    if bytes.len() < 12 {
        return Err(MatchError::CorruptFile("file too short".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(MatchError::CorruptFile("checksum mismatch".into()));
    }

    let mut c = Cursor { bytes: body, pos: 8 };
    let alpha_raw = c.f64()?;
    if alpha_raw.is_nan() {
        return Err(MatchError::CorruptFile("alpha is NaN".into()));
    }
    let alpha = Alpha::new(alpha_raw).map_err(|e| MatchError::CorruptFile(e.to_string()))?;
    let metric = match c.u8()? {
        0 => LocalMetric::Cosine,
        1 => LocalMetric::Euclidean,
        m => return Err(MatchError::CorruptFile(format!("unknown metric id {m}"))),
    };
    let normalize_by_path_length = match c.u8()? {
        0 => false,
        1 => true,
        v => return Err(MatchError::CorruptFile(format!("bad normalization flag {v}"))),
    };
    let band = c.u32()?;
    let dtw = DtwConfig {
        metric,
        normalize_by_path_length,
        band_radius: (band != 0).then_some(band as usize),
    };
    let backend = BackendId::from_bytes(c.array()?);

    let count = c.u32()? as usize;
    let mut templates = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let label_len = c.u16()? as usize;
        let label = std::str::from_utf8(c.take(label_len)?)
            .map_err(|_| MatchError::CorruptFile("label is not UTF-8".into()))?
            .to_string();
        let threshold = c.f64()?;
        if threshold.is_nan() || threshold < 0.0 {
            return Err(MatchError::CorruptFile(format!("invalid threshold for `{label}`")));
        }
        let t = c.u32()? as usize;
        let f = c.u32()? as usize;
        let numel = t
            .checked_mul(f)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| MatchError::CorruptFile("embedding size overflows".into()))?;
        let data = c
            .take(numel)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let embedding = Array2::from_shape_vec((t, f), data).expect("size checked");
        templates.push(PhraseTemplate {
            embedding,
            label,
            threshold,
        });
    }
    if c.pos != body.len() {
        return Err(MatchError::CorruptFile("trailing bytes".into()));
    }
    Ok(PhraseSet::from_parts(templates, alpha, dtw, backend))
}
