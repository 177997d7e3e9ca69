//! The LPMW weight container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "LPMW" | version u32 | input_dim u32 | embed_dim u32 | vocab_size u32
//!        | num_blocks u32 | tap u32 | tensor_count u32
//! per tensor: name_len u16 | name (UTF-8) | ndim u8 | dims u32 * ndim | f32 * prod(dims)
//! crc32 u32 over every preceding byte
//! ```
//!
//! Convolution kernels may be stored either plain (`<layer>.weight`) or as a
//! weight-norm pair (`<layer>.weight_v`, `<layer>.weight_g`). Pairs are
//! folded into plain kernels when the file is loaded.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::EmbeddingError;

pub const LPMW_MAGIC: &[u8; 4] = b"LPMW";
pub const LPMW_VERSION: u32 = 1;
pub const KERNEL_SIZE: usize = 5;

/// Which activation is exported as the phrase embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EmbeddingTap {
    /// Output of the embedding projection, before its activation.
    Projection,
    /// The same projection after LeakyReLU; this is what feeds the vocabulary head.
    ProjectionActivated,
}

impl EmbeddingTap {
    pub fn id(self) -> u32 {
        match self {
            Self::Projection => 0,
            Self::ProjectionActivated => 1,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        match id {
            0 => Some(Self::Projection),
            1 => Some(Self::ProjectionActivated),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelMetadata {
    pub input_dim: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub num_blocks: usize,
    pub tap: EmbeddingTap,
}

impl Default for ModelMetadata {
    fn default() -> Self {
        Self {
            input_dim: 64,
            embed_dim: 128,
            vocab_size: 300,
            num_blocks: 6,
            tap: EmbeddingTap::Projection,
        }
    }
}

impl ModelMetadata {
    /// Width of the vocabulary head: one channel per word plus speech activity.
    pub fn head_dim(&self) -> usize {
        self.vocab_size + 1
    }

    /// Dilation of block `i` (zero-based).
    pub fn dilation(block: usize) -> usize {
        block + 1
    }

    /// Frames on each side of an output frame that can influence it.
    pub fn receptive_half_width(&self) -> usize {
        (0..self.num_blocks)
            .map(|i| (KERNEL_SIZE - 1) / 2 * Self::dilation(i))
            .sum()
    }

    /// Total receptive field in frames.
    pub fn receptive_field(&self) -> usize {
        2 * self.receptive_half_width() + 1
    }

    /// Plain kernel names and shapes the runtime needs after folding.
    pub fn architecture_manifest(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.input_dim;
        let mut out = Vec::new();
        for i in 0..self.num_blocks {
            out.push((format!("blocks.{i}.conv1.weight"), vec![c, c, KERNEL_SIZE]));
            out.push((format!("blocks.{i}.conv1.bias"), vec![c]));
            out.push((format!("blocks.{i}.conv2.weight"), vec![c, c, 1]));
            out.push((format!("blocks.{i}.conv2.bias"), vec![c]));
        }
        out.push(("embed.weight".into(), vec![self.embed_dim, c]));
        out.push(("embed.bias".into(), vec![self.embed_dim]));
        out.push(("head.weight".into(), vec![self.head_dim(), self.embed_dim]));
        out.push(("head.bias".into(), vec![self.head_dim()]));
        out
    }

    fn is_conv_kernel(name: &str) -> bool {
        name.starts_with("blocks.") && name.ends_with(".weight")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }
}

/// Validated, weight-norm-folded model parameters. Immutable once loaded.
#[derive(Debug, Clone)]
pub struct ModelWeights {
    metadata: ModelMetadata,
    tensors: BTreeMap<String, Tensor>,
    hash: [u8; 32],
}

impl ModelWeights {
    pub fn metadata(&self) -> &ModelMetadata {
        &self.metadata
    }

    pub fn num_blocks(&self) -> usize {
        self.metadata.num_blocks
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    /// SHA-256 of the serialized file.
    pub fn hash(&self) -> [u8; 32] {
        self.hash
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        let (metadata, raw) = parse(bytes)?;
        let tensors = fold_and_validate(&metadata, raw)?;
        Ok(Self {
            metadata,
            tensors,
            hash: Sha256::digest(bytes).into(),
        })
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights, EmbeddingError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ModelWeights::from_bytes(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EmbeddingError> {
        let end = self.pos.checked_add(n).ok_or(EmbeddingError::TruncatedFile)?;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or(EmbeddingError::TruncatedFile)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, EmbeddingError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, EmbeddingError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, EmbeddingError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn parse(bytes: &[u8]) -> Result<(ModelMetadata, Vec<(String, Tensor)>), EmbeddingError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != LPMW_MAGIC {
        return Err(EmbeddingError::BadMagic);
    }
    let version = r.u32()?;
    if version != LPMW_VERSION {
        return Err(EmbeddingError::VersionMismatch {
            found: version,
            expected: LPMW_VERSION,
        });
    }
    let input_dim = r.u32()? as usize;
    let embed_dim = r.u32()? as usize;
    let vocab_size = r.u32()? as usize;
    let num_blocks = r.u32()? as usize;
    let tap_id = r.u32()?;
    let tap = EmbeddingTap::from_id(tap_id)
        .ok_or_else(|| EmbeddingError::InvalidMetadata(format!("unknown embedding tap {tap_id}")))?;
    if input_dim == 0 || embed_dim == 0 || num_blocks == 0 {
        return Err(EmbeddingError::InvalidMetadata(
            "input_dim, embed_dim and num_blocks must be positive".into(),
        ));
    }
    let metadata = ModelMetadata {
        input_dim,
        embed_dim,
        vocab_size,
        num_blocks,
        tap,
    };

    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| EmbeddingError::InvalidMetadata("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32()? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(EmbeddingError::TruncatedFile)?;
        let payload = r.take(numel.checked_mul(4).ok_or(EmbeddingError::TruncatedFile)?)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor { dims, data }));
    }

    let body_end = r.pos;
    let stored = r.u32()?;
    if r.pos != bytes.len() {
        return Err(EmbeddingError::InvalidMetadata(format!(
            "{} trailing bytes after checksum",
            bytes.len() - r.pos
        )));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(EmbeddingError::ChecksumMismatch { stored, computed });
    }
    Ok((metadata, tensors))
}

fn fold_and_validate(
    meta: &ModelMetadata,
    raw: Vec<(String, Tensor)>,
) -> Result<BTreeMap<String, Tensor>, EmbeddingError> {
    let mut pool: BTreeMap<String, Tensor> = BTreeMap::new();
    for (name, t) in raw {
        if pool.insert(name.clone(), t).is_some() {
            return Err(EmbeddingError::DuplicateTensor(name));
        }
    }

    let mut out = BTreeMap::new();
    for (name, dims) in meta.architecture_manifest() {
        let tensor = if ModelMetadata::is_conv_kernel(&name) {
            let v_name = format!("{name}_v");
            let g_name = format!("{name}_g");
            match (pool.remove(&name), pool.remove(&v_name), pool.remove(&g_name)) {
                (Some(plain), None, None) => {
                    check_shape(&name, &dims, &plain.dims)?;
                    plain
                }
                (None, Some(v), Some(g)) => {
                    check_shape(&v_name, &dims, &v.dims)?;
                    check_shape(&g_name, &dims[..1], &g.dims)?;
                    fold_weight_norm(&v, &g)
                }
                (None, None, None) => return Err(EmbeddingError::MissingTensor(name)),
                (None, Some(_), None) => return Err(EmbeddingError::MissingTensor(g_name)),
                (None, None, Some(_)) => return Err(EmbeddingError::MissingTensor(v_name)),
                (Some(_), _, _) => {
                    return Err(EmbeddingError::InvalidMetadata(format!(
                        "{name} stored both plain and as a weight-norm pair"
                    )))
                }
            }
        } else {
            let t = pool
                .remove(&name)
                .ok_or_else(|| EmbeddingError::MissingTensor(name.clone()))?;
            check_shape(&name, &dims, &t.dims)?;
            t
        };
        if tensor.data.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::InvalidMetadata(format!(
                "{name} contains non-finite values"
            )));
        }
        out.insert(name, tensor);
    }
    if let Some(extra) = pool.into_keys().next() {
        return Err(EmbeddingError::UnexpectedTensor(extra));
    }
    Ok(out)
}

fn check_shape(name: &str, expected: &[usize], found: &[usize]) -> Result<(), EmbeddingError> {
    if expected != found {
        return Err(EmbeddingError::ShapeMismatch {
            tensor: name.to_string(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        });
    }
    Ok(())
}

/// `kernel[o] = g[o] * v[o] / ||v[o]||`, norm taken over each output channel.
fn fold_weight_norm(v: &Tensor, g: &Tensor) -> Tensor {
    let out_channels = v.dims[0];
    let per_out = v.data.len() / out_channels;
    let mut data = Vec::with_capacity(v.data.len());
    for (o, chunk) in v.data.chunks_exact(per_out).enumerate() {
        let norm = chunk.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { g.data[o] as f64 / norm } else { 0.0 };
        data.extend(chunk.iter().map(|&x| (x as f64 * scale) as f32));
    }
    Tensor {
        dims: v.dims.clone(),
        data,
    }
}

/// Serializes tensors into an LPMW byte buffer, appending the checksum.
pub fn encode_lpmw(meta: &ModelMetadata, tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(LPMW_MAGIC);
    buf.extend_from_slice(&LPMW_VERSION.to_le_bytes());
    for v in [
        meta.input_dim as u32,
        meta.embed_dim as u32,
        meta.vocab_size as u32,
        meta.num_blocks as u32,
        meta.tap.id(),
        tensors.len() as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.dims.len() as u8);
        for &d in &t.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in &t.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

/// Randomly initialised tensors for `meta`, with convolutions stored as
/// weight-norm pairs. Useful for tests and for exercising the runtime
/// before a trained model exists.
pub fn random_tensors(meta: &ModelMetadata, seed: u64) -> Vec<(String, Tensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let uniform = |n: usize, scale: f32, rng: &mut ChaCha8Rng| -> Vec<f32> {
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
    };
    for (name, dims) in meta.architecture_manifest() {
        let numel: usize = dims.iter().product();
        if ModelMetadata::is_conv_kernel(&name) {
            let v = uniform(numel, 1.0, &mut rng);
            let fan_in = (dims[1] * dims[2]) as f32;
            let g = (0..dims[0])
                .map(|_| rng.gen_range(0.5..1.5) / fan_in.sqrt())
                .collect();
            out.push((format!("{name}_v"), Tensor::new(dims.clone(), v)));
            out.push((format!("{name}_g"), Tensor::new(vec![dims[0]], g)));
        } else if name.ends_with(".bias") {
            out.push((name, Tensor::new(dims, uniform(numel, 0.1, &mut rng))));
        } else {
            let scale = 1.0 / (dims[1] as f32).sqrt();
            out.push((name, Tensor::new(dims, uniform(numel, scale, &mut rng))));
        }
    }
    out
}

/// Convenience: random weights round-tripped through the LPMW encoder.
pub fn random_weights(meta: &ModelMetadata, seed: u64) -> ModelWeights {
    ModelWeights::from_bytes(&encode_lpmw(meta, &random_tensors(meta, seed)))
        .expect("freshly encoded weights are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelMetadata {
        ModelMetadata {
            input_dim: 4,
            embed_dim: 3,
            vocab_size: 2,
            num_blocks: 2,
            tap: EmbeddingTap::Projection,
        }
    }

    #[test]
    fn default_architecture_has_85_frame_receptive_field() {
        let m = ModelMetadata::default();
        assert_eq!(m.num_blocks, 6);
        assert_eq!(m.receptive_half_width(), 42);
        assert_eq!(m.receptive_field(), 85);
        assert_eq!(m.architecture_manifest().len(), 6 * 4 + 4);
    }

    #[test]
    fn happy_path_load() {
        let meta = ModelMetadata::default();
        let w = ModelWeights::from_bytes(&encode_lpmw(&meta, &random_tensors(&meta, 1))).unwrap();
        assert_eq!(w.num_blocks(), 6);
        assert_eq!(w.tensor("blocks.3.conv1.weight").unwrap().dims, vec![64, 64, 5]);
        assert!(w.tensor("blocks.3.conv1.weight_v").is_none());
    }

    #[test]
    fn wrong_kernel_width_names_the_tensor() {
        let meta = small();
        let mut t = random_tensors(&meta, 2);
        let slot = t
            .iter_mut()
            .find(|(n, _)| n == "blocks.1.conv1.weight_v")
            .unwrap();
        slot.1 = Tensor::new(vec![4, 4, 3], vec![0.1; 48]);
        match ModelWeights::from_bytes(&encode_lpmw(&meta, &t)) {
            Err(EmbeddingError::ShapeMismatch { tensor, .. }) => {
                assert_eq!(tensor, "blocks.1.conv1.weight_v")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unit_direction_folds_to_magnitude_times_direction() {
        let v = Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, -1.0]);
        let g = Tensor::new(vec![2], vec![0.75, 3.0]);
        let k = fold_weight_norm(&v, &g);
        assert_eq!(k.data, vec![0.75, 0.0, 0.0, -3.0]);
    }

    #[test]
    fn fold_normalizes_non_unit_direction() {
        let v = Tensor::new(vec![1, 1, 2], vec![3.0, 4.0]);
        let g = Tensor::new(vec![1], vec![10.0]);
        assert_eq!(fold_weight_norm(&v, &g).data, vec![6.0, 8.0]);
    }

    #[test]
    fn header_and_integrity_errors() {
        let meta = small();
        let good = encode_lpmw(&meta, &random_tensors(&meta, 3));

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            ModelWeights::from_bytes(&bad_magic),
            Err(EmbeddingError::BadMagic)
        ));

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(matches!(
            ModelWeights::from_bytes(&bad_version),
            Err(EmbeddingError::VersionMismatch { found: 9, .. })
        ));

        for cut in [2, 10, 40, good.len() / 2, good.len() - 1] {
            assert!(
                matches!(
                    ModelWeights::from_bytes(&good[..cut]),
                    Err(EmbeddingError::TruncatedFile)
                ),
                "cut {cut}"
            );
        }

        let mut flipped = good.clone();
        let mid = good.len() - 10;
        flipped[mid] ^= 0x40;
        assert!(matches!(
            ModelWeights::from_bytes(&flipped),
            Err(EmbeddingError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn missing_and_extra_tensors() {
        let meta = small();
        let mut t = random_tensors(&meta, 4);
        t.retain(|(n, _)| n != "head.bias");
        assert!(matches!(
            ModelWeights::from_bytes(&encode_lpmw(&meta, &t)),
            Err(EmbeddingError::MissingTensor(n)) if n == "head.bias"
        ));

        let mut t = random_tensors(&meta, 4);
        t.push(("stray".into(), Tensor::new(vec![1], vec![0.0])));
        assert!(matches!(
            ModelWeights::from_bytes(&encode_lpmw(&meta, &t)),
            Err(EmbeddingError::UnexpectedTensor(n)) if n == "stray"
        ));
    }

    #[test]
    fn hash_tracks_content() {
        let meta = small();
        let a = random_weights(&meta, 5);
        let b = random_weights(&meta, 5);
        let c = random_weights(&meta, 6);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn loads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.lpmw");
        let meta = small();
        std::fs::write(&p, encode_lpmw(&meta, &random_tensors(&meta, 7))).unwrap();
        let w = load_weights(&p).unwrap();
        assert_eq!(*w.metadata(), meta);
        assert!(matches!(
            load_weights(dir.path().join("absent.lpmw")),
            Err(EmbeddingError::Io { .. })
        ));
    }
}
