//! Flat binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  "SSMLABCK"        8 bytes
//! version u32              currently 1
//! kind    u32              ModelKind tag
//! ndims   u32, dims u64 × ndims
//! seed    u64
//! count   u64              number of f64 values that follow
//! values  f64 × count      row-major, tensors in declared field order
//! ```

use std::fs;
use std::path::Path;

use super::{
    DiscreteAttention, DiscreteSsm, LinearAttention, NonSelectiveSsm, Parameters, SelectiveSsm,
};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SSMLABCK";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    SelectiveSsm = 1,
    NonSelectiveSsm = 2,
    LinearAttention = 3,
    DiscreteSsm = 4,
    DiscreteAttention = 5,
}

impl ModelKind {
    pub fn from_tag(tag: u32) -> Result<Self> {
        Ok(match tag {
            1 => ModelKind::SelectiveSsm,
            2 => ModelKind::NonSelectiveSsm,
            3 => ModelKind::LinearAttention,
            4 => ModelKind::DiscreteSsm,
            5 => ModelKind::DiscreteAttention,
            other => return Err(Error::Checkpoint(format!("unknown model kind tag {other}"))),
        })
    }
}

/// A parameter set that can be rebuilt from its kind tag and dims.
pub trait Checkpoint: Parameters + Sized {
    const KIND: ModelKind;

    fn dims(&self) -> Vec<usize>;

    /// Zero-valued instance with the given dims.
    fn with_dims(dims: &[usize]) -> Result<Self>;
}

fn expect_dims<const N: usize>(dims: &[usize]) -> Result<[usize; N]> {
    dims.try_into()
        .map_err(|_| Error::Checkpoint(format!("expected {N} dims, found {}", dims.len())))
}

fn flag(v: usize) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::Checkpoint(format!("flag dim {v} is not 0 or 1"))),
    }
}

impl Checkpoint for SelectiveSsm {
    const KIND: ModelKind = ModelKind::SelectiveSsm;

    fn dims(&self) -> Vec<usize> {
        vec![
            self.w_out.rows(),
            self.state_dim(),
            self.core.mlp.is_some() as usize,
        ]
    }

    fn with_dims(dims: &[usize]) -> Result<Self> {
        let [m, n, mlp] = expect_dims(dims)?;
        Ok(SelectiveSsm::zeros(m, n, flag(mlp)?))
    }
}

impl Checkpoint for NonSelectiveSsm {
    const KIND: ModelKind = ModelKind::NonSelectiveSsm;

    fn dims(&self) -> Vec<usize> {
        vec![self.w_out.rows(), self.state_dim()]
    }

    fn with_dims(dims: &[usize]) -> Result<Self> {
        let [m, n] = expect_dims(dims)?;
        Ok(NonSelectiveSsm::zeros(m, n))
    }
}

impl Checkpoint for LinearAttention {
    const KIND: ModelKind = ModelKind::LinearAttention;

    fn dims(&self) -> Vec<usize> {
        vec![self.w_out.rows(), self.embed_dim()]
    }

    fn with_dims(dims: &[usize]) -> Result<Self> {
        let [m, de] = expect_dims(dims)?;
        Ok(LinearAttention::zeros(m, de))
    }
}

impl Checkpoint for DiscreteSsm {
    const KIND: ModelKind = ModelKind::DiscreteSsm;

    fn dims(&self) -> Vec<usize> {
        vec![
            self.embed.rows(),
            self.embed_dim(),
            self.core.state_dim(),
            self.core.mlp.is_some() as usize,
        ]
    }

    fn with_dims(dims: &[usize]) -> Result<Self> {
        let [v, de, n, mlp] = expect_dims(dims)?;
        Ok(DiscreteSsm::zeros(v, de, n, flag(mlp)?))
    }
}

impl Checkpoint for DiscreteAttention {
    const KIND: ModelKind = ModelKind::DiscreteAttention;

    fn dims(&self) -> Vec<usize> {
        vec![
            self.embed.rows(),
            self.embed_dim(),
            self.heads,
            self.ff_dim(),
            self.max_len(),
        ]
    }

    fn with_dims(dims: &[usize]) -> Result<Self> {
        let [v, de, heads, ff, len] = expect_dims(dims)?;
        DiscreteAttention::zeros(v, de, heads, ff, len)
    }
}

/// Header fields of a checkpoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    pub dims: Vec<usize>,
    pub seed: u64,
    pub count: usize,
}

pub fn encode<M: Checkpoint>(model: &M, seed: u64) -> Vec<u8> {
    let dims = model.dims();
    let values = model.flatten();
    let mut out = Vec::with_capacity(40 + 8 * dims.len() + 8 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(M::KIND as u32).to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    out.extend_from_slice(&seed.to_le_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

fn read_header(r: &mut Reader<'_>) -> Result<CheckpointHeader> {
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let kind = ModelKind::from_tag(r.u32()?)?;
    let ndims = r.u32()? as usize;
    if ndims > 16 {
        return Err(Error::Checkpoint(format!("implausible dim count {ndims}")));
    }
    let dims = (0..ndims)
        .map(|_| r.u64().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let seed = r.u64()?;
    let count = r.u64()? as usize;
    Ok(CheckpointHeader {
        kind,
        dims,
        seed,
        count,
    })
}

pub fn read_checkpoint_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    read_header(&mut Reader { bytes, pos: 0 })
}

/// Decodes a checkpoint of kind `M`, returning the parameters and seed.
pub fn decode<M: Checkpoint>(bytes: &[u8]) -> Result<(M, u64)> {
    let mut r = Reader { bytes, pos: 0 };
    let header = read_header(&mut r)?;
    if header.kind != M::KIND {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {:?}, expected {:?}",
            header.kind,
            M::KIND
        )));
    }
    let mut model = M::with_dims(&header.dims)?;
    if header.count != model.num_params() {
        return Err(Error::Checkpoint(format!(
            "{} values for {} parameters",
            header.count,
            model.num_params()
        )));
    }
    let values = r
        .take(8 * header.count)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect::<Vec<_>>();
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after values".into()));
    }
    model.set_flat(&values)?;
    Ok((model, header.seed))
}

/// Writes via a temporary file and rename so a crash never leaves a
/// half-written checkpoint at `path`.
pub fn save_checkpoint<M: Checkpoint>(path: &Path, model: &M, seed: u64) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(model, seed))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<M: Checkpoint>(path: &Path) -> Result<(M, u64)> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;

    fn roundtrip<M: Checkpoint + PartialEq + std::fmt::Debug>(m: M) {
        let bytes = encode(&m, 77);
        let (back, seed) = decode::<M>(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(seed, 77);
        assert_eq!(
            bytes.len(),
            8 + 12 + 8 * m.dims().len() + 16 + 8 * m.num_params()
        );
    }

    #[test]
    fn every_kind_roundtrips() {
        let mut rng = Rng::new(1);
        roundtrip(SelectiveSsm::init(2, 4, true, &mut rng).unwrap());
        roundtrip(NonSelectiveSsm::init(2, 4, &mut rng).unwrap());
        roundtrip(LinearAttention::init(2, 4, &mut rng).unwrap());
        roundtrip(DiscreteSsm::init(5, 4, 3, false, &mut rng).unwrap());
        roundtrip(DiscreteAttention::init(5, 8, 2, 16, 6, &mut rng).unwrap());
    }

    #[test]
    fn values_follow_header_in_field_order() {
        let mut m = LinearAttention::zeros(1, 1);
        m.set_flat(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode(&m, 5);
        let header = read_checkpoint_header(&bytes).unwrap();
        assert_eq!(header.kind, ModelKind::LinearAttention);
        assert_eq!(header.dims, vec![1, 1]);
        assert_eq!(header.count, 4);
        let tail: Vec<f64> = bytes[bytes.len() - 32..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(tail, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = NonSelectiveSsm::zeros(1, 2);
        let bytes = encode(&m, 0);
        assert!(decode::<NonSelectiveSsm>(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode::<LinearAttention>(&bytes).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode::<NonSelectiveSsm>(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode::<NonSelectiveSsm>(&extra).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/model.ckpt");
        let m = SelectiveSsm::init(1, 3, false, &mut Rng::new(2)).unwrap();
        save_checkpoint(&path, &m, 9).unwrap();
        let (back, seed) = load_checkpoint::<SelectiveSsm>(&path).unwrap();
        assert_eq!((back, seed), (m, 9));
    }
}
