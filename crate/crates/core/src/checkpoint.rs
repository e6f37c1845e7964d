//! Flat binary parameter checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "BWGN"                 4 bytes magic
//! version                u32 (currently 1)
//! activation             u32 (0 relu, 1 tanh, 2 softplus)
//! tensor count           u32
//! per tensor:
//!   rank                 u32
//!   dims                 rank × u64
//!   data                 Π dims × f64
//! ```
//!
//! MLP tensors are stored as `W₀, b₀, W₁, b₁, …` with `W` of shape
//! `[fan_in, fan_out]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::{Activation, CriticHandle, GeneratorHandle, Mlp};
use crate::spaces::Geometry;

pub const MAGIC: &[u8; 4] = b"BWGN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub activation: Activation,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(activation: Activation, tensors: Vec<Tensor>) -> Self {
        Checkpoint { activation, tensors }
    }

    /// Rebuilds an MLP critic; the architecture is inferred from shapes.
    pub fn critic(&self) -> Result<CriticHandle> {
        let mlp = Mlp::from_params(&self.tensors, self.activation)?;
        CriticHandle::new(Arc::new(mlp), self.tensors.clone())
    }

    pub fn generator(&self, geometry: Geometry) -> Result<GeneratorHandle> {
        let mlp = Mlp::from_params(&self.tensors, self.activation)?;
        GeneratorHandle::new(Arc::new(mlp), self.tensors.clone(), geometry)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.activation.code().to_le_bytes())?;
        w.write_all(&u32::try_from(self.tensors.len()).map_err(|_| too_many())?.to_le_bytes())?;
        for t in &self.tensors {
            let rank = u32::try_from(t.shape().len()).map_err(|_| too_many())?;
            w.write_all(&rank.to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("missing BWGN magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let code = read_u32(&mut r)?;
        let activation =
            Activation::from_code(code).ok_or_else(|| Error::Format(format!("unknown activation code {code}")))?;
        let count = read_u32(&mut r)?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                let d = read_u64(&mut r)?;
                shape.push(usize::try_from(d).map_err(|_| Error::Format(format!("dimension {d} too large")))?);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
            let mut bytes = vec![
                0u8;
                len.checked_mul(8)
                    .ok_or_else(|| Error::Format("tensor size overflows".into()))?
            ];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(Tensor::new(shape, data)?);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Ok(Checkpoint { activation, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::read_from(BufReader::new(File::open(path)?))
    }
}

fn too_many() -> Error {
    Error::Format("count does not fit in u32".into())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = Checkpoint::new(
            Activation::Softplus,
            vec![
                Tensor::matrix(2, 3, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, -7.25, 0.1]).unwrap(),
                Tensor::vector(vec![0.5, 0.25, -1.0 / 3.0]),
                Tensor::scalar(2.0),
            ],
        );
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"BWGN");
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.activation, ck.activation);
        for (a, b) in back.tensors.iter().zip(&ck.tensors) {
            assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn rejects_corruption() {
        let ck = Checkpoint::new(Activation::Relu, vec![Tensor::vector(vec![1.0, 2.0])]);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read_from(bad.as_slice()), Err(Error::Format(_))));
        assert!(Checkpoint::read_from(&buf[..buf.len() - 1]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(Checkpoint::read_from(long.as_slice()).is_err());
    }
}
