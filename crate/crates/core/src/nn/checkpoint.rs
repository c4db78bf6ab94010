use std::fs;
use std::path::Path;

use super::Parameterized;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CLSTMPPO";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Ordered collection of named arrays.
///
/// Layout (little-endian): magic `CLSTMPPO`, `u32` version, `u32` record
/// count, then per record `u32` name length, UTF-8 name, `u32` rank, `u64`
/// per dimension and the row-major `f64` values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub records: Vec<CheckpointRecord>,
}

impl Checkpoint {
    pub fn from_params(model: &impl Parameterized) -> Self {
        Self {
            records: model
                .params()
                .into_iter()
                .map(|p| CheckpointRecord {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    values: p.values.clone(),
                })
                .collect(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) {
        self.records.push(CheckpointRecord {
            name: name.into(),
            shape,
            values,
        });
    }

    pub fn get(&self, name: &str) -> Option<&CheckpointRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    /// Copies every matching record into the model's parameters.
    pub fn load_into(&self, model: &mut impl Parameterized) -> Result<()> {
        for p in model.params_mut() {
            let rec = self
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", p.name)))?;
            if rec.shape != p.shape {
                return Err(Error::Checkpoint(format!(
                    "`{}` has shape {:?}, model expects {:?}",
                    p.name, rec.shape, p.shape
                )));
            }
            p.values.copy_from_slice(&rec.values);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
            for &d in &r.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &r.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic header".into()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = cur.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
            let rank = cur.u32()? as usize;
            let shape = (0..rank)
                .map(|_| cur.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = cur.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("shape overflow".into()))?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            records.push(CheckpointRecord { name, shape, values });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { records })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut ck = Checkpoint::default();
        ck.push("a", vec![2], vec![1.0, -0.5]);
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..8], b"CLSTMPPO");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 4 + 1 + 4 + 8 + 16);
    }

    #[test]
    fn rejects_corruption() {
        let mut ck = Checkpoint::default();
        ck.push("w", vec![1, 2], vec![3.0, 4.0]);
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes;
        bad[8] = 9;
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }

    #[test]
    fn load_into_model() {
        let mut a = Linear::zeros("l", 2, 2);
        a.weight.values = vec![1.0, 2.0, 3.0, 4.0];
        a.bias.values = vec![-1.0, 0.5];
        let ck = Checkpoint::from_params(&a);
        let mut b = Linear::zeros("l", 2, 2);
        Checkpoint::from_bytes(&ck.to_bytes()).unwrap().load_into(&mut b).unwrap();
        assert_eq!(a, b);
        let mut wrong = Linear::zeros("l", 3, 2);
        assert!(ck.load_into(&mut wrong).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(records in prop::collection::vec(
            ("[a-z.]{1,12}", prop::collection::vec(1usize..4, 0..3)), 0..5), seed in any::<u64>()) {
            let mut ck = Checkpoint::default();
            let mut x = seed;
            for (name, shape) in records {
                let len: usize = shape.iter().product();
                let values = (0..len).map(|_| { x = x.wrapping_mul(6364136223846793005).wrapping_add(1); f64::from_bits(x >> 2) }).collect();
                ck.push(name, shape, values);
            }
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), ck.to_bytes());
        }
    }
}
