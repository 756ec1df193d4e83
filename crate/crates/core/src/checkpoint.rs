//! Binary checkpoint format.
//!
//! ```text
//! "MTAL0001"
//! repeated until EOF:
//!   u32 LE   name length in bytes
//!   [u8]     UTF-8 name
//!   u32 LE   rank
//!   u32 LE   extent, `rank` times
//!   f32 LE   values, row-major
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MTAL0001";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<f32>) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for (name, t) in &self.tensors {
            let bytes = name.as_bytes();
            w.write_all(&u32_of(bytes.len(), "name length")?.to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&u32_of(t.rank(), "rank")?.to_le_bytes())?;
            for &e in t.shape() {
                w.write_all(&u32_of(e, "extent")?.to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing a checkpoint to memory cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("missing magic header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let mut out = Checkpoint::new();
        loop {
            let mut first = [0u8; 1];
            if r.read(&mut first)? == 0 {
                break;
            }
            let mut rest = [0u8; 3];
            r.read_exact(&mut rest).map_err(truncated)?;
            let name_len = u32::from_le_bytes([first[0], rest[0], rest[1], rest[2]]) as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(truncated)?;
            let name = String::from_utf8(name)
                .map_err(|e| Error::Checkpoint(format!("tensor name is not UTF-8: {e}")))?;
            let rank = read_u32(&mut r).map_err(truncated)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut r).map_err(truncated)? as usize);
            }
            let len: usize = shape.iter().product();
            let mut raw = vec![0u8; len * 4];
            r.read_exact(&mut raw).map_err(truncated)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            out.push(name, Tensor::new(shape, data)?);
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} exceeds u32")))
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("truncated record".into())
    } else {
        e.into()
    }
}
