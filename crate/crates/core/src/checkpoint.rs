//! Named parameter sets and the `AGWT` checkpoint file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "AGWT" | version u32 | count u32 |
//!   count × ( name_len u32 | name utf-8 | rank u32 | dims u32[rank] | f32[prod(dims)] )
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{contract, Error, Result};

pub const MAGIC: &[u8; 4] = b"AGWT";
pub const FORMAT_VERSION: u32 = 1;

/// Ordered collection of named `f32` tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor<f32>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<f32>) -> Result<()> {
        let name = name.into();
        contract!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<f32>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.numel());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (name, t) in self.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(format!("bad magic {magic:?}, expected AGWT"));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(format!("unsupported format version {version}"));
        }
        let count = read_u32(&mut r)?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            read_exact(&mut r, &mut name)?;
            let name =
                String::from_utf8(name).map_err(|e| format!("parameter name is not utf-8: {e}"))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            if r.len() < numel * 4 {
                return Err(format!("truncated payload for {name}"));
            }
            let data = r[..numel * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            r = &r[numel * 4..];
            let t = Tensor::new(shape, data).map_err(|e| e.to_string())?;
            store.push(name, t).map_err(|e| e.to_string())?;
        }
        if !r.is_empty() {
            return Err(format!("{} trailing bytes", r.len()));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::load(path, msg))
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> std::result::Result<(), String> {
    r.read_exact(buf)
        .map_err(|_| "unexpected end of checkpoint".to_string())
}

fn read_u32(r: &mut &[u8]) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut s = ParamStore::new();
        s.push("w", Tensor::new([2], vec![1.0f32, -2.0]).unwrap())
            .unwrap();
        let b = s.to_bytes();
        assert_eq!(&b[..4], b"AGWT");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        assert_eq!(&b[16..17], b"w");
        assert_eq!(u32::from_le_bytes(b[17..21].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[21..25].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(b[29..33].try_into().unwrap()), -2.0);
        assert_eq!(b.len(), 33);
    }

    #[test]
    fn rejects_garbage() {
        assert!(ParamStore::from_bytes(b"NOPE\x01\x00\x00\x00").is_err());
        let mut s = ParamStore::new();
        s.push("a", Tensor::new([3], vec![1.0f32; 3]).unwrap())
            .unwrap();
        let b = s.to_bytes();
        assert!(ParamStore::from_bytes(&b[..b.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(dims in proptest::collection::vec(1usize..4, 0..4), seed in any::<u32>()) {
            let numel: usize = dims.iter().product();
            let data: Vec<f32> = (0..numel).map(|i| (i as f32 + seed as f32).sin()).collect();
            let mut s = ParamStore::new();
            s.push("layer.weight", Tensor::new(dims.clone(), data).unwrap()).unwrap();
            s.push("bias", Tensor::new([2], vec![0.5, f32::MIN_POSITIVE]).unwrap()).unwrap();
            let back = ParamStore::from_bytes(&s.to_bytes()).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
