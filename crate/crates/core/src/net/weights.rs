//! `LSW1` weight container.
//!
//! Layout (all integers u32 little-endian):
//!
//! ```text
//! "LSW1" | record count | { name len | UTF-8 name | rank | dims[rank] | f32 LE payload }*
//! ```

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use super::Network;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LSW1";

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightContainer {
    pub records: Vec<WeightRecord>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(Error::DimMismatch {
                expected: n,
                found: remaining,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

impl WeightContainer {
    pub fn from_network<T: Scalar>(net: &Network<T>) -> Self {
        WeightContainer {
            records: net
                .params()
                .iter()
                .map(|p| WeightRecord {
                    name: p.name.clone(),
                    dims: p.tensor.shape().to_vec(),
                    data: p.tensor.data().iter().map(|v| v.to_f32_lossy()).collect(),
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.extend_from_slice(&(r.dims.len() as u32).to_le_bytes());
            for &d in &r.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &r.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let mut r = Reader { bytes, pos: 4 };
        let count = r.u32()?;
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for _ in 0..count {
            let len = r.u32()?;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::NameMismatch("record name is not UTF-8".into()))?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(Error::NameMismatch(format!("duplicate record `{name}`")));
            }
            let rank = r.u32()?;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let payload = r.take(n * 4)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            records.push(WeightRecord { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::DimMismatch {
                expected: r.pos,
                found: bytes.len(),
            });
        }
        Ok(WeightContainer { records })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Outcome of a load: what was replaced and what did not match.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// Container records with no tensor of that name in the network.
    pub unmatched: Vec<String>,
    /// Network tensors absent from the container.
    pub missing: Vec<String>,
}

pub fn save_weights<T: Scalar>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    WeightContainer::from_network(net).write(path)
}

/// Strict loads require the container to match the network exactly. Non-strict
/// loads replace tensors with matching names and leave the rest untouched.
pub fn load_weights<T: Scalar>(
    net: &mut Network<T>,
    path: impl AsRef<Path>,
    strict: bool,
) -> Result<LoadReport> {
    apply_container(net, &WeightContainer::read(path)?, strict)
}

pub fn apply_container<T: Scalar>(
    net: &mut Network<T>,
    container: &WeightContainer,
    strict: bool,
) -> Result<LoadReport> {
    let index: HashMap<&str, usize> = net
        .params()
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name.as_str(), i))
        .collect();
    let mut report = LoadReport::default();
    let mut updates = Vec::new();
    for rec in &container.records {
        let Some(&id) = index.get(rec.name.as_str()) else {
            report.unmatched.push(rec.name.clone());
            continue;
        };
        let shape = net.params()[id].tensor.shape();
        if shape != rec.dims.as_slice() || rec.data.len() != shape.iter().product::<usize>() {
            return Err(Error::DimMismatch {
                expected: shape.iter().product(),
                found: rec.data.len(),
            });
        }
        updates.push((id, rec));
    }
    let present: HashSet<&str> = container.records.iter().map(|r| r.name.as_str()).collect();
    report.missing = net
        .params()
        .iter()
        .filter(|p| !present.contains(p.name.as_str()))
        .map(|p| p.name.clone())
        .collect();
    if strict && !(report.unmatched.is_empty() && report.missing.is_empty()) {
        return Err(Error::NameMismatch(format!(
            "unmatched {:?}, missing {:?}",
            report.unmatched, report.missing
        )));
    }
    for (id, rec) in updates {
        let data = rec.data.iter().map(|&v| T::lit(f64::from(v))).collect();
        net.set_param(id, Tensor::from_vec(&rec.dims, data)?)?;
        report.loaded.push(rec.name.clone());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> WeightContainer {
        WeightContainer {
            records: vec![
                WeightRecord {
                    name: "a".into(),
                    dims: vec![2],
                    data: vec![1.0, -2.0],
                },
                WeightRecord {
                    name: "bc".into(),
                    dims: vec![1, 1],
                    data: vec![0.5],
                },
            ],
        }
    }

    #[test]
    fn golden_bytes() {
        let expected: Vec<u8> = [
            &b"LSW1"[..],
            &[2, 0, 0, 0],
            &[1, 0, 0, 0],
            b"a",
            &[1, 0, 0, 0],
            &[2, 0, 0, 0],
            &[0x00, 0x00, 0x80, 0x3F],
            &[0x00, 0x00, 0x00, 0xC0],
            &[2, 0, 0, 0],
            b"bc",
            &[2, 0, 0, 0],
            &[1, 0, 0, 0],
            &[1, 0, 0, 0],
            &[0x00, 0x00, 0x00, 0x3F],
        ]
        .concat();
        assert_eq!(tiny().to_bytes(), expected);
        assert_eq!(WeightContainer::from_bytes(&expected).unwrap(), tiny());
    }

    #[test]
    fn corrupt_containers() {
        let bytes = tiny().to_bytes();
        assert!(matches!(
            WeightContainer::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::DimMismatch { .. })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            WeightContainer::from_bytes(&extra),
            Err(Error::DimMismatch { .. })
        ));
        let mut magic = bytes.clone();
        magic[3] = b'2';
        assert!(matches!(
            WeightContainer::from_bytes(&magic),
            Err(Error::BadMagic)
        ));
        let dup = WeightContainer {
            records: vec![tiny().records[0].clone(), tiny().records[0].clone()],
        };
        assert!(matches!(
            WeightContainer::from_bytes(&dup.to_bytes()),
            Err(Error::NameMismatch(_))
        ));
    }
}
