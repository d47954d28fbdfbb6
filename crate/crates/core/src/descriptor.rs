//! The per-segment descriptor container shared by the extraction and
//! encoding stages, and its `DSC1` binary form:
//!
//! ```text
//! "DSC1" | u32 version | u32 dim | u64 count | u32 id_len | id bytes (UTF-8)
//!        | count * dim f32, little-endian, row-major
//! ```

use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const DSC_MAGIC: &[u8; 4] = b"DSC1";
pub const DSC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    segment_id: String,
    dim: usize,
    data: Vec<f32>,
}

impl DescriptorSet {
    pub fn new(segment_id: impl Into<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::format("DSC1", "dimension must be positive"));
        }
        if data.len() % dim != 0 {
            return Err(Error::format(
                "DSC1",
                format!("{} values is not a multiple of dim {dim}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("DSC1", "non-finite descriptor value"));
        }
        Ok(DescriptorSet {
            segment_id: segment_id.into(),
            dim,
            data,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(
        segment_id: impl Into<String>,
        dim: usize,
        rows: &[R],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend(row.iter().map(|&v| v as f32));
        }
        Self::new(segment_id, dim, data)
    }

    pub fn empty(segment_id: impl Into<String>, dim: usize) -> Result<Self> {
        Self::new(segment_id, dim, Vec::new())
    }

    pub fn segment_id(&self) -> &str {
        &self.segment_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let id = self.segment_id.as_bytes();
        let mut out = Vec::with_capacity(28 + id.len() + 4 * self.data.len());
        out.extend_from_slice(DSC_MAGIC);
        out.write_u32::<LittleEndian>(DSC_VERSION).unwrap();
        out.write_u32::<LittleEndian>(self.dim as u32).unwrap();
        out.write_u64::<LittleEndian>(self.len() as u64).unwrap();
        out.write_u32::<LittleEndian>(id.len() as u32).unwrap();
        out.extend_from_slice(id);
        for &v in &self.data {
            out.write_f32::<LittleEndian>(v).unwrap();
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: &str| Error::format("DSC1", m.to_string());
        if bytes.len() < 4 || &bytes[..4] != DSC_MAGIC {
            return Err(fail("bad magic"));
        }
        let mut cur = &bytes[4..];
        let version = cur.read_u32::<LittleEndian>().map_err(|_| fail("truncated header"))?;
        if version != DSC_VERSION {
            return Err(fail(&format!("unsupported version {version}")));
        }
        let dim = cur.read_u32::<LittleEndian>().map_err(|_| fail("truncated header"))? as usize;
        let count = cur.read_u64::<LittleEndian>().map_err(|_| fail("truncated header"))?;
        let id_len = cur.read_u32::<LittleEndian>().map_err(|_| fail("truncated header"))? as usize;
        if cur.len() < id_len {
            return Err(fail("truncated segment id"));
        }
        let (id, body) = cur.split_at(id_len);
        let id = std::str::from_utf8(id).map_err(|_| fail("segment id is not UTF-8"))?;
        let values = (count as u128) * (dim as u128);
        if values * 4 != body.len() as u128 {
            return Err(fail(&format!(
                "header declares {count}x{dim} values, body has {} bytes",
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(id, dim, data)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_round_trip(
            id in "[a-z0-9_é-]{0,12}",
            dim in 1usize..6,
            rows in proptest::collection::vec(proptest::collection::vec(-1e6f32..1e6, 5), 0..8),
        ) {
            let data: Vec<f32> = rows.iter().flat_map(|r| r[..dim].iter().copied()).collect();
            let set = DescriptorSet::new(id, dim, data).unwrap();
            prop_assert_eq!(DescriptorSet::from_bytes(&set.to_bytes()).unwrap(), set);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let set = DescriptorSet::from_rows("s", 3, &[[1.0, 2.0, 3.0]]).unwrap();
        let mut bytes = set.to_bytes();
        bytes.pop();
        assert!(DescriptorSet::from_bytes(&bytes).is_err());
        assert!(DescriptorSet::from_bytes(b"XXXX").is_err());
        assert!(DescriptorSet::new("s", 0, vec![]).is_err());
        assert!(DescriptorSet::new("s", 2, vec![f32::NAN, 0.0]).is_err());
        assert!(DescriptorSet::from_rows("s", 2, &[vec![1.0]]).is_err());
    }

    #[test]
    fn zero_dim_header_rejected() {
        let mut bytes = DSC_MAGIC.to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        assert!(DescriptorSet::from_bytes(&bytes).is_err());
    }
}
