//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "HGNN"            magic
//! u32               format version
//! u32               record count
//! per record:
//!   u32             name length in bytes
//!   [u8]            UTF-8 name
//!   u32             rank
//!   u64 * rank      extents
//!   u8              scalar width (4 = f32, 8 = f64)
//!   [u8]            little-endian payload
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{AdError, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HGNN";
pub const VERSION: u32 = 1;

/// Serializes named tensors to `writer`.
pub fn write_records<T: Real, W: Write>(
    writer: &mut W,
    records: &[(String, Tensor<T>)],
) -> Result<()> {
    writer.write_all(MAGIC)?;
    writer.write_u32::<LittleEndian>(VERSION)?;
    writer.write_u32::<LittleEndian>(records.len() as u32)?;
    let mut payload = Vec::new();
    for (name, t) in records {
        writer.write_u32::<LittleEndian>(name.len() as u32)?;
        writer.write_all(name.as_bytes())?;
        writer.write_u32::<LittleEndian>(2)?;
        writer.write_u64::<LittleEndian>(t.rows() as u64)?;
        writer.write_u64::<LittleEndian>(t.cols() as u64)?;
        writer.write_u8(T::WIDTH)?;
        payload.clear();
        for &v in t.data() {
            v.write_le(&mut payload);
        }
        writer.write_all(&payload)?;
    }
    Ok(())
}

/// Reads named tensors, converting each payload to `T`.
pub fn read_records<T: Real, R: Read>(reader: &mut R) -> Result<Vec<(String, Tensor<T>)>> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(AdError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = reader.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(AdError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let count = reader.read_u32::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = reader.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        reader.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| AdError::Checkpoint(format!("record name is not UTF-8: {e}")))?;
        let rank = reader.read_u32::<LittleEndian>()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(reader.read_u64::<LittleEndian>()? as usize);
        }
        let (rows, cols) = match dims.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => {
                return Err(AdError::Checkpoint(format!(
                    "record `{name}` has unsupported rank {rank}"
                )))
            }
        };
        let width = reader.read_u8()?;
        let mut bytes = vec![0u8; rows * cols * width as usize];
        reader.read_exact(&mut bytes)?;
        let data: Vec<T> = match width {
            4 => bytes
                .chunks_exact(4)
                .map(|b| T::from_f64(f32::read_le(b) as f64))
                .collect(),
            8 => bytes
                .chunks_exact(8)
                .map(|b| T::from_f64(f64::read_le(b)))
                .collect(),
            w => {
                return Err(AdError::Checkpoint(format!(
                    "record `{name}` has scalar width {w}"
                )))
            }
        };
        out.push((name, Tensor::new(rows, cols, data)?));
    }
    Ok(out)
}

pub fn save<T: Real>(path: &Path, records: &[(String, Tensor<T>)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_records(&mut w, records)?;
    w.flush()?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    read_records(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn f32_round_trip_is_bit_exact(
            values in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..64),
            name in "[a-z.]{1,12}",
        ) {
            let t = Tensor::new(1, values.len(), values.clone()).unwrap();
            let mut buf = Vec::new();
            write_records(&mut buf, &[(name.clone(), t)]).unwrap();
            let back: Vec<(String, Tensor<f32>)> = read_records(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(&back[0].0, &name);
            let bits: Vec<u32> = back[0].1.data().iter().map(|v| v.to_bits()).collect();
            let want: Vec<u32> = values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits, want);
        }
    }

    #[test]
    fn header_layout() {
        let t = Tensor::<f64>::new(2, 1, vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_records(&mut buf, &[("w".to_string(), t.clone())]).unwrap();
        assert_eq!(&buf[..4], b"HGNN");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), VERSION);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        let back: Vec<(String, Tensor<f64>)> = read_records(&mut buf.as_slice()).unwrap();
        assert_eq!(back[0].1, t);
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00".to_vec();
        assert!(read_records::<f32, _>(&mut buf.as_slice()).is_err());
    }
}
