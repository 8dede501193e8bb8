//! `NXIDX1` binary index format.
//!
//! ```text
//! magic   "NXIDX1"                         6 bytes
//! dim     u32 little-endian
//! count   u64 little-endian
//! count × { id_len u64 LE, id UTF-8 bytes, dim × f32 LE }
//! ```
//!
//! Vectors are stored exactly as held in memory, so a round trip is bit-exact.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DenseVector, FlatIndex, IndexError, Result};

pub const MAGIC: &[u8; 6] = b"NXIDX1";
const MAGIC_FAMILY: &[u8; 5] = b"NXIDX";

pub fn write_index<W: Write>(index: &FlatIndex, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(index.dim() as u32).to_le_bytes())?;
    out.write_all(&(index.len() as u64).to_le_bytes())?;
    for (id, v) in index.iter() {
        out.write_all(&(id.len() as u64).to_le_bytes())?;
        out.write_all(id.as_bytes())?;
        for x in v {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_index(index: &FlatIndex, path: impl AsRef<Path>) -> Result<()> {
    write_index(index, BufWriter::new(File::create(path)?))
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => IndexError::TruncatedFile,
        _ => IndexError::Io(e),
    })
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or_truncated(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_index<R: Read>(mut input: R) -> Result<FlatIndex> {
    let mut magic = [0u8; 6];
    read_exact_or_truncated(&mut input, &mut magic).map_err(|e| match e {
        IndexError::TruncatedFile => IndexError::BadMagic,
        other => other,
    })?;
    if &magic != MAGIC {
        if magic.starts_with(MAGIC_FAMILY) {
            return Err(IndexError::VersionMismatch {
                found: String::from_utf8_lossy(&magic[5..]).into_owned(),
            });
        }
        return Err(IndexError::BadMagic);
    }
    let mut dim = [0u8; 4];
    read_exact_or_truncated(&mut input, &mut dim)?;
    let dim = u32::from_le_bytes(dim) as usize;
    let count = read_u64(&mut input)?;

    let mut records = Vec::new();
    let mut vec_bytes = vec![0u8; dim * 4];
    for record in 0..count {
        let id_len = read_u64(&mut input)?;
        let mut id = Vec::new();
        let got = (&mut input).take(id_len).read_to_end(&mut id)?;
        if got as u64 != id_len {
            return Err(IndexError::TruncatedFile);
        }
        let id = String::from_utf8(id).map_err(|_| IndexError::InvalidId { record })?;
        read_exact_or_truncated(&mut input, &mut vec_bytes)?;
        let values = vec_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push((id, DenseVector::new(values)?));
    }
    FlatIndex::build(records, dim)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<FlatIndex> {
    read_index(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two() -> FlatIndex {
        FlatIndex::build(
            [
                ("a", DenseVector::new(vec![0.0, 0.0]).unwrap()),
                ("b", DenseVector::new(vec![3.0, 4.0]).unwrap()),
            ],
            2,
        )
        .unwrap()
    }

    fn bytes(idx: &FlatIndex) -> Vec<u8> {
        let mut buf = Vec::new();
        write_index(idx, &mut buf).unwrap();
        buf
    }

    #[test]
    fn layout_is_as_documented() {
        let buf = bytes(&two());
        assert_eq!(&buf[..6], b"NXIDX1");
        assert_eq!(&buf[6..10], &2u32.to_le_bytes());
        assert_eq!(&buf[10..18], &2u64.to_le_bytes());
        assert_eq!(&buf[18..26], &1u64.to_le_bytes());
        assert_eq!(buf[26], b'a');
        assert_eq!(buf.len(), 18 + 2 * (8 + 1 + 8));
        assert_eq!(&buf[buf.len() - 8..buf.len() - 4], &3.0f32.to_le_bytes());
    }

    #[test]
    fn round_trip() {
        let idx = two();
        assert_eq!(read_index(bytes(&idx).as_slice()).unwrap(), idx);
    }

    #[test]
    fn corrupted_magic() {
        let mut buf = bytes(&two());
        buf[0] = b'X';
        assert!(matches!(read_index(buf.as_slice()), Err(IndexError::BadMagic)));
        assert!(matches!(read_index(&b"NX"[..]), Err(IndexError::BadMagic)));
    }

    #[test]
    fn other_version() {
        let mut buf = bytes(&two());
        buf[5] = b'2';
        assert!(matches!(
            read_index(buf.as_slice()),
            Err(IndexError::VersionMismatch { found }) if found == "2"
        ));
    }

    #[test]
    fn truncation_anywhere_is_detected() {
        let buf = bytes(&two());
        for cut in 6..buf.len() {
            assert!(
                matches!(read_index(&buf[..cut]), Err(IndexError::TruncatedFile)),
                "cut at {cut}"
            );
        }
    }
}
