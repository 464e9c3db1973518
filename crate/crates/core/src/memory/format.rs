//! DCAP binary memory file.
//!
//! ```text
//! magic  "DCAP"            4 bytes
//! version u16 = 1, flags u16 = 0, dim u32, count u64   (little-endian)
//! count × dim f32 embeddings, row-major
//! count f32 prenorms
//! count × (u32 byte length, UTF-8 text)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::SupportMemory;
use crate::error::{Error, Result};
use crate::io_util::{atomic_write, read_exact_or, read_f32s, read_u16, read_u32, read_u64};

pub const MAGIC: [u8; 4] = *b"DCAP";
pub const VERSION: u16 = 1;

pub fn write_memory<W: Write>(memory: &SupportMemory, mut w: W) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&0u16.to_le_bytes())?;
    let dim = u32::try_from(memory.dim())
        .map_err(|_| Error::InvalidArgument("dimension does not fit in u32".into()))?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&(memory.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(1 << 16);
    for chunk in memory.data().chunks(1 << 14) {
        buf.clear();
        buf.extend(chunk.iter().flat_map(|x| x.to_le_bytes()));
        w.write_all(&buf)?;
    }
    for p in memory.prenorms() {
        w.write_all(&p.to_le_bytes())?;
    }
    for t in memory.texts() {
        let len = u32::try_from(t.len())
            .map_err(|_| Error::InvalidArgument("text longer than u32::MAX bytes".into()))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(t.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_memory<R: Read>(mut r: R) -> Result<SupportMemory> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "header")?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = read_u16(&mut r, "header")?;
    if version != VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let flags = read_u16(&mut r, "header")?;
    if flags != 0 {
        return Err(Error::Malformed(format!("unknown flags {flags:#06x}")));
    }
    let dim = read_u32(&mut r, "header")? as usize;
    let count = usize::try_from(read_u64(&mut r, "header")?)
        .map_err(|_| Error::Malformed("count overflows usize".into()))?;
    if dim == 0 {
        return Err(Error::Malformed("dimension is zero".into()));
    }
    let floats = count
        .checked_mul(dim)
        .ok_or_else(|| Error::Malformed("count × dim overflows".into()))?;
    let data = read_f32s(&mut r, floats, "embedding block")?;
    let prenorms = read_f32s(&mut r, count, "prenorm block")?;
    let mut texts = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = read_u32(&mut r, "text block")? as usize;
        let mut bytes = vec![0u8; len.min(1 << 20)];
        if len > bytes.len() {
            // oversized lengths come from corrupt headers; read incrementally
            bytes.clear();
            let got = r.by_ref().take(len as u64).read_to_end(&mut bytes)?;
            if got < len {
                return Err(Error::Truncated("text block"));
            }
        } else {
            read_exact_or(&mut r, &mut bytes, "text block")?;
        }
        texts.push(String::from_utf8(bytes).map_err(|e| Error::Malformed(format!("text is not UTF-8: {e}")))?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Malformed("trailing bytes after text block".into()));
    }
    SupportMemory::from_raw_parts(dim, data, prenorms, texts)
}

/// Write to a temporary sibling and rename into place.
pub fn save_memory(memory: &SupportMemory, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), |w| write_memory(memory, BufWriter::new(w)))
}

pub fn load_memory(path: impl AsRef<Path>) -> Result<SupportMemory> {
    read_memory(BufReader::new(File::open(path)?))
}

/// Load and require a specific embedding dimension.
pub fn load_memory_with_dim(path: impl AsRef<Path>, dim: usize) -> Result<SupportMemory> {
    let m = load_memory(path)?;
    crate::embedding::check_dim(dim, m.dim())?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Embedding;

    fn sample() -> SupportMemory {
        let mut m = SupportMemory::new(3);
        for (v, t) in [([1.0, 2.0, 2.0], "a red cube"), ([0.0, 0.0, 5.0], ""), ([1.0, 1.0, 0.0], "ein Würfel ☃")] {
            let (e, n) = Embedding::normalize(&v).unwrap();
            m.push(&e, n, t).unwrap();
        }
        m
    }

    fn bytes(m: &SupportMemory) -> Vec<u8> {
        let mut out = Vec::new();
        write_memory(m, &mut out).unwrap();
        out
    }

    #[test]
    fn header_layout() {
        let b = bytes(&sample());
        assert_eq!(&b[0..4], b"DCAP");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(&b[6..8], &[0, 0]);
        assert_eq!(&b[8..12], &[3, 0, 0, 0]);
        assert_eq!(&b[12..20], &[3, 0, 0, 0, 0, 0, 0, 0]);
        // first float is 1/3 in f32 little-endian
        assert_eq!(&b[20..24], &(1.0f32 / 3.0).to_le_bytes());
        let text_start = 20 + 9 * 4 + 3 * 4;
        assert_eq!(&b[text_start..text_start + 4], &[10, 0, 0, 0]);
        assert_eq!(&b[text_start + 4..text_start + 14], b"a red cube");
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = sample();
        let back = read_memory(bytes(&m).as_slice()).unwrap();
        assert_eq!(back.texts(), m.texts());
        let bits = |m: &SupportMemory| m.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
        assert_eq!(back.prenorms(), m.prenorms());
    }

    #[test]
    fn corrupted_magic() {
        let mut b = bytes(&sample());
        b[0] = b'X';
        assert!(matches!(read_memory(b.as_slice()), Err(Error::BadMagic(_))));
    }

    #[test]
    fn unsupported_version() {
        let mut b = bytes(&sample());
        b[4] = 2;
        assert!(matches!(read_memory(b.as_slice()), Err(Error::VersionUnsupported(2))));
    }

    #[test]
    fn truncation_is_reported_per_block() {
        let b = bytes(&sample());
        assert!(matches!(read_memory(&b[..10]), Err(Error::Truncated("header"))));
        assert!(matches!(read_memory(&b[..30]), Err(Error::Truncated("embedding block"))));
        assert!(matches!(read_memory(&b[..20 + 36 + 4]), Err(Error::Truncated("prenorm block"))));
        assert!(matches!(read_memory(&b[..b.len() - 1]), Err(Error::Truncated("text block"))));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut b = bytes(&sample());
        b.push(0);
        assert!(matches!(read_memory(b.as_slice()), Err(Error::Malformed(_))));
    }

    #[test]
    fn huge_count_in_corrupt_header_is_truncation() {
        let mut b = bytes(&sample());
        b[12..20].copy_from_slice(&(1u64 << 40).to_le_bytes());
        assert!(matches!(read_memory(b.as_slice()), Err(Error::Truncated(_))));
    }

    #[test]
    fn dimension_check_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.dcap");
        save_memory(&sample(), &path).unwrap();
        assert_eq!(load_memory_with_dim(&path, 3).unwrap().len(), 3);
        assert!(matches!(
            load_memory_with_dim(&path, 4),
            Err(Error::DimensionMismatch { expected: 4, got: 3 })
        ));
    }
}
