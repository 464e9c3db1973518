//! Little-endian readers and atomic file writes shared by the file formats.

use std::fs::File;
use std::io::{self, Read};
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Truncated(what),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u16<R: Read>(r: &mut R, what: &'static str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact_or(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &'static str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

/// Read `n` little-endian floats without trusting `n` for a single allocation.
pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize, what: &'static str) -> Result<Vec<f32>> {
    const CHUNK: usize = 1 << 16;
    let mut out = Vec::with_capacity(n.min(1 << 24));
    let mut buf = vec![0u8; CHUNK * 4];
    let mut left = n;
    while left > 0 {
        let take = left.min(CHUNK);
        let bytes = &mut buf[..take * 4];
        read_exact_or(r, bytes, what)?;
        out.extend(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
        left -= take;
    }
    Ok(out)
}

/// Run `write` against a temporary file next to `path`, then rename it over
/// `path`. A failed write leaves no partial output behind.
pub fn atomic_write<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut File) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    write(tmp.as_file_mut())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
