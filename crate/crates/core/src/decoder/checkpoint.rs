//! DCPM model checkpoint.
//!
//! ```text
//! magic "DCPM", version u16 = 1, flags u16 = 0
//! embed_dim, width, layers, heads, ffn_dim, max_len      u32 each
//! tensor count u32, then per tensor:
//!     name length u32, UTF-8 name, rank u32, dims u32 × rank, f32 data
//! vocab count u32, then per entry sorted by token:
//!     token length u32, UTF-8 token, id u32
//! ```
//! All integers and floats are little-endian. Parameters are held as `f64`
//! in memory and stored as `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{DecoderConfig, DecoderModel};
use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::io_util::{atomic_write, read_exact_or, read_f32s, read_u16, read_u32};

pub const MAGIC: [u8; 4] = *b"DCPM";
pub const VERSION: u16 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn get_str<R: Read>(r: &mut R, what: &'static str) -> Result<String> {
    let len = read_u32(r, what)? as usize;
    let mut bytes = Vec::new();
    let got = r.by_ref().take(len as u64).read_to_end(&mut bytes)?;
    if got < len {
        return Err(Error::Truncated(what));
    }
    String::from_utf8(bytes).map_err(|e| Error::Malformed(format!("{what}: {e}")))
}

pub fn write_model<W: Write>(model: &DecoderModel, mut w: W) -> Result<()> {
    let c = model.config();
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&0u16.to_le_bytes())?;
    for v in [c.embed_dim, c.width, c.layers, c.heads, c.ffn_dim, c.max_len] {
        put_u32(&mut w, v)?;
    }
    put_u32(&mut w, model.tensor_specs().len())?;
    for spec in model.tensor_specs() {
        put_str(&mut w, &spec.name)?;
        put_u32(&mut w, spec.dims.len())?;
        for &d in &spec.dims {
            put_u32(&mut w, d)?;
        }
        let bytes: Vec<u8> = model.params()[spec.range()]
            .iter()
            .flat_map(|&x| (x as f32).to_le_bytes())
            .collect();
        w.write_all(&bytes)?;
    }
    let pairs = model.vocab().sorted_pairs();
    put_u32(&mut w, pairs.len())?;
    for (tok, id) in pairs {
        put_str(&mut w, tok)?;
        w.write_all(&id.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<DecoderModel> {
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
    let mut fields = [0usize; 6];
    for f in fields.iter_mut() {
        *f = read_u32(&mut r, "header")? as usize;
    }
    let [embed_dim, width, layers, heads, ffn_dim, max_len] = fields;
    let defaults = DecoderConfig::toy(embed_dim);
    let config = DecoderConfig {
        embed_dim,
        width,
        layers,
        heads,
        ffn_dim,
        max_len,
        init_std: defaults.init_std,
        prefix_init_std: defaults.prefix_init_std,
    };
    config.validate()?;

    let count = read_u32(&mut r, "tensor table")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name = get_str(&mut r, "tensor table")?;
        let rank = read_u32(&mut r, "tensor table")? as usize;
        if rank > 8 {
            return Err(Error::Malformed(format!("tensor {name:?} has rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut r, "tensor table")? as usize);
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Malformed("tensor size overflows".into()))?;
        let data = read_f32s(&mut r, len, "tensor data")?.into_iter().map(f64::from).collect();
        tensors.push((name, dims, data));
    }

    let n = read_u32(&mut r, "vocabulary")? as usize;
    let mut pairs = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let tok = get_str(&mut r, "vocabulary")?;
        let id = read_u32(&mut r, "vocabulary")?;
        pairs.push((tok, id));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Malformed("trailing bytes after vocabulary".into()));
    }
    let vocab = Vocab::from_pairs(pairs)?;
    DecoderModel::from_tensors(config, vocab, tensors)
}

pub fn save_model(model: &DecoderModel, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), |f| write_model(model, BufWriter::new(f)))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DecoderModel> {
    read_model(BufReader::new(File::open(path)?))
}
