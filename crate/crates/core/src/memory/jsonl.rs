//! Line-delimited JSON interop: `{"text": ..., "embedding": [...], "prenorm": ...}`.
//!
//! `embedding` is the encoder output before normalization. A missing
//! `prenorm` is recomputed from it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SupportMemory;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::io_util::atomic_write;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonlRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prenorm: Option<f64>,
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<JsonlRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Malformed(format!("line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_jsonl_file(path: impl AsRef<Path>) -> Result<Vec<JsonlRecord>> {
    read_jsonl(BufReader::new(File::open(path)?))
}

pub fn write_jsonl<W: Write>(records: &[JsonlRecord], mut w: W) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl_file(records: &[JsonlRecord], path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), |f| write_jsonl(records, BufWriter::new(f)))
}

/// Normalize each record's embedding into a memory. All records must carry
/// an embedding of the same dimension.
pub fn memory_from_jsonl(records: &[JsonlRecord]) -> Result<SupportMemory> {
    let first = records.first().ok_or(Error::EmptyCorpus)?;
    let dim = first
        .embedding
        .as_ref()
        .map(Vec::len)
        .ok_or_else(|| Error::Malformed("record 1 has no embedding".into()))?;
    let mut memory = SupportMemory::with_capacity(dim, records.len());
    for (i, rec) in records.iter().enumerate() {
        let raw = rec
            .embedding
            .as_ref()
            .ok_or_else(|| Error::Malformed(format!("record {} has no embedding", i + 1)))?;
        let (e, norm) = Embedding::normalize_dim(raw, dim)?;
        memory.push(&e, rec.prenorm.unwrap_or(norm), rec.text.clone())?;
    }
    Ok(memory)
}
