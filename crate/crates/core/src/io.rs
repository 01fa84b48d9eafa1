//! Manifest (JSONL) and embedding (binary) file formats.
//!
//! Embedding files start with the 8-byte magic `PBEMBED1`, followed by
//! `n_rows` and `dim` as little-endian `u64`, then `n_rows * dim`
//! little-endian `f32` values in row-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::types::{EmbeddingSet, Group, ImageRecord, Manifest, Role};

pub const EMBEDDINGS_MAGIC: &[u8; 8] = b"PBEMBED1";
const HEADER_LEN: u64 = 24;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    image_id: String,
    identity_id: String,
    group: String,
    masked: bool,
    role: Role,
    #[serde(default)]
    subset: String,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_manifest(BufReader::new(file), name)
}

/// Parses JSONL records; blank lines are skipped. Line numbers in errors
/// are 1-based.
pub fn parse_manifest(reader: impl BufRead, name: impl Into<String>) -> Result<Manifest> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::ManifestParse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::ManifestParse {
            line: line_no,
            message: e.to_string(),
        })?;
        let group = Group::from_label(&raw.group).ok_or_else(|| Error::UnknownGroup {
            line: line_no,
            label: raw.group.clone(),
        })?;
        records.push(ImageRecord {
            image_id: raw.image_id,
            identity_id: raw.identity_id,
            group,
            masked: raw.masked,
            role: raw.role,
            subset: raw.subset,
        });
    }
    Manifest::new(name, records)
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_manifest_to(manifest, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_manifest_to(manifest: &Manifest, w: &mut impl Write) -> std::io::Result<()> {
    for r in manifest.records() {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_embeddings(path: impl AsRef<Path>, expected_rows: usize) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), expected_rows)
}

/// Reads an embedding file. Rows are returned exactly as stored, not normalized.
pub fn read_embeddings(mut reader: impl Read, expected_rows: usize) -> Result<EmbeddingSet> {
    let mut header = [0u8; HEADER_LEN as usize];
    let got = read_up_to(&mut reader, &mut header)?;
    if got < 8 || &header[..8] != EMBEDDINGS_MAGIC {
        return Err(Error::BadMagic);
    }
    if got < header.len() {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: got as u64,
        });
    }
    let n_rows = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let dim = u64::from_le_bytes(header[16..24].try_into().unwrap());
    if n_rows != expected_rows as u64 {
        return Err(Error::RowCountMismatch {
            expected: expected_rows,
            found: n_rows as usize,
        });
    }
    let payload = n_rows
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Shape(format!("{n_rows}x{dim} overflows")))?;

    let mut bytes = Vec::new();
    (&mut reader)
        .take(payload)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<embeddings>", e))?;
    if (bytes.len() as u64) < payload {
        return Err(Error::Truncated {
            expected: HEADER_LEN + payload,
            found: HEADER_LEN + bytes.len() as u64,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingSet::new(n_rows as usize, dim as usize, data)
}

fn read_up_to(reader: &mut impl Read, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::io("<embeddings>", e)),
        }
    }
    Ok(filled)
}

pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_embeddings_to(set, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_embeddings_to(set: &EmbeddingSet, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(EMBEDDINGS_MAGIC)?;
    w.write_all(&(set.n_rows() as u64).to_le_bytes())?;
    w.write_all(&(set.dim() as u64).to_le_bytes())?;
    for v in set.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}
