//! Binary checkpoints: magic `NATNET1\0`, little-endian `u32` length of the
//! architecture text, the text itself, `u64` parameter count, then the
//! parameters as little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use super::model::{build_model, ArchConfig, Model};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NATNET1\0";

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let arch = model
        .arch()
        .ok_or_else(|| Error::InvalidConfig("only models built from an architecture config can be saved".into()))?;
    let text = arch.to_text();
    w.write_all(MAGIC)?;
    w.write_all(&(text.len() as u32).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    w.write_all(&(model.params().len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(model.params().len() * 8);
    for p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let bad = |m: &str| Error::MalformedCheckpoint(m.into());
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("missing NATNET1 magic"));
    }
    let text_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let text_end = 12 + text_len;
    if bytes.len() < text_end + 8 {
        return Err(bad("truncated header"));
    }
    let text = std::str::from_utf8(&bytes[12..text_end]).map_err(|_| bad("architecture text is not UTF-8"))?;
    let arch = ArchConfig::from_text(text).map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
    let count = u64::from_le_bytes(bytes[text_end..text_end + 8].try_into().expect("8 bytes")) as usize;
    let body = &bytes[text_end + 8..];
    let mut model = build_model(&arch, 0)?;
    if count != model.params().len() {
        return Err(bad(&format!("architecture needs {} parameters, file declares {count}", model.params().len())));
    }
    if body.len() != count * 8 {
        return Err(bad(&format!("expected {} parameter bytes, found {}", count * 8, body.len())));
    }
    for (p, chunk) in model.params_mut().iter_mut().zip(body.chunks_exact(8)) {
        *p = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint(model, std::io::BufWriter::new(f))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}
