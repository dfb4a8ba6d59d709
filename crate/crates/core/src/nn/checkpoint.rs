//! Checkpoint file format.
//!
//! ```text
//! "AVNN" | version u8 | record count u32 |
//!   records: name len u16, name bytes, rank u8, dims u32 each, f64 data |
//! CRC-32 of everything above
//! ```
//! All integers and floats little-endian. Records hold parameter values
//! only; optimizer state is transient.

use super::model::NetDims;
use super::store::{ParamGroup, ParamStore};
use super::tensor::Tensor;
use super::NnError;
use crate::util::{crc32, ByteReader, ByteWriter};
use std::path::Path;

const MAGIC: &[u8; 4] = b"AVNN";
const VERSION: u8 = 1;

/// Serialize every parameter of the store.
pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<(), NnError> {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u8(VERSION);
    w.u32(store.len() as u32);
    for (name, _, value) in store.iter() {
        let nb = name.as_bytes();
        w.u16(nb.len() as u16);
        w.bytes(nb);
        w.u8(2);
        w.u32(value.rows as u32);
        w.u32(value.cols as u32);
        for &v in &value.data {
            w.f64(v);
        }
    }
    std::fs::write(path, w.finish_crc())?;
    Ok(())
}

/// Read a checkpoint back into a fresh store. Parameter groups are recovered
/// from the name prefixes.
pub fn load_checkpoint(path: &Path) -> Result<ParamStore, NnError> {
    let buf = std::fs::read(path)?;
    parse_checkpoint(&buf)
}

fn malformed(what: &str) -> NnError {
    NnError::MalformedCheckpoint(what.to_string())
}

pub fn parse_checkpoint(buf: &[u8]) -> Result<ParamStore, NnError> {
    if buf.len() < MAGIC.len() + 1 + 4 + 4 {
        return Err(malformed("truncated header"));
    }
    let (body, crc_bytes) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32(body) != stored {
        return Err(NnError::ChecksumMismatch);
    }
    let mut r = ByteReader::new(body);
    if r.bytes(4).map_err(|_| malformed("short magic"))? != MAGIC {
        return Err(malformed("bad magic"));
    }
    if r.u8().map_err(|_| malformed("short version"))? != VERSION {
        return Err(malformed("unsupported version"));
    }
    let count = r.u32().map_err(|_| malformed("short record count"))?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u16().map_err(|_| malformed("short name length"))? as usize;
        let name = std::str::from_utf8(r.bytes(name_len).map_err(|_| malformed("short name"))?)
            .map_err(|_| malformed("name not utf-8"))?
            .to_string();
        let rank = r.u8().map_err(|_| malformed("short rank"))?;
        if rank != 2 {
            return Err(malformed("only rank-2 records supported"));
        }
        let rows = r.u32().map_err(|_| malformed("short dims"))? as usize;
        let cols = r.u32().map_err(|_| malformed("short dims"))? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64().map_err(|_| malformed("short data"))?);
        }
        let group = ParamGroup::from_name(&name)
            .ok_or_else(|| malformed("record name lacks a known group prefix"))?;
        store.add(&name, group, Tensor::from_vec(rows, cols, data));
    }
    if r.remaining() != 0 {
        return Err(malformed("trailing bytes"));
    }
    Ok(store)
}

/// Recover layer sizes from the shapes of well-known parameters.
pub fn dims_from_store(store: &ParamStore) -> Result<NetDims, NnError> {
    let shape = |name: &str| -> Result<(usize, usize), NnError> {
        store
            .value_of(name)
            .map(|t| (t.rows, t.cols))
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    };
    let (enc_rows, proj_dim) = shape("adapt.enc_now.w")?;
    let (token_dim, _) = shape("proj.in.w")?;
    let (positions, _) = shape("adapt.pos")?;
    let (base_in, base_hidden) = shape("base.l1.w")?;
    let (_, token_out) = shape("base.out.w")?;
    let (_, attn_ff) = shape("adapt.ff.w1")?;
    let (_, h1) = shape("adapt.head.l1.w")?;
    let (_, h2) = shape("adapt.head.l2.w")?;
    let (_, h3) = shape("adapt.head.l3.w")?;
    let (_, head_out) = shape("adapt.head.l4.w")?;
    let token_count = positions.checked_sub(2).ok_or_else(|| malformed("bad position table"))?;
    if token_count == 0 || token_dim == 0 || token_out != token_count * token_dim {
        return Err(malformed("inconsistent token shapes"));
    }
    let goal_dim = 8;
    let pooled = base_in.checked_sub(goal_dim).ok_or_else(|| malformed("bad base input"))?;
    Ok(NetDims {
        scan_beams: enc_rows,
        pooled,
        goal_dim,
        base_hidden,
        token_count,
        token_dim,
        proj_dim,
        attn_ff,
        head_hidden: [h1, h2, h3],
        chunk_len: head_out / 2,
    })
}
