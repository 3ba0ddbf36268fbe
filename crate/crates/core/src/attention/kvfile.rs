//! `<table_id>.kv` blobs: a little-endian `u32` header
//! `{table_id, token_count, num_layers, num_heads, head_dim, local_offset}`
//! followed by every layer's keys and then every layer's values, each
//! `[token][head][dim]` as `f32`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use super::model::TableKV;
use super::tensor::HeadTensor;
use crate::schema::TableId;

const HEADER_WORDS: usize = 6;

pub fn kv_file_name(table_id: TableId) -> String {
    format!("{table_id}.kv")
}

pub fn kv_path(dir: &Path, table_id: TableId) -> PathBuf {
    dir.join(kv_file_name(table_id))
}

fn to_u32(v: usize, what: &str) -> io::Result<u32> {
    u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, format!("{what} exceeds u32")))
}

pub fn encode_table_kv(kv: &TableKV<f32>) -> io::Result<Vec<u8>> {
    let first = kv.keys.first();
    let header = [
        to_u32(kv.table_id, "table_id")?,
        to_u32(kv.token_count(), "token_count")?,
        to_u32(kv.keys.len(), "num_layers")?,
        to_u32(first.map_or(0, HeadTensor::heads), "num_heads")?,
        to_u32(first.map_or(0, HeadTensor::head_dim), "head_dim")?,
        to_u32(kv.local_offset, "local_offset")?,
    ];
    let floats: usize = kv.keys.iter().chain(&kv.values).map(|t| t.as_slice().len()).sum();
    let mut buf = Vec::with_capacity(HEADER_WORDS * 4 + floats * 4);
    for h in header {
        buf.extend_from_slice(&h.to_le_bytes());
    }
    for t in kv.keys.iter().chain(&kv.values) {
        for v in t.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_table_kv(mut bytes: &[u8]) -> io::Result<TableKV<f32>> {
    let invalid = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());
    let mut header = [0u32; HEADER_WORDS];
    for h in &mut header {
        let mut w = [0u8; 4];
        bytes.read_exact(&mut w).map_err(|_| invalid("truncated kv header"))?;
        *h = u32::from_le_bytes(w);
    }
    let [table_id, tokens, layers, heads, head_dim, local_offset] = header.map(|v| v as usize);
    let per_tensor = tokens
        .checked_mul(heads)
        .and_then(|v| v.checked_mul(head_dim))
        .ok_or_else(|| invalid("kv shape overflows"))?;
    let expected = per_tensor
        .checked_mul(layers * 2)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| invalid("kv shape overflows"))?;
    if bytes.len() != expected {
        return Err(invalid(&format!("kv payload is {} bytes, header implies {expected}", bytes.len())));
    }
    let read_tensor = |bytes: &mut &[u8]| {
        let data = bytes[..per_tensor * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        *bytes = &bytes[per_tensor * 4..];
        HeadTensor::from_vec(tokens, heads, head_dim, data).expect("length checked")
    };
    let keys = (0..layers).map(|_| read_tensor(&mut bytes)).collect();
    let values = (0..layers).map(|_| read_tensor(&mut bytes)).collect();
    Ok(TableKV { table_id, local_offset, keys, values })
}

pub fn write_table_kv(dir: &Path, kv: &TableKV<f32>) -> io::Result<PathBuf> {
    let path = kv_path(dir, kv.table_id);
    let mut f = fs::File::create(&path)?;
    f.write_all(&encode_table_kv(kv)?)?;
    Ok(path)
}

pub fn read_table_kv(path: &Path) -> io::Result<TableKV<f32>> {
    decode_table_kv(&fs::read(path)?)
}
