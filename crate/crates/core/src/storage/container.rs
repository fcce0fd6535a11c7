//! Packed chunk container.
//!
//! ```text
//! "RDOX" | u32 version=1 | u32 K | K x (u64 file_id, u64 offset, u64 length) | payloads
//! ```
//!
//! All integers little-endian. Offsets are absolute from the start of the
//! container; the first payload starts right after the table.

use crate::error::StorageError;

pub const MAGIC: [u8; 4] = *b"RDOX";
pub const VERSION: u32 = 1;
const ENTRY_LEN: usize = 24;

pub fn header_len(k: usize) -> usize {
    12 + ENTRY_LEN * k
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedChunkFile {
    pub files: Vec<(u64, Vec<u8>)>,
}

impl PackedChunkFile {
    pub fn encode(&self) -> Vec<u8> {
        let k = self.files.len();
        let total: usize = self.files.iter().map(|(_, p)| p.len()).sum();
        let mut out = Vec::with_capacity(header_len(k) + total);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(k as u32).to_le_bytes());
        let mut offset = header_len(k) as u64;
        for (id, payload) in &self.files {
            out.extend_from_slice(&id.to_le_bytes());
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            offset += payload.len() as u64;
        }
        for (_, payload) in &self.files {
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, StorageError> {
        if bytes.len() < 12 {
            return Err(StorageError::Corrupt(format!(
                "{} bytes is shorter than the fixed header",
                bytes.len()
            )));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(StorageError::BadMagic(magic));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(StorageError::BadVersion(version));
        }
        let k = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let table_end = k
            .checked_mul(ENTRY_LEN)
            .and_then(|t| t.checked_add(12))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| StorageError::Corrupt(format!("table for {k} entries exceeds container")))?;
        let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let mut files = Vec::with_capacity(k);
        let mut expected_offset = table_end as u64;
        for i in 0..k {
            let base = 12 + ENTRY_LEN * i;
            let (id, offset, len) = (u64_at(base), u64_at(base + 8), u64_at(base + 16));
            if offset != expected_offset {
                return Err(StorageError::Corrupt(format!(
                    "entry {i} offset {offset}, expected {expected_offset}"
                )));
            }
            let end = offset
                .checked_add(len)
                .filter(|&e| e <= bytes.len() as u64)
                .ok_or_else(|| StorageError::Corrupt(format!("entry {i} runs past the end")))?;
            files.push((id, bytes[offset as usize..end as usize].to_vec()));
            expected_offset = end;
        }
        if expected_offset != bytes.len() as u64 {
            return Err(StorageError::Corrupt(format!(
                "{} trailing bytes",
                bytes.len() as u64 - expected_offset
            )));
        }
        Ok(Self { files })
    }
}
