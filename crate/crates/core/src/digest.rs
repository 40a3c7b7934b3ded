use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let out = Sha256::digest(bytes);
    out.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Stable 64-bit hash of a string, used to derive per-cell seeds.
pub fn stable_hash64(s: &str) -> u64 {
    let out = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}
