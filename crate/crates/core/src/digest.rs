//! Content hashing for manifests.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{PrismError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| PrismError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Write `bytes` to `path` and return their hash.
pub fn write_hashed(path: &Path, bytes: &[u8]) -> Result<String> {
    fs::write(path, bytes).map_err(|e| PrismError::io(path, e))?;
    Ok(sha256_hex(bytes))
}
