//! Shared artifact I/O: canonical JSON (UTF-8, sorted keys) and SHA-256
//! digests. Every manifest in the artifact tree goes through these helpers so
//! identical content always hashes identically.

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{io_err, Error, Result};

/// Pretty-printed JSON with object keys sorted (serialization goes through
/// `serde_json::Value`, whose objects are ordered maps). Ends with a newline.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = canonical_json(value)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, s).map_err(|e| io_err(path, e))
}

/// Reads and deserializes a manifest. Parse failures are format errors
/// naming the file, not bare serde errors: a manifest that does not
/// deserialize is a broken artifact.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        what: path.display().to_string(),
        detail: e.to_string(),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn sha256_hex_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Digest of any serializable value's canonical JSON; used for config and
/// stage fingerprints.
pub fn digest_of<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(canonical_json(value)?.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_json_sorts_keys() {
        #[derive(Serialize)]
        struct Z {
            zeta: u32,
            alpha: u32,
        }
        let s = canonical_json(&Z { zeta: 1, alpha: 2 }).unwrap();
        let za = s.find("zeta").unwrap();
        let al = s.find("alpha").unwrap();
        assert!(al < za);
        assert!(s.ends_with('\n'));
    }

    #[test]
    fn sha256_known_value() {
        // sha256("abc"), a published test vector.
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
