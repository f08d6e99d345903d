//! Parameter blobs with JSON sidecar manifests.
//!
//! A checkpoint at `path` is the raw blob (concatenated parameter sets) plus
//! `path.json` holding the manifest, which records the blob's sha256.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::ParamSet;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a value's canonical JSON encoding.
pub fn config_digest<T: Serialize>(cfg: &T) -> String {
    sha256_hex(&serde_json::to_vec(cfg).expect("config serialises"))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Fails when `path` exists and `overwrite` is false.
pub fn check_writable(path: &Path, overwrite: bool) -> Result<()> {
    if path.exists() && !overwrite {
        return Err(Error::Exists(path.to_path_buf()));
    }
    Ok(())
}

pub fn encode_blob(sets: &[&ParamSet]) -> Vec<u8> {
    let mut buf = Vec::new();
    for s in sets {
        s.write_to(&mut buf).expect("writing to a Vec cannot fail");
    }
    buf
}

pub fn decode_blob(bytes: &[u8], count: usize) -> Result<Vec<ParamSet>> {
    let mut r = bytes;
    let sets = (0..count)
        .map(|_| ParamSet::read_from(&mut r))
        .collect::<Result<Vec<_>>>()?;
    if !r.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes in blob", r.len())));
    }
    Ok(sets)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Writes the blob and returns its digest.
pub fn save_blob(path: &Path, sets: &[&ParamSet]) -> Result<String> {
    let bytes = encode_blob(sets);
    write_file(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

/// Reads a blob and checks it against the digest recorded in its manifest.
pub fn load_blob(path: &Path, count: usize, expected_digest: &str) -> Result<Vec<ParamSet>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let got = sha256_hex(&bytes);
    if got != expected_digest {
        return Err(Error::Checkpoint(format!(
            "{}: blob digest {got} does not match manifest {expected_digest}",
            path.display()
        )));
    }
    decode_blob(&bytes, count)
}
