//! Binary container shared by dataset blocks and checkpoints.
//!
//! Layout: 8-byte magic, `u32` little-endian header length, a UTF-8 JSON
//! header of that length, then the payload as little-endian `f64`s. The
//! header records the payload length so truncation is detected on read.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Version of every on-disk artifact written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Dataset,
    Checkpoint,
}

impl Kind {
    pub fn magic(self) -> &'static [u8; 8] {
        match self {
            Kind::Dataset => b"HMDATA01",
            Kind::Checkpoint => b"HMCKPT01",
        }
    }
}

/// Fields every container header carries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope<H> {
    pub schema_version: u32,
    pub manifest_sha256: String,
    pub payload_len: usize,
    #[serde(flatten)]
    pub header: H,
}

pub fn encode<H: Serialize>(kind: Kind, manifest_sha256: &str, header: H, payload: &[f64]) -> Result<Vec<u8>> {
    let env = Envelope { schema_version: SCHEMA_VERSION, manifest_sha256: manifest_sha256.to_string(), payload_len: payload.len(), header };
    let json = serde_json::to_vec(&env).map_err(|e| Error::Usage(format!("header serialization: {e}")))?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Usage("header exceeds 4 GiB".into()))?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * payload.len());
    out.extend_from_slice(kind.magic());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode<H: DeserializeOwned>(kind: Kind, bytes: &[u8], path: &Path) -> Result<(Envelope<H>, Vec<f64>)> {
    let bad = |msg: String| Error::format(path, msg);
    if bytes.len() < 12 || &bytes[..8] != kind.magic() {
        return Err(bad(format!("not a {kind:?} file (bad magic)")));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + len).ok_or_else(|| bad("truncated header".into()))?;
    let env: Envelope<H> = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
    if env.schema_version != SCHEMA_VERSION {
        return Err(bad(format!("schema version {} (expected {SCHEMA_VERSION})", env.schema_version)));
    }
    let raw = &bytes[12 + len..];
    if raw.len() != 8 * env.payload_len {
        return Err(bad(format!("payload has {} bytes, header promises {} values", raw.len(), env.payload_len)));
    }
    let payload = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((env, payload))
}

pub fn write_file<H: Serialize>(path: &Path, kind: Kind, manifest_sha256: &str, header: H, payload: &[f64]) -> Result<String> {
    let bytes = encode(kind, manifest_sha256, header, payload)?;
    write_bytes(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn read_file<H: DeserializeOwned>(path: &Path, kind: Kind) -> Result<(Envelope<H>, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(kind, &bytes, path)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the compact JSON form. Struct fields serialize in declaration
/// order and maps are `BTreeMap`s, so the encoding is canonical.
pub fn canonical_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable"))
}

/// First line of every CSV artifact; readers skip it as a comment.
pub fn csv_preamble(manifest_sha256: &str) -> String {
    format!("# schema_version={SCHEMA_VERSION} manifest_sha256={manifest_sha256}\n")
}
