//! On-disk corpus index cache.
//!
//! Layout: 8-byte magic, little-endian u32 schema version, 64-byte hex
//! content hash, 32-byte SHA-256 of the payload, then the bincode payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{build_corpus_index, content_hash, CorpusIndex, IndexParams, MatchError};
use crate::volume_io::Volume;

pub const CACHE_MAGIC: &[u8; 8] = b"FSLCIDX\0";
pub const CACHE_SCHEMA_VERSION: u32 = 1;

const HASH_LEN: usize = 64;
const HEADER_LEN: usize = 8 + 4 + HASH_LEN + 32;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a corpus cache file")]
    BadMagic,
    #[error("cache schema {found}, expected {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("cache is stale: content hash differs")]
    Stale,
    #[error("cache payload is corrupt")]
    Corrupt,
    #[error("cache encoding: {0}")]
    Encode(String),
    #[error(transparent)]
    Build(#[from] MatchError),
}

/// How `build_or_load` obtained its index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheStatus {
    Hit,
    /// Built fresh; the string says why the cache was not used.
    Rebuilt(String),
}

pub fn save_cache(index: &CorpusIndex, path: &Path) -> Result<(), CacheError> {
    if index.content_hash.len() != HASH_LEN {
        return Err(CacheError::Encode("content hash must be 64 hex digits".into()));
    }
    let payload = bincode::serialize(index).map_err(|e| CacheError::Encode(e.to_string()))?;
    let digest = Sha256::digest(&payload);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    // Write-then-rename so a crash never leaves a half-written cache.
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(CACHE_MAGIC)?;
        f.write_all(&CACHE_SCHEMA_VERSION.to_le_bytes())?;
        f.write_all(index.content_hash.as_bytes())?;
        f.write_all(&digest)?;
        f.write_all(&payload)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Load a cache, checking magic, schema, checksum and (when given) the
/// expected content hash.
pub fn load_cache(path: &Path, expected_hash: Option<&str>) -> Result<CorpusIndex, CacheError> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN || &bytes[..8] != CACHE_MAGIC {
        return Err(CacheError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CACHE_SCHEMA_VERSION {
        return Err(CacheError::SchemaMismatch {
            found: version,
            expected: CACHE_SCHEMA_VERSION,
        });
    }
    let hash = &bytes[12..12 + HASH_LEN];
    if let Some(expected) = expected_hash {
        if hash != expected.as_bytes() {
            return Err(CacheError::Stale);
        }
    }
    let digest = &bytes[12 + HASH_LEN..HEADER_LEN];
    let payload = &bytes[HEADER_LEN..];
    if Sha256::digest(payload).as_slice() != digest {
        return Err(CacheError::Corrupt);
    }
    let index: CorpusIndex = bincode::deserialize(payload).map_err(|_| CacheError::Corrupt)?;
    if index.content_hash.as_bytes() != hash {
        return Err(CacheError::Corrupt);
    }
    Ok(index)
}

/// Reuse the cache at `path` when it matches the volumes and parameters,
/// otherwise rebuild and overwrite it.
pub fn build_or_load(volumes: &[Volume], params: &IndexParams, path: &Path) -> Result<(CorpusIndex, CacheStatus), CacheError> {
    let hash = content_hash(volumes, params);
    let reason = if path.exists() {
        match load_cache(path, Some(&hash)) {
            Ok(index) => return Ok((index, CacheStatus::Hit)),
            Err(e) => e.to_string(),
        }
    } else {
        "no cache file".to_string()
    };
    let index = build_corpus_index(volumes, params)?;
    save_cache(&index, path)?;
    Ok((index, CacheStatus::Rebuilt(reason)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate, Morphology, PhantomSpec};

    fn fixture() -> (Vec<Volume>, IndexParams) {
        let vols = vec![generate(&PhantomSpec::new("C1", Morphology::Layered, 9).with_dims([32, 32, 12]))];
        let mut p = IndexParams::default();
        p.preprocess.target_size = 32;
        (vols, p)
    }

    #[test]
    fn round_trip_then_hit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.bin");
        let (vols, p) = fixture();
        let (built, status) = build_or_load(&vols, &p, &path).unwrap();
        assert!(matches!(status, CacheStatus::Rebuilt(_)));
        assert!(!built.is_empty());
        let (loaded, status) = build_or_load(&vols, &p, &path).unwrap();
        assert_eq!(status, CacheStatus::Hit);
        assert_eq!(loaded, built);
    }

    #[test]
    fn param_change_invalidates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.bin");
        let (vols, mut p) = fixture();
        build_or_load(&vols, &p, &path).unwrap();
        p.match_margin = 0.2;
        let (_, status) = build_or_load(&vols, &p, &path).unwrap();
        assert!(matches!(status, CacheStatus::Rebuilt(ref r) if r.contains("stale")));
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.bin");
        let (vols, p) = fixture();
        let (built, _) = build_or_load(&vols, &p, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_cache(&path, None), Err(CacheError::Corrupt)));
        let (rebuilt, status) = build_or_load(&vols, &p, &path).unwrap();
        assert!(matches!(status, CacheStatus::Rebuilt(_)));
        assert_eq!(rebuilt, built);

        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_cache(&path, None), Err(CacheError::BadMagic)));
        bytes[0] = CACHE_MAGIC[0];
        bytes[8] = 99;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_cache(&path, None), Err(CacheError::SchemaMismatch { found: 99, .. })));
    }
}
