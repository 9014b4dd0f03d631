use std::collections::BTreeMap;
use std::fmt::Write;

use sha2::{Digest, Sha256};

/// Identity hash of one immutable service-unit generation.
///
/// The encoding is the JSON array `[version, {sorted overrides}]`, so the
/// result does not depend on map insertion order. Returns 16 hex chars.
pub fn hash_config(overrides: &BTreeMap<String, String>, version: &str) -> String {
    let canonical =
        serde_json::to_vec(&(version, overrides)).expect("string map always serializes");
    let digest = Sha256::digest(&canonical);
    digest[..8].iter().fold(String::with_capacity(16), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
