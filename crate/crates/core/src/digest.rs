//! SHA-256 helpers used for content hashes, transcript keys and artifact ids.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hashes a sequence of parts with length prefixes so that part boundaries
/// are unambiguous.
pub fn digest_parts(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

/// First 16 hex characters of [`digest_parts`].
pub fn short_digest(parts: &[&[u8]]) -> String {
    let mut d = digest_parts(parts);
    d.truncate(16);
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn part_boundaries_matter() {
        assert_ne!(digest_parts(&[b"ab", b"c"]), digest_parts(&[b"a", b"bc"]));
        assert_eq!(short_digest(&[b"x"]).len(), 16);
    }
}
