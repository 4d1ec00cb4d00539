//! Config hashes that tie every artifact to the configuration and upstream
//! artifacts that produced it.

use std::fmt;

use sha2::{Digest, Sha256};

/// The config hash and seed embedded in every artifact header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Stamp {
    hash: [u8; 32],
    pub seed: u64,
}

impl Stamp {
    pub fn from_bytes(hash: [u8; 32], seed: u64) -> Self {
        Self { hash, seed }
    }

    /// Hashes the labelled parts in order; each is length-prefixed so that
    /// boundaries cannot shift.
    pub fn of(label: &str, parts: &[&[u8]], seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(label.as_bytes());
        h.update(seed.to_le_bytes());
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p);
        }
        Self {
            hash: h.finalize().into(),
            seed,
        }
    }

    pub fn hash_bytes(&self) -> [u8; 32] {
        self.hash
    }

    pub fn hex(&self) -> String {
        self.hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn short(&self) -> String {
        self.hex()[..16].to_string()
    }

    pub fn parse(hex: &str, seed: u64) -> Option<Self> {
        if hex.len() != 64 {
            return None;
        }
        let mut hash = [0u8; 32];
        for (i, b) in hash.iter_mut().enumerate() {
            *b = u8::from_str_radix(hex.get(2 * i..2 * i + 2)?, 16).ok()?;
        }
        Some(Self { hash, seed })
    }
}

impl fmt::Display for Stamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (seed {})", self.short(), self.seed)
    }
}

/// Hex digest of arbitrary bytes, used for content-addressed directories.
pub fn content_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Text header lines carrying a stamp.
pub fn text_header(kind: &str, stamp: &Stamp) -> String {
    format!("# mgpat {kind} v1\n# config_hash {}\n# seed {}\n", stamp.hex(), stamp.seed)
}

/// Reads the stamp back from `# config_hash` / `# seed` lines.
pub fn parse_text_header(text: &str) -> Option<Stamp> {
    let mut hash = None;
    let mut seed = None;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let mut it = line[1..].split_whitespace();
        match (it.next(), it.next()) {
            (Some("config_hash"), Some(h)) => hash = Some(h.to_string()),
            (Some("seed"), Some(s)) => seed = s.parse().ok(),
            _ => {}
        }
    }
    Stamp::parse(&hash?, seed?)
}
