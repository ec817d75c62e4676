//! Ensemble archives.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "GIBBSARC"
//! version      u32
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON (ArchiveHeader)
//! payload_len  u64
//! payload      count records, each lattice.len() complex coefficients
//!              stored as (re, im) f64 pairs in lattice index order
//! checksum     32 bytes, SHA-256 over header and payload
//! ```
//!
//! Lattice index order: in 1D index k + n, in 2D (k₁ + n)(2n + 1) + (k₂ + n).
//! Absent zero modes are stored as zeros.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use gibbslab::sampler::{GaussianReference, PhaseDomain};
use gibbslab::{FourierField, Lattice, ModelSpec};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 8] = b"GIBBSARC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("not an ensemble archive")]
    BadMagic,
    #[error("archive format version {found}, this build reads {FORMAT_VERSION}")]
    Version { found: u32 },
    #[error("checksum mismatch (file truncated or corrupted)")]
    Checksum,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("header declares {declared} samples but payload holds {found}")]
    Count { declared: usize, found: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub format_version: u32,
    pub dim: usize,
    pub n: usize,
    pub real: bool,
    pub zero_mode: bool,
    pub model: Option<ModelSpec>,
    pub domain: Option<PhaseDomain>,
    pub reference: Option<GaussianReference>,
    pub seed: u64,
    pub count: usize,
    /// Free-form provenance: tool version, config name and so on.
    pub metadata: BTreeMap<String, String>,
}

impl ArchiveHeader {
    pub fn new(lattice: Lattice, real: bool, zero_mode: bool, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            dim: lattice.dim(),
            n: lattice.n(),
            real,
            zero_mode,
            model: None,
            domain: None,
            reference: None,
            seed,
            count: 0,
            metadata: BTreeMap::new(),
        }
    }

    pub fn lattice(&self) -> Result<Lattice, ArchiveError> {
        Lattice::new(self.dim, self.n, 2).map_err(|e| ArchiveError::Header(e.to_string()))
    }
}

/// Serialize header and samples. The header's count is set from `samples`.
pub fn encode(header: &ArchiveHeader, samples: &[FourierField]) -> Result<Vec<u8>, ArchiveError> {
    let lat = header.lattice()?;
    let mut header = header.clone();
    header.count = samples.len();
    header.format_version = FORMAT_VERSION;
    for (i, s) in samples.iter().enumerate() {
        if *s.lattice() != lat {
            return Err(ArchiveError::Header(format!("sample {i} lives on a different lattice")));
        }
    }
    let head = serde_json::to_vec(&header).map_err(|e| ArchiveError::Header(e.to_string()))?;
    let mut payload = Vec::with_capacity(samples.len() * lat.len() * 16);
    for s in samples {
        for c in s.coeffs() {
            payload.extend_from_slice(&c.re.to_le_bytes());
            payload.extend_from_slice(&c.im.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(head.len() + payload.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(head.len() as u64).to_le_bytes());
    out.extend_from_slice(&head);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    let digest = Sha256::new().chain_update(&head).chain_update(&payload).finalize();
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    // any short read means the file was cut off, which the checksum would also catch
    fn take(&mut self, len: usize) -> Result<&'a [u8], ArchiveError> {
        let end = self.pos.checked_add(len).ok_or(ArchiveError::Checksum)?;
        let s = self.buf.get(self.pos..end).ok_or(ArchiveError::Checksum)?;
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, ArchiveError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parse and verify an archive. Nothing is returned unless the checksum matches.
pub fn decode(bytes: &[u8]) -> Result<(ArchiveHeader, Vec<FourierField>), ArchiveError> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(ArchiveError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(ArchiveError::Version { found: version });
    }
    let mut cur = Cursor { buf: bytes, pos: 12 };
    let head_len = cur.u64()? as usize;
    let head = cur.take(head_len)?;
    let payload_len = cur.u64()? as usize;
    let payload = cur.take(payload_len)?;
    let digest = cur.take(32)?;
    if cur.pos != bytes.len() {
        return Err(ArchiveError::Checksum);
    }
    let expect = Sha256::new().chain_update(head).chain_update(payload).finalize();
    if expect.as_slice() != digest {
        return Err(ArchiveError::Checksum);
    }
    let header: ArchiveHeader = serde_json::from_slice(head).map_err(|e| ArchiveError::Header(e.to_string()))?;
    if header.format_version != version {
        return Err(ArchiveError::Version { found: header.format_version });
    }
    let lat = header.lattice()?;
    let record = lat.len() * 16;
    if payload.len() % record != 0 {
        return Err(ArchiveError::Count { declared: header.count, found: payload.len() / record });
    }
    let found = payload.len() / record;
    if found != header.count {
        return Err(ArchiveError::Count { declared: header.count, found });
    }
    let f64_at = |off: usize| f64::from_le_bytes(payload[off..off + 8].try_into().unwrap());
    let mut samples = Vec::with_capacity(found);
    for r in 0..found {
        let base = r * record;
        let coeffs: Vec<C64> =
            (0..lat.len()).map(|i| C64::new(f64_at(base + 16 * i), f64_at(base + 16 * i + 8))).collect();
        let f = FourierField::from_coeffs(lat, coeffs, header.real, header.zero_mode)
            .map_err(|e| ArchiveError::Header(format!("record {r}: {e}")))?;
        samples.push(f);
    }
    Ok((header, samples))
}

pub fn write(path: &Path, header: &ArchiveHeader, samples: &[FourierField]) -> Result<(), ArchiveError> {
    let bytes = encode(header, samples)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(ArchiveHeader, Vec<FourierField>), ArchiveError> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(lat: Lattice, seed: u64) -> FourierField {
        let r = GaussianReference::loop_measure(lat, 1.0);
        gibbslab::sampler::sample_free_field(&r, seed, 0)
    }

    #[test]
    fn header_count_follows_samples() {
        let lat = Lattice::line(3);
        let h = ArchiveHeader::new(lat, false, true, 5);
        let bytes = encode(&h, &[field(lat, 1), field(lat, 2)]).unwrap();
        let (back, s) = decode(&bytes).unwrap();
        assert_eq!(back.count, 2);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn flipped_payload_bit_is_caught() {
        let lat = Lattice::line(3);
        let h = ArchiveHeader::new(lat, false, true, 5);
        let mut bytes = encode(&h, &[field(lat, 1)]).unwrap();
        let k = bytes.len() - 40;
        bytes[k] ^= 1;
        assert!(matches!(decode(&bytes), Err(ArchiveError::Checksum)));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let lat = Lattice::line(2);
        let mut bytes = encode(&ArchiveHeader::new(lat, false, true, 0), &[]).unwrap();
        bytes[8] = 9;
        assert!(matches!(decode(&bytes), Err(ArchiveError::Version { found: 9 })));
        assert!(matches!(decode(b"nonsense"), Err(ArchiveError::BadMagic)));
    }
}
