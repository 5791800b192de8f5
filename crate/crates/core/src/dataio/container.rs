//! Binary model container.
//!
//! Layout: the 4-byte magic `LMCF`, a little-endian `u32` header length, a
//! UTF-8 JSON header, then the sections' little-endian `f64` payloads back to
//! back in header order. Each section's CRC32 is recorded in the header.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Result};

pub const CONTAINER_MAGIC: &[u8; 4] = b"LMCF";
/// Major format version this build reads and writes.
pub const CONTAINER_VERSION: u32 = 1;
const MINOR_VERSION: u32 = 0;

/// A named array of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Section {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn vector(name: impl Into<String>, data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(name, vec![n], data)
    }

    /// Rows of a 2-D section.
    pub fn rows(&self) -> Result<Vec<Vec<f64>>> {
        match self.shape.as_slice() {
            [r, c] => Ok(if *c == 0 {
                vec![Vec::new(); *r]
            } else {
                self.data.chunks_exact(*c).map(<[f64]>::to_vec).collect()
            }),
            _ => Err(DataError::MalformedContainer(format!(
                "section `{}` has shape {:?}, expected 2-D",
                self.name, self.shape
            ))),
        }
    }

    fn bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Everything needed to rebuild a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub architecture: String,
    /// Hyperparameters, fingerprints, standardisation settings and other
    /// small values.
    pub metadata: serde_json::Value,
    pub sections: Vec<Section>,
}

impl ModelBundle {
    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| DataError::MissingSection(name.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct SectionHeader {
    name: String,
    shape: Vec<usize>,
    crc32: u32,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: String,
    architecture: String,
    metadata: serde_json::Value,
    sections: Vec<SectionHeader>,
}

pub fn encode_bundle(bundle: &ModelBundle) -> Vec<u8> {
    encode_with_version(bundle, &format!("{CONTAINER_VERSION}.{MINOR_VERSION}"))
}

#[doc(hidden)]
pub fn encode_with_version(bundle: &ModelBundle, version: &str) -> Vec<u8> {
    let payloads: Vec<Vec<u8>> = bundle.sections.iter().map(Section::bytes).collect();
    let header = Header {
        format_version: version.to_string(),
        architecture: bundle.architecture.clone(),
        metadata: bundle.metadata.clone(),
        sections: bundle
            .sections
            .iter()
            .zip(&payloads)
            .map(|(s, p)| SectionHeader {
                name: s.name.clone(),
                shape: s.shape.clone(),
                crc32: crc32fast::hash(p),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(8 + header.len() + payloads.iter().map(Vec::len).sum::<usize>());
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for p in payloads {
        out.extend_from_slice(&p);
    }
    out
}

pub fn decode_bundle(bytes: &[u8]) -> Result<ModelBundle> {
    let malformed = |m: &str| DataError::MalformedContainer(m.to_string());
    if bytes.len() < 8 || &bytes[..4] != CONTAINER_MAGIC {
        return Err(malformed("missing LMCF magic"));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let header_end = 8usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| malformed("header length exceeds file size"))?;
    let header: Header = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| DataError::MalformedContainer(format!("header: {e}")))?;
    let major = header
        .format_version
        .split('.')
        .next()
        .and_then(|m| m.parse::<u32>().ok());
    if major != Some(CONTAINER_VERSION) {
        return Err(DataError::VersionMismatch {
            found: header.format_version,
            supported: CONTAINER_VERSION,
        });
    }
    let mut pos = header_end;
    let mut sections = Vec::with_capacity(header.sections.len());
    for sh in header.sections {
        let n = sh
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| malformed("section shape overflows"))?;
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| DataError::MalformedContainer(format!("section `{}` truncated", sh.name)))?;
        let payload = &bytes[pos..end];
        if crc32fast::hash(payload) != sh.crc32 {
            return Err(DataError::ChecksumMismatch { section: sh.name });
        }
        let data = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        sections.push(Section {
            name: sh.name,
            shape: sh.shape,
            data,
        });
        pos = end;
    }
    if pos != bytes.len() {
        return Err(malformed("trailing bytes after last section"));
    }
    Ok(ModelBundle {
        architecture: header.architecture,
        metadata: header.metadata,
        sections,
    })
}

pub fn save_bundle(path: &Path, bundle: &ModelBundle) -> Result<()> {
    std::fs::write(path, encode_bundle(bundle)).map_err(|e| DataError::io(path, e))
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_bundle(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> ModelBundle {
        ModelBundle {
            architecture: "test".into(),
            metadata: serde_json::json!({"c": 0.5, "note": "x"}),
            sections: vec![
                Section::new("w", vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]),
                Section::vector("b", vec![0.1]),
                Section::vector("empty", vec![]),
            ],
        }
    }

    #[test]
    fn round_trip_bitwise() {
        let b = bundle();
        let back = decode_bundle(&encode_bundle(&b)).unwrap();
        assert_eq!(back.architecture, b.architecture);
        assert_eq!(back.metadata, b.metadata);
        for (x, y) in back.sections.iter().zip(&b.sections) {
            assert_eq!(x.shape, y.shape);
            let xb: Vec<u64> = x.data.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn flipped_payload_byte() {
        let mut bytes = encode_bundle(&bundle());
        let last = bytes.len() - 3;
        bytes[last] ^= 0x10;
        assert!(matches!(decode_bundle(&bytes), Err(DataError::ChecksumMismatch { .. })));
    }

    #[test]
    fn future_major_version() {
        let bytes = encode_with_version(&bundle(), "2.0");
        assert!(matches!(decode_bundle(&bytes), Err(DataError::VersionMismatch { .. })));
        assert!(decode_bundle(&encode_with_version(&bundle(), "1.7")).is_ok());
    }

    #[test]
    fn truncation_and_garbage() {
        let bytes = encode_bundle(&bundle());
        for cut in [0, 3, 7, 9, bytes.len() - 1] {
            assert!(decode_bundle(&bytes[..cut]).is_err());
        }
        assert!(decode_bundle(b"LMCF\xff\xff\xff\xff").is_err());
    }

    #[test]
    fn missing_section() {
        assert!(matches!(bundle().section("nope"), Err(DataError::MissingSection(_))));
    }
}
