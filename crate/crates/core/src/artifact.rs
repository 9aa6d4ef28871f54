//! Trimmed-vocabulary artifacts: the kept token set as a pair of index
//! buffers plus provenance metadata.
//!
//! On disk an artifact is a directory with three files:
//!
//! * `d2t.bin`: `k` little-endian `u32`, draft index -> target token id
//! * `t2d.bin`: `V` little-endian `i32`, target token id -> draft index or -1
//! * `artifact.json`: sizes, provenance and SHA-256 digests of both buffers

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frequency::CoverageCurve;
use crate::latency::ArchitectureProfile;
use crate::TokenId;

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const METADATA_FILE: &str = "artifact.json";
pub const D2T_FILE: &str = "d2t.bin";
pub const T2D_FILE: &str = "t2d.bin";

/// How `k` was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Tpe,
    Exhaustive,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMetadata {
    pub coverage: f64,
    pub reduction: f64,
    pub alpha: Option<f64>,
    pub c_min: Option<f64>,
    pub corpus_fingerprint: String,
    pub provenance: Provenance,
    pub tool_version: String,
}

/// Provenance inputs supplied by the caller of [`build_artifact`].
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactProvenance {
    pub alpha: Option<f64>,
    pub c_min: Option<f64>,
    pub corpus_fingerprint: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabularyArtifact {
    d2t: Vec<TokenId>,
    t2d: Vec<i32>,
    metadata: ArtifactMetadata,
}

/// SHA-256 hex digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Builds the artifact for the top-`k` vocabulary of `curve`.
pub fn build_artifact(
    curve: &CoverageCurve,
    profile: &ArchitectureProfile,
    k: u64,
    forced: &BTreeSet<TokenId>,
    meta: ArtifactProvenance,
) -> Result<VocabularyArtifact> {
    if curve.vocab_size() != profile.vocab_size() {
        return Err(Error::VocabSizeMismatch {
            left: curve.vocab_size(),
            right: profile.vocab_size(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidConfig("artifact needs k >= 1".into()));
    }
    let kept = curve.top_k_tokens(k, forced)?;
    let coverage = if curve.total() == 0 {
        0.0
    } else {
        curve.mass_of(&kept) as f64 / curve.total() as f64
    };
    let metadata = ArtifactMetadata {
        coverage,
        reduction: profile.latency_reduction(k)?,
        alpha: meta.alpha,
        c_min: meta.c_min,
        corpus_fingerprint: meta.corpus_fingerprint,
        provenance: meta.provenance,
        tool_version: TOOL_VERSION.to_string(),
    };
    VocabularyArtifact::from_kept(kept, curve.vocab_size(), metadata)
}

impl VocabularyArtifact {
    /// Builds the index buffers from a kept token set. `kept` must be strictly
    /// ascending and within `[0, vocab_size)`.
    pub fn from_kept(
        kept: Vec<TokenId>,
        vocab_size: u64,
        metadata: ArtifactMetadata,
    ) -> Result<Self> {
        if vocab_size > i32::MAX as u64 {
            return Err(Error::InvalidConfig("vocab_size exceeds 2^31 - 1".into()));
        }
        let mut t2d = vec![-1i32; vocab_size as usize];
        for (i, &t) in kept.iter().enumerate() {
            let slot = t2d
                .get_mut(t as usize)
                .ok_or(Error::InvariantViolation("d2t range"))?;
            *slot = i as i32;
        }
        let a = Self {
            d2t: kept,
            t2d,
            metadata,
        };
        a.check_invariants()?;
        Ok(a)
    }

    pub fn k(&self) -> u64 {
        self.d2t.len() as u64
    }

    pub fn vocab_size(&self) -> u64 {
        self.t2d.len() as u64
    }

    pub fn d2t(&self) -> &[TokenId] {
        &self.d2t
    }

    pub fn t2d(&self) -> &[i32] {
        &self.t2d
    }

    pub fn metadata(&self) -> &ArtifactMetadata {
        &self.metadata
    }

    pub fn contains(&self, token: TokenId) -> bool {
        self.t2d.get(token as usize).is_some_and(|&d| d >= 0)
    }

    fn check_invariants(&self) -> Result<()> {
        if self.d2t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvariantViolation("d2t ascending"));
        }
        if self
            .d2t
            .last()
            .is_some_and(|&t| t as usize >= self.t2d.len())
        {
            return Err(Error::InvariantViolation("d2t range"));
        }
        for (i, &t) in self.d2t.iter().enumerate() {
            if self.t2d[t as usize] != i as i32 {
                return Err(Error::InvariantViolation("inverse"));
            }
        }
        let k = self.d2t.len() as i32;
        let mut present = 0usize;
        for &d in &self.t2d {
            if d >= 0 {
                if d >= k {
                    return Err(Error::InvariantViolation("inverse"));
                }
                present += 1;
            } else if d != -1 {
                return Err(Error::InvariantViolation("t2d sentinel"));
            }
        }
        if present != self.d2t.len() {
            return Err(Error::InvariantViolation("inverse"));
        }
        Ok(())
    }

    pub fn d2t_bytes(&self) -> Vec<u8> {
        self.d2t.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn t2d_bytes(&self) -> Vec<u8> {
        self.t2d.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    fn metadata_doc(&self, d2t: &[u8], t2d: &[u8]) -> ArtifactDoc {
        let m = &self.metadata;
        ArtifactDoc {
            format_version: FORMAT_VERSION,
            k: self.k(),
            vocab_size: self.vocab_size(),
            coverage: m.coverage,
            reduction: m.reduction,
            alpha: m.alpha,
            c_min: m.c_min,
            corpus_fingerprint: m.corpus_fingerprint.clone(),
            provenance: m.provenance,
            d2t_sha256: sha256_hex(d2t),
            t2d_sha256: sha256_hex(t2d),
            tool_version: m.tool_version.clone(),
        }
    }

    /// Writes the three artifact files into `dir` (created if needed). Each
    /// file goes through a temporary file and a rename. Refuses to replace an
    /// existing artifact unless `force` is set.
    pub fn write(&self, dir: impl AsRef<Path>, force: bool) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta_path = dir.join(METADATA_FILE);
        if !force && meta_path.exists() {
            return Err(Error::AlreadyExists(meta_path));
        }
        let d2t = self.d2t_bytes();
        let t2d = self.t2d_bytes();
        let doc = self.metadata_doc(&d2t, &t2d);
        let json = serde_json::to_string_pretty(&doc).expect("metadata serializes") + "\n";
        write_atomic(dir, D2T_FILE, &d2t)?;
        write_atomic(dir, T2D_FILE, &t2d)?;
        write_atomic(dir, METADATA_FILE, json.as_bytes())
    }

    /// Reads and fully verifies an artifact directory.
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read(&p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingFile(p.clone()),
                _ => Error::io(&p, e),
            })
        };
        let meta = read(METADATA_FILE)?;
        let d2t = read(D2T_FILE)?;
        let t2d = read(T2D_FILE)?;
        let doc: ArtifactDoc = serde_json::from_slice(&meta)
            .map_err(|e| Error::Format(format!("{METADATA_FILE}: {e}")))?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported artifact format version {}",
                doc.format_version
            )));
        }
        for (file, bytes, expected) in [
            (D2T_FILE, &d2t, &doc.d2t_sha256),
            (T2D_FILE, &t2d, &doc.t2d_sha256),
        ] {
            let actual = sha256_hex(bytes);
            if &actual != expected {
                return Err(Error::HashMismatch {
                    file,
                    expected: expected.clone(),
                    actual,
                });
            }
        }
        if d2t.len() as u64 != 4 * doc.k {
            return Err(Error::InvariantViolation("d2t length"));
        }
        if t2d.len() as u64 != 4 * doc.vocab_size {
            return Err(Error::InvariantViolation("t2d length"));
        }
        let a = Self {
            d2t: d2t
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
            t2d: t2d
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
            metadata: ArtifactMetadata {
                coverage: doc.coverage,
                reduction: doc.reduction,
                alpha: doc.alpha,
                c_min: doc.c_min,
                corpus_fingerprint: doc.corpus_fingerprint,
                provenance: doc.provenance,
                tool_version: doc.tool_version,
            },
        };
        a.check_invariants()?;
        Ok(a)
    }
}

pub fn write_artifact(a: &VocabularyArtifact, dir: impl AsRef<Path>, force: bool) -> Result<()> {
    a.write(dir, force)
}

pub fn read_artifact(dir: impl AsRef<Path>) -> Result<VocabularyArtifact> {
    VocabularyArtifact::read(dir)
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    write_file_atomic(dir.join(name), bytes)
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`.
pub fn write_file_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ArtifactDoc {
    format_version: u32,
    k: u64,
    vocab_size: u64,
    coverage: f64,
    reduction: f64,
    alpha: Option<f64>,
    c_min: Option<f64>,
    corpus_fingerprint: String,
    provenance: Provenance,
    d2t_sha256: String,
    t2d_sha256: String,
    tool_version: String,
}
