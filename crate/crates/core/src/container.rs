//! Reader and writer for the `ACTV0001` tensor container.
//!
//! Layout: 8-byte magic, `u32` little-endian header length, UTF-8 JSON
//! header, then row-major little-endian `f32` payload (layer-major for
//! activations, one row per vocabulary id for embeddings).

use std::fs;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"ACTV0001";

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("{path}: bad magic")]
    BadMagic { path: PathBuf },
    #[error("{path}: truncated file")]
    Truncated { path: PathBuf },
    #[error("{path}: invalid header: {reason}")]
    InvalidHeader { path: PathBuf, reason: String },
    #[error("{path}: payload is {actual} bytes, header implies {expected}")]
    PayloadMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContainerKind {
    Activations,
    Embeddings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub kind: ContainerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    pub layer_count: usize,
    pub hidden_dim: usize,
    pub dtype: String,
    /// Producer-specific fields such as the layer indexing convention.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl ContainerHeader {
    pub fn activations(prompt_key: impl Into<String>, layer_count: usize, hidden_dim: usize) -> Self {
        Self {
            kind: ContainerKind::Activations,
            prompt_key: Some(prompt_key.into()),
            vocab_size: None,
            layer_count,
            hidden_dim,
            dtype: "f32".into(),
            extra: Default::default(),
        }
    }

    pub fn embeddings(vocab_size: usize, hidden_dim: usize) -> Self {
        Self {
            kind: ContainerKind::Embeddings,
            prompt_key: None,
            vocab_size: Some(vocab_size),
            layer_count: 1,
            hidden_dim,
            dtype: "f32".into(),
            extra: Default::default(),
        }
    }

    /// Number of rows in the payload.
    pub fn rows(&self) -> Option<usize> {
        match self.kind {
            ContainerKind::Activations => Some(self.layer_count),
            ContainerKind::Embeddings => self.vocab_size,
        }
    }

    fn expected_len(&self) -> Option<usize> {
        self.rows()?.checked_mul(self.hidden_dim)
    }
}

fn parse_header(raw: &[u8], path: &Path) -> Result<ContainerHeader, ContainerError> {
    let invalid = |reason: String| ContainerError::InvalidHeader {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::str::from_utf8(raw).map_err(|e| invalid(e.to_string()))?;
    let header: ContainerHeader = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
    if header.dtype != "f32" {
        return Err(invalid(format!("unsupported dtype `{}`", header.dtype)));
    }
    Ok(header)
}

fn payload_bytes(header: &ContainerHeader, path: &Path) -> Result<usize, ContainerError> {
    header
        .expected_len()
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| ContainerError::InvalidHeader {
            path: path.to_path_buf(),
            reason: "missing or overflowing dimensions".into(),
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorContainer {
    pub header: ContainerHeader,
    /// Header bytes exactly as read, so a re-write is byte-identical.
    raw_header: Option<String>,
    pub data: Vec<f32>,
}

impl TensorContainer {
    pub fn new(header: ContainerHeader, data: Vec<f32>) -> Self {
        Self {
            header,
            raw_header: None,
            data,
        }
    }

    pub fn row(&self, index: usize) -> &[f32] {
        let d = self.header.hidden_dim;
        &self.data[index * d..(index + 1) * d]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = match &self.raw_header {
            Some(raw) => raw.clone(),
            None => serde_json::to_string(&self.header).expect("header serializes"),
        };
        let mut out = Vec::with_capacity(12 + header.len() + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, ContainerError> {
        let path_buf = || path.to_path_buf();
        if bytes.len() < 12 {
            return Err(ContainerError::Truncated { path: path_buf() });
        }
        if &bytes[..8] != MAGIC {
            return Err(ContainerError::BadMagic { path: path_buf() });
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload_start = 12usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| ContainerError::Truncated { path: path_buf() })?;
        let raw = std::str::from_utf8(&bytes[12..payload_start]).map_err(|e| {
            ContainerError::InvalidHeader {
                path: path_buf(),
                reason: e.to_string(),
            }
        })?;
        let header = parse_header(raw.as_bytes(), path)?;
        let expected = payload_bytes(&header, path)?;
        let payload = &bytes[payload_start..];
        if payload.len() != expected {
            return Err(ContainerError::PayloadMismatch {
                path: path_buf(),
                expected,
                actual: payload.len(),
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            header,
            raw_header: Some(raw.to_string()),
            data,
        })
    }

    pub fn read(path: &Path) -> Result<Self, ContainerError> {
        let bytes = fs::read(path).map_err(|source| ContainerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, path)
    }

    /// Reads only the header and checks the file length against it.
    /// Returns the header and the payload offset.
    pub fn read_header(path: &Path) -> Result<(ContainerHeader, u64), ContainerError> {
        let io_err = |source| ContainerError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = fs::File::open(path).map_err(io_err)?;
        let file_len = f.metadata().map_err(io_err)?.len();
        let mut prefix = [0u8; 12];
        f.read_exact(&mut prefix).map_err(|_| ContainerError::Truncated { path: path.to_path_buf() })?;
        if &prefix[..8] != MAGIC {
            return Err(ContainerError::BadMagic { path: path.to_path_buf() });
        }
        let header_len = u32::from_le_bytes(prefix[8..12].try_into().unwrap()) as u64;
        if 12 + header_len > file_len {
            return Err(ContainerError::Truncated { path: path.to_path_buf() });
        }
        let mut raw = vec![0u8; header_len as usize];
        f.read_exact(&mut raw).map_err(io_err)?;
        let header = parse_header(&raw, path)?;
        let expected = payload_bytes(&header, path)?;
        let actual = file_len - 12 - header_len;
        if actual != expected as u64 {
            return Err(ContainerError::PayloadMismatch {
                path: path.to_path_buf(),
                expected,
                actual: actual as usize,
            });
        }
        Ok((header, 12 + header_len))
    }

    /// Reads one payload row (a layer, or a vocabulary id) without loading
    /// the rest of the file.
    pub fn read_row(path: &Path, row: usize) -> Result<(ContainerHeader, Vec<f32>), ContainerError> {
        let (header, offset) = Self::read_header(path)?;
        let rows = header.rows().unwrap_or(0);
        if row >= rows {
            return Err(ContainerError::InvalidHeader {
                path: path.to_path_buf(),
                reason: format!("row {row} out of range ({rows} rows)"),
            });
        }
        let io_err = |source| ContainerError::Io {
            path: path.to_path_buf(),
            source,
        };
        let d = header.hidden_dim;
        let mut f = fs::File::open(path).map_err(io_err)?;
        f.seek(SeekFrom::Start(offset + (row * d * 4) as u64)).map_err(io_err)?;
        let mut buf = vec![0u8; d * 4];
        f.read_exact(&mut buf).map_err(io_err)?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((header, data))
    }

    /// Writes via a temporary file in the same directory and renames it
    /// into place.
    pub fn write(&self, path: &Path) -> Result<(), ContainerError> {
        let io_err = |source| ContainerError::Io {
            path: path.to_path_buf(),
            source,
        };
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
        tmp.write_all(&self.to_bytes()).map_err(io_err)?;
        tmp.persist(path).map_err(|e| io_err(e.error))?;
        Ok(())
    }
}
