//! Chunked uploads: the client splits a file into fixed-size chunks, sends
//! them in any order (possibly in parallel), and the server merges them and
//! checks the whole-file MD5 before handing the file to the vault.

use std::collections::HashMap;
use std::sync::Arc;

use md5::{Digest, Md5};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::vault::{Vault, VaultError};

/// 4 MiB.
pub const DEFAULT_CHUNK_SIZE: u64 = 4 * 1024 * 1024;

/// Lowercase hex MD5 (RFC 1321).
pub fn md5_hex(bytes: &[u8]) -> String {
    hex::encode(Md5::digest(bytes))
}

pub fn is_md5_hex(s: &str) -> bool {
    s.len() == 32 && s.bytes().all(|b| b.is_ascii_hexdigit())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransferError {
    #[error("empty files are not accepted")]
    EmptyFile,
    #[error("chunk size must be at least one byte")]
    ZeroChunkSize,
    #[error("malformed digest `{0}`: expected 32 hex characters")]
    MalformedDigest(String),
    #[error("manifest declares {declared} chunks, plan has {planned}")]
    ChunkCountMismatch { declared: u64, planned: u64 },
    #[error("unknown upload session `{0}`")]
    UnknownSession(String),
    #[error("chunk index {index} out of range (chunk count {count})")]
    IndexOutOfRange { index: u64, count: u64 },
    #[error("chunk {index} has {found} bytes, expected {expected}")]
    WrongLength { index: u64, expected: u64, found: u64 },
    #[error("chunk {0} was already received with different content")]
    ConflictingChunk(u64),
    #[error("chunk {0} does not match its declared digest")]
    ChunkDigestMismatch(u64),
    #[error("session is {0:?}, not open")]
    NotOpen(SessionState),
    #[error("upload incomplete: {} chunk(s) missing", missing.len())]
    Incomplete { missing: Vec<u64> },
    #[error("merged file digest {actual} does not match manifest digest {expected}")]
    DigestMismatch { expected: String, actual: String },
    #[error(transparent)]
    Vault(#[from] VaultError),
}

impl TransferError {
    /// Machine-readable code for wire responses.
    pub fn code(&self) -> &'static str {
        match self {
            TransferError::EmptyFile => "empty_file",
            TransferError::ZeroChunkSize => "bad_chunk_size",
            TransferError::MalformedDigest(_) => "malformed_digest",
            TransferError::ChunkCountMismatch { .. } => "chunk_count_mismatch",
            TransferError::UnknownSession(_) => "unknown_session",
            TransferError::IndexOutOfRange { .. } => "index_out_of_range",
            TransferError::WrongLength { .. } => "wrong_length",
            TransferError::ConflictingChunk(_) => "conflicting_chunk",
            TransferError::ChunkDigestMismatch(_) => "chunk_digest_mismatch",
            TransferError::NotOpen(_) => "session_not_open",
            TransferError::Incomplete { .. } => "incomplete",
            TransferError::DigestMismatch { .. } => "digest_mismatch",
            TransferError::Vault(_) => "storage_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSpan {
    pub index: u64,
    pub offset: u64,
    pub length: u64,
}

/// Contiguous spans covering `[0, file_size)`; only the last may be short.
pub fn plan_chunks(file_size: u64, chunk_size: u64) -> Result<Vec<ChunkSpan>, TransferError> {
    if file_size == 0 {
        return Err(TransferError::EmptyFile);
    }
    if chunk_size == 0 {
        return Err(TransferError::ZeroChunkSize);
    }
    let count = file_size.div_ceil(chunk_size);
    Ok((0..count)
        .map(|index| {
            let offset = index * chunk_size;
            ChunkSpan {
                index,
                offset,
                length: chunk_size.min(file_size - offset),
            }
        })
        .collect())
}

fn default_chunk_size() -> u64 {
    DEFAULT_CHUNK_SIZE
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadManifest {
    pub file_size: u64,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: u64,
    /// Optional on the wire; checked against the plan when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_count: Option<u64>,
    pub file_md5: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_md5: Option<Vec<String>>,
}

impl UploadManifest {
    pub fn new(file_size: u64, chunk_size: u64, file_md5: impl Into<String>) -> Self {
        Self {
            file_size,
            chunk_size,
            chunk_count: Some(file_size.div_ceil(chunk_size.max(1))),
            file_md5: file_md5.into(),
            chunk_md5: None,
        }
    }

    /// Manifest for a file already in memory.
    pub fn for_bytes(bytes: &[u8], chunk_size: u64) -> Self {
        Self::new(bytes.len() as u64, chunk_size, md5_hex(bytes))
    }

    pub fn chunk_count(&self) -> u64 {
        self.file_size.div_ceil(self.chunk_size.max(1))
    }

    pub fn validate(&self) -> Result<Vec<ChunkSpan>, TransferError> {
        let plan = plan_chunks(self.file_size, self.chunk_size)?;
        if !is_md5_hex(&self.file_md5) {
            return Err(TransferError::MalformedDigest(self.file_md5.clone()));
        }
        if let Some(declared) = self.chunk_count {
            if declared != plan.len() as u64 {
                return Err(TransferError::ChunkCountMismatch {
                    declared,
                    planned: plan.len() as u64,
                });
            }
        }
        if let Some(digests) = &self.chunk_md5 {
            if digests.len() != plan.len() {
                return Err(TransferError::ChunkCountMismatch {
                    declared: digests.len() as u64,
                    planned: plan.len() as u64,
                });
            }
            if let Some(bad) = digests.iter().find(|d| !is_md5_hex(d)) {
                return Err(TransferError::MalformedDigest(bad.clone()));
            }
        }
        Ok(plan)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Open,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChunkAck {
    Stored,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredFile {
    pub content_id: String,
    pub size: u64,
}

/// Snapshot of a session for status responses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session_id: String,
    pub state: SessionState,
    pub chunk_count: u64,
    pub received: Vec<u64>,
    pub owner: String,
}

struct SessionInner {
    state: SessionState,
    chunks: Vec<Option<Vec<u8>>>,
    stored: Option<StoredFile>,
}

pub struct UploadSession {
    id: String,
    owner: String,
    manifest: UploadManifest,
    plan: Vec<ChunkSpan>,
    created_at: Timestamp,
    inner: Mutex<SessionInner>,
}

impl UploadSession {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn manifest(&self) -> &UploadManifest {
        &self.manifest
    }

    pub fn state(&self) -> SessionState {
        self.inner.lock().state
    }

    pub fn status(&self) -> SessionStatus {
        let inner = self.inner.lock();
        SessionStatus {
            session_id: self.id.clone(),
            state: inner.state,
            chunk_count: self.plan.len() as u64,
            received: inner
                .chunks
                .iter()
                .enumerate()
                .filter(|(_, c)| c.is_some())
                .map(|(i, _)| i as u64)
                .collect(),
            owner: self.owner.clone(),
        }
    }
}

/// Upload sessions for one server. Completed files go straight into the vault.
pub struct UploadService {
    vault: Arc<Vault>,
    sessions: RwLock<HashMap<String, Arc<UploadSession>>>,
}

impl UploadService {
    pub fn new(vault: Arc<Vault>) -> Self {
        Self {
            vault,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn begin_upload(
        &self,
        manifest: UploadManifest,
        owner: &str,
    ) -> Result<Arc<UploadSession>, TransferError> {
        let plan = manifest.validate()?;
        let session = Arc::new(UploadSession {
            id: uuid::Uuid::new_v4().simple().to_string(),
            owner: owner.to_string(),
            inner: Mutex::new(SessionInner {
                state: SessionState::Open,
                chunks: vec![None; plan.len()],
                stored: None,
            }),
            manifest,
            plan,
            created_at: self.vault.now(),
        });
        self.sessions
            .write()
            .insert(session.id.clone(), Arc::clone(&session));
        Ok(session)
    }

    pub fn session(&self, id: &str) -> Result<Arc<UploadSession>, TransferError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| TransferError::UnknownSession(id.to_string()))
    }

    pub fn put_chunk(&self, id: &str, index: u64, body: Vec<u8>) -> Result<ChunkAck, TransferError> {
        let session = self.session(id)?;
        let count = session.plan.len() as u64;
        let span = session
            .plan
            .get(index as usize)
            .ok_or(TransferError::IndexOutOfRange { index, count })?;
        if body.len() as u64 != span.length {
            return Err(TransferError::WrongLength {
                index,
                expected: span.length,
                found: body.len() as u64,
            });
        }
        if let Some(digests) = &session.manifest.chunk_md5 {
            if !md5_hex(&body).eq_ignore_ascii_case(&digests[index as usize]) {
                return Err(TransferError::ChunkDigestMismatch(index));
            }
        }

        let mut inner = session.inner.lock();
        if inner.state != SessionState::Open {
            return Err(TransferError::NotOpen(inner.state));
        }
        let slot = &mut inner.chunks[index as usize];
        match slot {
            Some(existing) if *existing == body => Ok(ChunkAck::Duplicate),
            Some(_) => Err(TransferError::ConflictingChunk(index)),
            None => {
                *slot = Some(body);
                Ok(ChunkAck::Stored)
            }
        }
    }

    /// Merges, verifies and stores. Exactly one call per session can succeed;
    /// a digest mismatch fails the session and stores nothing.
    pub fn complete_upload(&self, id: &str) -> Result<StoredFile, TransferError> {
        let session = self.session(id)?;
        let mut inner = session.inner.lock();
        if inner.state != SessionState::Open {
            return Err(TransferError::NotOpen(inner.state));
        }
        let missing: Vec<u64> = inner
            .chunks
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_none())
            .map(|(i, _)| i as u64)
            .collect();
        if !missing.is_empty() {
            return Err(TransferError::Incomplete { missing });
        }

        let mut merged = Vec::with_capacity(session.manifest.file_size as usize);
        for chunk in inner.chunks.iter_mut() {
            merged.extend_from_slice(&chunk.take().unwrap_or_default());
        }
        let actual = md5_hex(&merged);
        if !actual.eq_ignore_ascii_case(&session.manifest.file_md5) {
            inner.state = SessionState::Failed;
            return Err(TransferError::DigestMismatch {
                expected: session.manifest.file_md5.to_ascii_lowercase(),
                actual,
            });
        }
        let content_id = match self.vault.put(&merged) {
            Ok(id) => id,
            Err(e) => {
                inner.state = SessionState::Failed;
                return Err(e.into());
            }
        };
        let stored = StoredFile {
            content_id,
            size: merged.len() as u64,
        };
        inner.state = SessionState::Complete;
        inner.stored = Some(stored.clone());
        Ok(stored)
    }

    /// Drops sessions older than the vault retention period.
    pub fn expire_sessions(&self, now: Timestamp) -> usize {
        let ttl = self.vault.ttl();
        let mut sessions = self.sessions.write();
        let before = sessions.len();
        sessions.retain(|_, s| s.created_at.plus(ttl) > now);
        before - sessions.len()
    }
}
