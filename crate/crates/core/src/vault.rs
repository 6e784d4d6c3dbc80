//! Encrypted, content-addressed blob storage with time-based retention.
//!
//! Every blob is encrypted with a fresh AES-256-GCM key, and that key is
//! wrapped with the platform RSA public key (OAEP, SHA-256). Blobs are named
//! by the MD5 of their plaintext, so user-chosen file names never reach the
//! store. MD5 is a naming and transfer check only; tamper evidence comes from
//! the GCM tag.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use aes_gcm::aead::{Aead, AeadCore, KeyInit, OsRng, Payload};
use aes_gcm::{Aes256Gcm, Key, Nonce};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use parking_lot::{Mutex, RwLock};
use rsa::pkcs8::{DecodePrivateKey, EncodePrivateKey, LineEnding};
use rsa::sha2::Sha256;
use rsa::traits::PublicKeyParts;
use rsa::{Oaep, RsaPrivateKey, RsaPublicKey};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock, Timestamp};
use crate::transfer::{is_md5_hex, md5_hex};

pub const DEFAULT_TTL: Duration = Duration::from_secs(72 * 3600);
pub const MIN_KEY_BITS: usize = 2048;

#[derive(Debug, Error)]
pub enum VaultError {
    #[error("public key has {0} bits, at least {MIN_KEY_BITS} required")]
    WeakKey(usize),
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error("refusing to seal an empty payload")]
    EmptyPlaintext,
    #[error("key unwrap failed (wrong private key?)")]
    KeyUnwrap,
    #[error("authentication failed: ciphertext or metadata was modified")]
    Authentication,
    #[error("decrypted content digest {actual} does not match content id {expected}")]
    DigestMismatch { expected: String, actual: String },
    #[error("blob `{0}` not found")]
    NotFound(String),
    #[error("blob `{0}` was purged by the retention policy")]
    Purged(String),
    #[error("invalid content id `{0}`")]
    InvalidId(String),
    #[error("corrupt sidecar for `{0}`: {1}")]
    CorruptSidecar(String, String),
    #[error("storage i/o: {0}")]
    Io(#[from] io::Error),
}

impl VaultError {
    pub fn code(&self) -> &'static str {
        match self {
            VaultError::WeakKey(_) | VaultError::InvalidKey(_) => "invalid_key",
            VaultError::EmptyPlaintext => "empty_payload",
            VaultError::KeyUnwrap | VaultError::Authentication | VaultError::DigestMismatch { .. } => {
                "integrity_failure"
            }
            VaultError::NotFound(_) => "not_found",
            VaultError::Purged(_) => "purged",
            VaultError::InvalidId(_) => "invalid_content_id",
            VaultError::CorruptSidecar(..) | VaultError::Io(_) => "storage_failure",
        }
    }
}

impl PartialEq for VaultError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}

impl Eq for VaultError {}

/// The platform key pair. The private half never leaves the service.
#[derive(Clone)]
pub struct PlatformKeys {
    private: RsaPrivateKey,
    public: RsaPublicKey,
}

impl PlatformKeys {
    pub fn generate(bits: usize) -> Result<Self, VaultError> {
        if bits < MIN_KEY_BITS {
            return Err(VaultError::WeakKey(bits));
        }
        let private =
            RsaPrivateKey::new(&mut OsRng, bits).map_err(|e| VaultError::InvalidKey(e.to_string()))?;
        Ok(Self::from_private(private))
    }

    pub fn from_private(private: RsaPrivateKey) -> Self {
        let public = private.to_public_key();
        Self { private, public }
    }

    pub fn from_pkcs8_pem(pem: &str) -> Result<Self, VaultError> {
        RsaPrivateKey::from_pkcs8_pem(pem)
            .map(Self::from_private)
            .map_err(|e| VaultError::InvalidKey(e.to_string()))
    }

    pub fn to_pkcs8_pem(&self) -> Result<String, VaultError> {
        self.private
            .to_pkcs8_pem(LineEnding::LF)
            .map(|pem| pem.to_string())
            .map_err(|e| VaultError::InvalidKey(e.to_string()))
    }

    /// Loads the key from `path`, generating and saving one if absent.
    pub fn load_or_generate(path: &Path) -> Result<Self, VaultError> {
        if path.exists() {
            return Self::from_pkcs8_pem(&fs::read_to_string(path)?);
        }
        let keys = Self::generate(MIN_KEY_BITS)?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, keys.to_pkcs8_pem()?)?;
        Ok(keys)
    }

    pub fn public(&self) -> &RsaPublicKey {
        &self.public
    }

    pub fn private(&self) -> &RsaPrivateKey {
        &self.private
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedBlob {
    pub content_id: String,
    pub ciphertext: Vec<u8>,
    pub wrapped_key: Vec<u8>,
    pub nonce: Vec<u8>,
    pub created_at: Timestamp,
    pub ttl: Duration,
}

impl EncryptedBlob {
    pub fn expires_at(&self) -> Timestamp {
        self.created_at.plus(self.ttl)
    }
}

/// Encrypts `plaintext` under a fresh symmetric key wrapped for `recipient`.
pub fn seal(
    plaintext: &[u8],
    recipient: &RsaPublicKey,
    created_at: Timestamp,
    ttl: Duration,
) -> Result<EncryptedBlob, VaultError> {
    let bits = recipient.n().bits();
    if bits < MIN_KEY_BITS {
        return Err(VaultError::WeakKey(bits));
    }
    if plaintext.is_empty() {
        return Err(VaultError::EmptyPlaintext);
    }
    let content_id = md5_hex(plaintext);
    let key = Aes256Gcm::generate_key(&mut OsRng);
    let nonce = Aes256Gcm::generate_nonce(&mut OsRng);
    let ciphertext = Aes256Gcm::new(&key)
        .encrypt(
            &nonce,
            Payload {
                msg: plaintext,
                aad: content_id.as_bytes(),
            },
        )
        .map_err(|_| VaultError::Authentication)?;
    let wrapped_key = recipient
        .encrypt(&mut OsRng, Oaep::new::<Sha256>(), key.as_slice())
        .map_err(|e| VaultError::InvalidKey(e.to_string()))?;
    Ok(EncryptedBlob {
        content_id,
        ciphertext,
        wrapped_key,
        nonce: nonce.to_vec(),
        created_at,
        ttl,
    })
}

/// Decrypts a sealed blob. Nothing is returned unless the tag verifies and
/// the plaintext digest equals the content id.
pub fn open(blob: &EncryptedBlob, private: &RsaPrivateKey) -> Result<Vec<u8>, VaultError> {
    let key_bytes = private
        .decrypt(Oaep::new::<Sha256>(), &blob.wrapped_key)
        .map_err(|_| VaultError::KeyUnwrap)?;
    if key_bytes.len() != 32 || blob.nonce.len() != 12 {
        return Err(VaultError::Authentication);
    }
    let cipher = Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&key_bytes));
    let plaintext = cipher
        .decrypt(
            Nonce::from_slice(&blob.nonce),
            Payload {
                msg: &blob.ciphertext,
                aad: blob.content_id.as_bytes(),
            },
        )
        .map_err(|_| VaultError::Authentication)?;
    let actual = md5_hex(&plaintext);
    if actual != blob.content_id {
        return Err(VaultError::DigestMismatch {
            expected: blob.content_id.clone(),
            actual,
        });
    }
    Ok(plaintext)
}

/// Backing store for sealed blobs.
pub trait BlobStore: Send + Sync {
    /// Returns `false` when the id already exists (nothing written).
    fn insert(&self, blob: &EncryptedBlob) -> Result<bool, VaultError>;
    fn get(&self, content_id: &str) -> Result<Option<EncryptedBlob>, VaultError>;
    fn remove(&self, content_id: &str) -> Result<bool, VaultError>;
    /// `(content_id, expires_at)` for every published blob.
    fn expiries(&self) -> Result<Vec<(String, Timestamp)>, VaultError>;
}

#[derive(Default)]
pub struct MemoryBlobStore {
    blobs: RwLock<HashMap<String, EncryptedBlob>>,
}

impl BlobStore for MemoryBlobStore {
    fn insert(&self, blob: &EncryptedBlob) -> Result<bool, VaultError> {
        let mut blobs = self.blobs.write();
        if blobs.contains_key(&blob.content_id) {
            return Ok(false);
        }
        blobs.insert(blob.content_id.clone(), blob.clone());
        Ok(true)
    }

    fn get(&self, content_id: &str) -> Result<Option<EncryptedBlob>, VaultError> {
        Ok(self.blobs.read().get(content_id).cloned())
    }

    fn remove(&self, content_id: &str) -> Result<bool, VaultError> {
        Ok(self.blobs.write().remove(content_id).is_some())
    }

    fn expiries(&self) -> Result<Vec<(String, Timestamp)>, VaultError> {
        Ok(self
            .blobs
            .read()
            .values()
            .map(|b| (b.content_id.clone(), b.expires_at()))
            .collect())
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    content_id: String,
    created_at: u64,
    ttl_secs: u64,
    wrapped_key: String,
    nonce: String,
}

/// One file per blob named `<content_id>` plus a `<content_id>.meta` JSON
/// sidecar. The sidecar is renamed into place last; a blob without a sidecar
/// is not visible.
pub struct DirBlobStore {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl DirBlobStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, VaultError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            write_lock: Mutex::new(()),
        })
    }

    fn blob_path(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    fn sidecar_path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.meta"))
    }

    fn read_sidecar(&self, id: &str) -> Result<Option<Sidecar>, VaultError> {
        match fs::read(self.sidecar_path(id)) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| VaultError::CorruptSidecar(id.to_string(), e.to_string())),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

fn check_id(id: &str) -> Result<(), VaultError> {
    if is_md5_hex(id) && id.bytes().all(|b| !b.is_ascii_uppercase()) {
        Ok(())
    } else {
        Err(VaultError::InvalidId(id.to_string()))
    }
}

impl BlobStore for DirBlobStore {
    fn insert(&self, blob: &EncryptedBlob) -> Result<bool, VaultError> {
        check_id(&blob.content_id)?;
        let _guard = self.write_lock.lock();
        let id = &blob.content_id;
        if self.sidecar_path(id).exists() {
            return Ok(false);
        }
        let sidecar = Sidecar {
            content_id: id.clone(),
            created_at: blob.created_at.secs(),
            ttl_secs: blob.ttl.as_secs(),
            wrapped_key: B64.encode(&blob.wrapped_key),
            nonce: hex::encode(&blob.nonce),
        };
        let tmp_blob = self.root.join(format!(".tmp-{id}"));
        let tmp_meta = self.root.join(format!(".tmp-{id}.meta"));
        fs::write(&tmp_blob, &blob.ciphertext)?;
        fs::write(
            &tmp_meta,
            serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes"),
        )?;
        fs::rename(&tmp_blob, self.blob_path(id))?;
        fs::rename(&tmp_meta, self.sidecar_path(id))?;
        Ok(true)
    }

    fn get(&self, content_id: &str) -> Result<Option<EncryptedBlob>, VaultError> {
        check_id(content_id)?;
        let Some(meta) = self.read_sidecar(content_id)? else {
            return Ok(None);
        };
        let corrupt = |e: String| VaultError::CorruptSidecar(content_id.to_string(), e);
        Ok(Some(EncryptedBlob {
            content_id: meta.content_id,
            ciphertext: fs::read(self.blob_path(content_id))?,
            wrapped_key: B64
                .decode(&meta.wrapped_key)
                .map_err(|e| corrupt(e.to_string()))?,
            nonce: hex::decode(&meta.nonce).map_err(|e| corrupt(e.to_string()))?,
            created_at: Timestamp(meta.created_at),
            ttl: Duration::from_secs(meta.ttl_secs),
        }))
    }

    fn remove(&self, content_id: &str) -> Result<bool, VaultError> {
        check_id(content_id)?;
        let _guard = self.write_lock.lock();
        // Unpublish first so readers never see a sidecar without its blob.
        let existed = match fs::remove_file(self.sidecar_path(content_id)) {
            Ok(()) => true,
            Err(e) if e.kind() == io::ErrorKind::NotFound => false,
            Err(e) => return Err(e.into()),
        };
        match fs::remove_file(self.blob_path(content_id)) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        Ok(existed)
    }

    fn expiries(&self) -> Result<Vec<(String, Timestamp)>, VaultError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let name = entry?.file_name();
            let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".meta")) else {
                continue;
            };
            if id.starts_with(".tmp-") {
                continue;
            }
            if let Some(meta) = self.read_sidecar(id)? {
                let expires = Timestamp(meta.created_at).plus(Duration::from_secs(meta.ttl_secs));
                out.push((id.to_string(), expires));
            }
        }
        Ok(out)
    }
}

/// Result of resolving a blob reference held by a structural record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlobStatus {
    Present,
    Purged,
    Unknown,
}

/// Sealed blob storage bound to the platform key pair, a clock and a
/// retention period.
pub struct Vault {
    keys: PlatformKeys,
    store: Box<dyn BlobStore>,
    clock: Arc<dyn Clock>,
    ttl: Duration,
    purged: Mutex<HashSet<String>>,
}

impl Vault {
    pub fn new(keys: PlatformKeys, store: Box<dyn BlobStore>) -> Self {
        Self {
            keys,
            store,
            clock: Arc::new(SystemClock),
            ttl: DEFAULT_TTL,
            purged: Mutex::new(HashSet::new()),
        }
    }

    pub fn in_memory(keys: PlatformKeys) -> Self {
        Self::new(keys, Box::<MemoryBlobStore>::default())
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = ttl;
        self
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    pub fn keys(&self) -> &PlatformKeys {
        &self.keys
    }

    /// Seals with the platform key and stores; returns the content id.
    pub fn put(&self, plaintext: &[u8]) -> Result<String, VaultError> {
        let id = md5_hex(plaintext);
        if self.store.get(&id)?.is_some() {
            return Ok(id);
        }
        let blob = seal(plaintext, self.keys.public(), self.now(), self.ttl)?;
        self.store(&blob)
    }

    /// Fetches and decrypts.
    pub fn get(&self, content_id: &str) -> Result<Vec<u8>, VaultError> {
        open(&self.fetch(content_id)?, self.keys.private())
    }

    /// Storing an id that already exists is a no-op returning the same id.
    pub fn store(&self, blob: &EncryptedBlob) -> Result<String, VaultError> {
        check_id(&blob.content_id)?;
        self.store.insert(blob)?;
        self.purged.lock().remove(&blob.content_id);
        Ok(blob.content_id.clone())
    }

    pub fn fetch(&self, content_id: &str) -> Result<EncryptedBlob, VaultError> {
        if check_id(content_id).is_err() {
            return Err(VaultError::NotFound(content_id.to_string()));
        }
        match self.store.get(content_id)? {
            Some(blob) => Ok(blob),
            None if self.purged.lock().contains(content_id) => {
                Err(VaultError::Purged(content_id.to_string()))
            }
            None => Err(VaultError::NotFound(content_id.to_string())),
        }
    }

    pub fn resolve(&self, content_id: &str) -> BlobStatus {
        match self.fetch(content_id) {
            Ok(_) => BlobStatus::Present,
            Err(VaultError::Purged(_)) => BlobStatus::Purged,
            Err(_) => BlobStatus::Unknown,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.store.expiries().map(|e| e.is_empty()).unwrap_or(true)
    }

    pub fn len(&self) -> usize {
        self.store.expiries().map(|e| e.len()).unwrap_or(0)
    }

    /// Removes every blob with `created_at + ttl <= now`. Idempotent for a
    /// fixed `now`.
    pub fn purge_expired(&self, now: Timestamp) -> Result<Vec<String>, VaultError> {
        let mut purged = Vec::new();
        for (id, expires) in self.store.expiries()? {
            if expires <= now && self.store.remove(&id)? {
                purged.push(id);
            }
        }
        purged.sort();
        self.purged.lock().extend(purged.iter().cloned());
        Ok(purged)
    }
}

/// In-process stand-in for the structural-record database.
pub struct RecordStore<V> {
    records: RwLock<BTreeMap<String, V>>,
}

impl<V> Default for RecordStore<V> {
    fn default() -> Self {
        Self {
            records: RwLock::new(BTreeMap::new()),
        }
    }
}

impl<V: Clone> RecordStore<V> {
    /// Inserts unless the key exists; returns whether it was inserted.
    pub fn insert_new(&self, key: &str, value: V) -> bool {
        let mut records = self.records.write();
        if records.contains_key(key) {
            return false;
        }
        records.insert(key.to_string(), value);
        true
    }

    pub fn upsert(&self, key: &str, value: V) {
        self.records.write().insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<V> {
        self.records.read().get(key).cloned()
    }

    pub fn values(&self) -> Vec<V> {
        self.records.read().values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.records.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.read().is_empty()
    }
}

/// Short-lived entries with an absolute expiry (auth/session cache role).
pub struct ExpiringCache<V> {
    entries: RwLock<HashMap<String, (Timestamp, V)>>,
}

impl<V> Default for ExpiringCache<V> {
    fn default() -> Self {
        Self {
            entries: RwLock::new(HashMap::new()),
        }
    }
}

impl<V: Clone> ExpiringCache<V> {
    pub fn insert(&self, key: &str, expires_at: Timestamp, value: V) {
        self.entries.write().insert(key.to_string(), (expires_at, value));
    }

    pub fn get(&self, key: &str, now: Timestamp) -> Option<V> {
        self.entries
            .read()
            .get(key)
            .filter(|(exp, _)| *exp > now)
            .map(|(_, v)| v.clone())
    }

    pub fn evict_expired(&self, now: Timestamp) -> usize {
        let mut entries = self.entries.write();
        let before = entries.len();
        entries.retain(|_, (exp, _)| *exp > now);
        before - entries.len()
    }
}

/// Shared test key pair; RSA generation is too slow to repeat per test.
#[doc(hidden)]
pub fn test_keys() -> PlatformKeys {
    static KEYS: std::sync::OnceLock<PlatformKeys> = std::sync::OnceLock::new();
    KEYS.get_or_init(|| PlatformKeys::generate(MIN_KEY_BITS).expect("key generation"))
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use rand::{Rng, SeedableRng};

    const T0: Timestamp = Timestamp(1_700_000_000);

    fn blob_of(bytes: &[u8]) -> EncryptedBlob {
        seal(bytes, test_keys().public(), T0, DEFAULT_TTL).unwrap()
    }

    #[test]
    fn seal_open_round_trip() {
        let keys = test_keys();
        let blob = blob_of(b"k-space payload");
        assert_eq!(blob.content_id, md5_hex(b"k-space payload"));
        assert_eq!(open(&blob, keys.private()).unwrap(), b"k-space payload");
        assert!(!blob.ciphertext.windows(7).any(|w| w == b"payload"));
    }

    #[test]
    fn seals_are_fresh_but_share_content_id() {
        let a = blob_of(b"same bytes");
        let b = blob_of(b"same bytes");
        assert_ne!(a.ciphertext, b.ciphertext);
        assert_ne!(a.nonce, b.nonce);
        assert_ne!(a.wrapped_key, b.wrapped_key);
        assert_eq!(a.content_id, b.content_id);
    }

    #[test]
    fn wrapped_key_unwraps_to_working_key() {
        let keys = test_keys();
        let blob = blob_of(b"abc");
        let key = keys
            .private()
            .decrypt(Oaep::new::<Sha256>(), &blob.wrapped_key)
            .unwrap();
        assert_eq!(key.len(), 32);
        let plain = Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&key))
            .decrypt(
                Nonce::from_slice(&blob.nonce),
                Payload {
                    msg: &blob.ciphertext,
                    aad: blob.content_id.as_bytes(),
                },
            )
            .unwrap();
        assert_eq!(plain, b"abc");
    }

    #[test]
    fn bit_flips_fail_authentication() {
        let keys = test_keys();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let blob = blob_of(&[0x5a; 300]);
        for _ in 0..100 {
            let mut bad = blob.clone();
            let bit = rng.random_range(0..bad.ciphertext.len() * 8);
            bad.ciphertext[bit / 8] ^= 1 << (bit % 8);
            assert_eq!(open(&bad, keys.private()), Err(VaultError::Authentication));
        }
        let mut renamed = blob.clone();
        renamed.content_id = md5_hex(b"other");
        assert_eq!(open(&renamed, keys.private()), Err(VaultError::Authentication));
    }

    #[test]
    fn wrong_private_key_is_rejected() {
        let other = PlatformKeys::generate(MIN_KEY_BITS).unwrap();
        let blob = blob_of(b"secret");
        assert_eq!(open(&blob, other.private()), Err(VaultError::KeyUnwrap));
    }

    #[test]
    fn seal_rejects_weak_keys_and_empty_input() {
        let weak = RsaPrivateKey::new(&mut OsRng, 1024).unwrap();
        assert_eq!(
            seal(b"x", &weak.to_public_key(), T0, DEFAULT_TTL),
            Err(VaultError::WeakKey(1024))
        );
        assert_eq!(
            seal(b"", test_keys().public(), T0, DEFAULT_TTL),
            Err(VaultError::EmptyPlaintext)
        );
        assert!(PlatformKeys::generate(1024).is_err());
    }

    #[test]
    fn store_fetch_dedup() {
        let vault = Vault::in_memory(test_keys());
        let blob = blob_of(b"one");
        let id = vault.store(&blob).unwrap();
        assert_eq!(vault.fetch(&id).unwrap(), blob);
        assert_eq!(vault.store(&blob_of(b"one")).unwrap(), id);
        assert_eq!(vault.len(), 1);
        assert_eq!(vault.fetch(&id).unwrap(), blob, "first copy kept");
        let zeros = "0".repeat(32);
        assert_eq!(
            Vault::in_memory(test_keys()).fetch(&zeros),
            Err(VaultError::NotFound(zeros))
        );
    }

    #[test]
    fn retention_boundary() {
        let clock = Arc::new(ManualClock::new(T0));
        let vault = Vault::in_memory(test_keys()).with_clock(clock.clone());
        let id = vault.put(b"scan").unwrap();
        assert!(vault
            .purge_expired(T0.plus(DEFAULT_TTL - Duration::from_secs(1)))
            .unwrap()
            .is_empty());
        assert_eq!(vault.resolve(&id), BlobStatus::Present);
        assert_eq!(
            vault.purge_expired(T0.plus(DEFAULT_TTL)).unwrap(),
            vec![id.clone()]
        );
        assert_eq!(vault.resolve(&id), BlobStatus::Purged);
        assert_eq!(vault.get(&id), Err(VaultError::Purged(id.clone())));
        assert!(vault.purge_expired(T0.plus(DEFAULT_TTL)).unwrap().is_empty());
    }

    #[test]
    fn purge_matches_filter_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let keys = test_keys();
        let vault = Vault::in_memory(keys.clone());
        let now = T0.plus(Duration::from_secs(1_000_000));
        let mut expected = Vec::new();
        for i in 0u32..1000 {
            let age = rng.random_range(0..2 * DEFAULT_TTL.as_secs());
            // Skip the RSA wrap; only ids and timestamps matter here.
            let blob = EncryptedBlob {
                content_id: md5_hex(&i.to_le_bytes()),
                ciphertext: vec![1],
                wrapped_key: vec![],
                nonce: vec![],
                created_at: Timestamp(now.secs() - age),
                ttl: DEFAULT_TTL,
            };
            if age >= DEFAULT_TTL.as_secs() {
                expected.push(blob.content_id.clone());
            }
            vault.store(&blob).unwrap();
        }
        expected.sort();
        let purged = vault.purge_expired(now).unwrap();
        assert_eq!(purged, expected);
        assert_eq!(vault.len(), 1000 - expected.len());
        assert!(vault.purge_expired(now).unwrap().is_empty());
    }

    #[test]
    fn dir_store_layout_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = DirBlobStore::open(dir.path()).unwrap();
        let vault = Vault::new(test_keys(), Box::new(store));
        let id = vault.put(b"patient_smith_scan.dat contents").unwrap();
        let mut names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, vec![id.clone(), format!("{id}.meta")]);
        let meta: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join(format!("{id}.meta"))).unwrap()).unwrap();
        for key in ["created_at", "ttl_secs", "wrapped_key", "nonce"] {
            assert!(meta.get(key).is_some(), "sidecar lacks {key}");
        }
        assert_eq!(meta["ttl_secs"], 72 * 3600);
        assert_eq!(vault.get(&id).unwrap(), b"patient_smith_scan.dat contents");

        let reopened = Vault::new(test_keys(), Box::new(DirBlobStore::open(dir.path()).unwrap()));
        assert_eq!(reopened.get(&id).unwrap(), b"patient_smith_scan.dat contents");
        let later = reopened.now().plus(DEFAULT_TTL);
        assert_eq!(reopened.purge_expired(later).unwrap(), vec![id.clone()]);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn dir_store_rejects_path_like_ids() {
        let dir = tempfile::tempdir().unwrap();
        let vault = Vault::new(test_keys(), Box::new(DirBlobStore::open(dir.path()).unwrap()));
        assert!(matches!(
            vault.fetch("../etc/passwd"),
            Err(VaultError::NotFound(_))
        ));
    }

    #[test]
    fn pem_round_trip() {
        let keys = test_keys();
        let back = PlatformKeys::from_pkcs8_pem(&keys.to_pkcs8_pem().unwrap()).unwrap();
        assert_eq!(back.public(), keys.public());
    }

    #[test]
    fn cache_expires() {
        let cache = ExpiringCache::default();
        cache.insert("tok", Timestamp(10), 1u8);
        assert_eq!(cache.get("tok", Timestamp(9)), Some(1));
        assert_eq!(cache.get("tok", Timestamp(10)), None);
        assert_eq!(cache.evict_expired(Timestamp(10)), 1);
    }
}
