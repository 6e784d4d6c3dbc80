use std::collections::{HashMap, HashSet};
use std::ops::Deref;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use reconlab_core::clock::{Clock, SystemClock};
use reconlab_core::orchestrator::{Cluster, Orchestrator, WorkerPool, DEFAULT_CAPACITY};
use reconlab_core::recon::BackendRegistry;
use reconlab_core::study::StudyRegistry;
use reconlab_core::transfer::UploadService;
use reconlab_core::vault::{DirBlobStore, PlatformKeys, Vault, VaultError};

use crate::auth::{Role, TokenService, UserStore};
use crate::config::{GatewayConfig, DEV_PASSWORD};

pub const DEV_ACCOUNTS: [(&str, Role); 3] = [
    ("researcher1", Role::Developer),
    ("radiologist1", Role::Reader),
    ("radiologist2", Role::Reader),
];

/// Everything a request handler can reach. Cheap to clone.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

pub struct Shared {
    pub config: GatewayConfig,
    pub clock: Arc<dyn Clock>,
    pub vault: Arc<Vault>,
    pub uploads: UploadService,
    pub orchestrator: Arc<Orchestrator>,
    pub studies: StudyRegistry,
    pub users: UserStore,
    pub tokens: TokenService,
    /// content id -> users who uploaded it.
    datasets: RwLock<HashMap<String, HashSet<String>>>,
    /// study id -> creating user.
    study_owners: RwLock<HashMap<String, String>>,
    cluster: Mutex<Option<Cluster>>,
}

impl Deref for AppState {
    type Target = Shared;

    fn deref(&self) -> &Shared {
        &self.0
    }
}

impl AppState {
    /// Build with the system clock, loading or generating the platform key.
    pub fn from_config(config: GatewayConfig) -> Result<Self, VaultError> {
        let keys = match &config.data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                PlatformKeys::load_or_generate(&dir.join("platform_key.pem"))?
            }
            None => PlatformKeys::generate(2048)?,
        };
        Self::build(config, keys, Arc::new(SystemClock))
    }

    pub fn build(
        config: GatewayConfig,
        keys: PlatformKeys,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, VaultError> {
        let vault = match &config.data_dir {
            Some(dir) => Vault::new(keys, Box::new(DirBlobStore::open(dir.join("blobs"))?)),
            None => Vault::in_memory(keys),
        }
        .with_clock(Arc::clone(&clock))
        .with_ttl(config.blob_ttl);
        let vault = Arc::new(vault);
        let pool = WorkerPool::new(DEFAULT_CAPACITY, &vec![DEFAULT_CAPACITY; config.slaves])
            .expect("default capacities are positive");
        let orchestrator = Arc::new(
            Orchestrator::new(Arc::clone(&vault), Arc::new(BackendRegistry::default()), pool)
                .with_clock(Arc::clone(&clock)),
        );
        let state = AppState(Arc::new(Shared {
            tokens: TokenService::new(&config.token_secret, config.token_ttl, Arc::clone(&clock)),
            uploads: UploadService::new(Arc::clone(&vault)),
            studies: StudyRegistry::new(),
            users: UserStore::default(),
            datasets: RwLock::new(HashMap::new()),
            study_owners: RwLock::new(HashMap::new()),
            cluster: Mutex::new(None),
            orchestrator,
            vault,
            clock,
            config,
        }));
        if state.config.dev_fixtures {
            for (name, role) in DEV_ACCOUNTS {
                state
                    .users
                    .register(name, DEV_PASSWORD, role, None)
                    .expect("fixture accounts are valid");
            }
        }
        Ok(state)
    }

    /// Start the executor threads. Idempotent.
    pub fn start_workers(&self) {
        let mut cluster = self.cluster.lock();
        if cluster.is_none() {
            *cluster = Some(self.orchestrator.start());
        }
    }

    pub fn stop_workers(&self) {
        if let Some(c) = self.cluster.lock().take() {
            c.stop();
        }
    }

    pub fn add_dataset_owner(&self, content_id: &str, user: &str) {
        self.datasets
            .write()
            .entry(content_id.to_string())
            .or_default()
            .insert(user.to_string());
    }

    pub fn owns_dataset(&self, content_id: &str, user: &str) -> bool {
        self.datasets
            .read()
            .get(content_id)
            .is_some_and(|owners| owners.contains(user))
    }

    pub fn set_study_owner(&self, study_id: &str, user: &str) {
        self.study_owners
            .write()
            .insert(study_id.to_string(), user.to_string());
    }

    pub fn study_owner(&self, study_id: &str) -> Option<String> {
        self.study_owners.read().get(study_id).cloned()
    }

    /// Drop expired blobs and upload sessions.
    pub fn purge(&self) -> usize {
        let now = self.clock.now();
        let blobs = match self.vault.purge_expired(now) {
            Ok(ids) => ids.len(),
            Err(e) => {
                tracing::warn!("purge failed: {e}");
                0
            }
        };
        blobs + self.uploads.expire_sessions(now)
    }
}
