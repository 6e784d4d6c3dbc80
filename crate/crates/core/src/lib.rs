//! Core engine of the reconlab platform.
//!
//! The crate is split along the platform workflow:
//!
//! * [`rawdata`] - neutral k-space and image containers, anonymization.
//! * [`transfer`] - chunked uploads verified by MD5.
//! * [`vault`] - encrypted, content-addressed blob storage with retention.
//! * [`recon`] - sampling masks, reference reconstruction backends, registry.
//! * [`orchestrator`] - master/slave job dispatch.
//! * [`study`] - blinded multi-reader scoring.
//! * [`stats`] - paired T-test, Wilcoxon signed-rank test, box and band summaries.
//!
//! Services that the HTTP gateway shares across requests are `Send + Sync`
//! and internally synchronized.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clock;
pub mod orchestrator;
pub mod rawdata;
pub mod recon;
pub mod stats;
pub mod study;
pub mod transfer;
pub mod vault;

pub use clock::{Clock, ManualClock, SystemClock, Timestamp};
pub use rawdata::{ImageSeries, KSpaceVolume, View};
pub use recon::{BackendRegistry, ReconParams, SamplingMask};
pub use stats::{StatReport, TTestResult, WilcoxonResult};
pub use study::{Score, Study, StudyCase};
pub use transfer::{md5_hex, UploadManifest};
pub use vault::{EncryptedBlob, Vault};
