//! Command-line client for the reconlab gateway and a headless runner for
//! the full upload, reconstruct, study, read and report workflow.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod client;
pub mod phantom;
pub mod workflow;

pub use client::{Client, ClientError};
pub use phantom::{phantom_bytes, PhantomSpec};
pub use workflow::{run_workflow, WorkflowConfig, WorkflowError, WorkflowSummary};
