//! HTTP API, client and command line for the artifact registry and task
//! pipeline.

pub mod api;
pub mod client;

pub use api::{router, serve, AppState, ServiceConfig, DIGEST_HEADER};
pub use client::{ClientError, ModelApi, RawResponse};
