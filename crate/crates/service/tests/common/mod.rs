#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use hpcfair::api::{router, AppState, ServiceConfig};
use hpcfair::client::ModelApi;
use hpcfair_core::registry::{ManualClock, Registry, Role};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture(rel: &str) -> Vec<u8> {
    let p = fixtures().join(rel);
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

pub fn copy_tree(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dest = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &dest);
        } else {
            std::fs::copy(entry.path(), &dest).unwrap();
        }
    }
}

/// A service over a fresh store, with the demo fixtures as its workdir and a
/// manual clock.
pub struct Harness {
    pub dir: tempfile::TempDir,
    pub clock: Arc<ManualClock>,
    pub state: Arc<AppState>,
    pub publisher: String,
    pub reader: String,
}

impl Harness {
    pub fn new() -> Harness {
        let dir = tempfile::tempdir().unwrap();
        copy_tree(&fixtures().join("demo"), &dir.path().join("work"));
        let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2022, 11, 14, 9, 0, 0).unwrap()));
        let registry = Registry::open_with_clock(dir.path().join("store"), clock.clone()).unwrap();
        let publisher = registry.issue_token("alice", Role::Publisher, 86_400).unwrap().token;
        let reader = registry.issue_token("bob", Role::Reader, 86_400).unwrap().token;
        let state = AppState::with_registry(Arc::new(registry), &Self::config(dir.path()));
        Harness { dir, clock, state, publisher, reader }
    }

    fn config(root: &Path) -> ServiceConfig {
        ServiceConfig::new(root.join("store"), root.join("work"))
    }

    pub fn work(&self) -> PathBuf {
        self.dir.path().join("work")
    }

    pub fn api(&self, token: Option<&str>) -> ModelApi {
        let api = ModelApi::in_process(router(self.state.clone()));
        match token {
            Some(t) => api.with_token(t),
            None => api,
        }
    }

    /// A new service over the same files, as after a process restart.
    pub fn restarted(&self) -> Arc<AppState> {
        let registry = Registry::open_with_clock(self.dir.path().join("store"), self.clock.clone()).unwrap();
        AppState::with_registry(Arc::new(registry), &Self::config(self.dir.path()))
    }
}
