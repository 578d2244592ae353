//! Helpers shared by the pipeline and acceptance test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use kgaug::config::RunConfig;
use kgaug::manifest::{list_files, LOCK_FILE, MANIFEST_FILE};
use kgaug::Overrides;
use kgaug_gateway::{StubConfig, StubFixture, StubServer};
use tokio::runtime::Runtime;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn vocab_path() -> PathBuf {
    repo_root().join("data/vocab/bert-base-uncased.txt")
}

pub fn mini_fixtures() -> Vec<StubFixture> {
    StubFixture::load_jsonl(&fixtures().join("mini50_responses.jsonl")).expect("fixture responses")
}

/// A stub endpoint on its own runtime, so the pipeline can block on its own.
pub struct Stub {
    server: Option<StubServer>,
    rt: Runtime,
}

impl Stub {
    pub fn start(config: StubConfig) -> Self {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(1)
            .enable_all()
            .build()
            .expect("runtime");
        let server = rt.block_on(StubServer::spawn(config)).expect("stub binds");
        Stub {
            server: Some(server),
            rt,
        }
    }

    pub fn mini50() -> Self {
        Self::start(StubConfig::with_fixtures(mini_fixtures()))
    }

    pub fn base_url(&self) -> String {
        self.server.as_ref().unwrap().base_url()
    }

    pub fn requests(&self) -> u64 {
        self.server.as_ref().unwrap().stats().requests
    }
}

impl Drop for Stub {
    fn drop(&mut self) {
        if let Some(server) = self.server.take() {
            let _ = self.rt.block_on(server.shutdown());
        }
    }
}

/// The mini50 run config pointed at `endpoint`, optionally with a shared cache.
pub fn mini_config(endpoint: &str, cache_dir: Option<&Path>) -> RunConfig {
    let mut config = RunConfig::load(&fixtures().join("mini50.toml")).expect("mini50 config");
    config.apply(&Overrides {
        endpoint: Some(endpoint.to_string()),
        cache_dir: cache_dir.map(Path::to_path_buf),
        ..Overrides::default()
    });
    config
}

/// Every stage output file and its bytes (manifest, lock and cache excluded).
pub fn snapshot(run_dir: &Path) -> BTreeMap<String, Vec<u8>> {
    list_files(run_dir, run_dir)
        .expect("listing run dir")
        .into_iter()
        .filter(|rel| rel != MANIFEST_FILE && rel != LOCK_FILE && !rel.starts_with("cache/"))
        .map(|rel| {
            let bytes = fs::read(run_dir.join(&rel)).expect("reading output");
            (rel, bytes)
        })
        .collect()
}
