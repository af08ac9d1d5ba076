#![allow(dead_code)]

use std::path::{Path, PathBuf};

use redatum_cli::cache::Cache;
use redatum_cli::config::ExperimentConfig;

pub fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// The small configuration writing into `dir/out`.
pub fn small(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&config_path("small.json")).unwrap();
    cfg.output_dir = dir.join("out");
    cfg
}

pub fn cache_in(dir: &Path) -> Cache {
    Cache {
        root: dir.join("cache"),
    }
}
