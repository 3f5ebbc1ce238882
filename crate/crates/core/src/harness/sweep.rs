use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use super::config::{ExperimentConfig, Overrides};
use super::run::{run_experiment, RunRecord};
use crate::error::{Error, Result};

/// Loads every `*.toml` in `dir`, sorted by file name.
pub fn load_dir(dir: &Path, overrides: &Overrides) -> Result<Vec<(PathBuf, ExperimentConfig)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("{}: no .toml configs", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| ExperimentConfig::load(&p, overrides).map(|c| (p, c)))
        .collect()
}

/// Writes the desk grid as `<name>.toml` files with output directories
/// under `out_root`.
pub fn write_grid(dir: &Path, configs: &[ExperimentConfig], out_root: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for cfg in configs {
        let cfg = ExperimentConfig {
            output_dir: out_root.join(&cfg.name),
            ..cfg.clone()
        };
        let path = dir.join(format!("{}.toml", cfg.name));
        fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Runs every config on its own thread. Results keep the input order.
pub fn run_all(configs: &[ExperimentConfig]) -> Vec<Result<RunRecord>> {
    thread::scope(|s| {
        let handles: Vec<_> = configs.iter().map(|c| s.spawn(move || run_experiment(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidArgument("run panicked".into()))))
            .collect()
    })
}

/// Successful records keyed by config hash.
pub fn merge(records: impl IntoIterator<Item = RunRecord>) -> Result<BTreeMap<String, RunRecord>> {
    let mut out = BTreeMap::new();
    for r in records {
        let hash = r.config_hash.clone();
        if out.insert(hash.clone(), r).is_some() {
            return Err(Error::Config(format!("two sweep configs share hash {hash}")));
        }
    }
    Ok(out)
}

/// Writes merged records as `sweep.json` under `root`.
pub fn write_summary(root: &Path, merged: &BTreeMap<String, RunRecord>) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let path = root.join("sweep.json");
    let json = serde_json::to_string_pretty(merged).expect("records serialize") + "\n";
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
