//! Run directories: `<root>/<command>-<config hash>-<unix time>`, holding the
//! resolved config and the library version. Removed again if the command
//! fails.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use geobridge_core::{Error, Result};

use crate::config::RunConfig;

/// Env var naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "GEOBRIDGE_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";
pub const CONFIG_FILE: &str = "config.toml";
pub const VERSION_FILE: &str = "VERSION";

pub fn version_string() -> String {
    format!("geobridge {}", geobridge_core::VERSION)
}

pub fn config_hash(resolved: &str) -> String {
    let digest = Sha256::digest(resolved.as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// Output root: explicit flag, then the config, then the env var.
pub fn output_root(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output_dir {
        return p.clone();
    }
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

pub struct RunDir {
    pub path: PathBuf,
    keep: bool,
}

impl RunDir {
    pub fn create(root: &Path, command: &str, cfg: &RunConfig) -> Result<Self> {
        let resolved = cfg.to_toml();
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let base = format!("{command}-{}-{stamp}", config_hash(&resolved));
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let mut path = root.join(&base);
        let mut k = 1;
        loop {
            match std::fs::create_dir(&path) {
                Ok(()) => break,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    path = root.join(format!("{base}-{k}"));
                    k += 1;
                }
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        let dir = RunDir { path, keep: false };
        dir.write(CONFIG_FILE, &resolved)?;
        dir.write(VERSION_FILE, &format!("{}\n", version_string()))?;
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, text: &str) -> Result<()> {
        let p = self.file(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    /// Keeps the directory once the command has succeeded.
    pub fn finish(mut self) -> PathBuf {
        self.keep = true;
        self.path.clone()
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if !self.keep {
            let _ = std::fs::remove_dir_all(&self.path);
        }
    }
}
