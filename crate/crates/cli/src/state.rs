//! State file handling: one engine snapshot per file, guarded by an
//! exclusive lock on a sibling `.lock` file.

use std::fs::{File, OpenOptions, TryLockError};
use std::path::{Path, PathBuf};

use kupenstack::engine::{Engine, EngineConfig};

use crate::Failure;

pub const DEFAULT_STATE_FILE: &str = "kupenstack.state";

pub struct StateFile {
    path: PathBuf,
    // held for the lifetime of the command
    _lock: File,
}

impl StateFile {
    pub fn open(path: &Path) -> Result<StateFile, Failure> {
        let lock_path = lock_path(path);
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(|e| Failure::generic(format!("{}: {e}", lock_path.display())))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => {
                return Err(Failure::generic(format!(
                    "state file {} is in use by another kupenctl process",
                    path.display()
                )))
            }
            Err(TryLockError::Error(e)) => return Err(Failure::generic(format!("{}: {e}", lock_path.display()))),
        }
        Ok(StateFile {
            path: path.to_owned(),
            _lock: lock,
        })
    }

    /// The saved engine, or a fresh one when no state exists yet.
    pub fn load(&self) -> Result<Engine, Failure> {
        let engine = if self.path.exists() {
            Engine::load(&self.path)
        } else {
            Engine::new(EngineConfig::default())
        };
        engine.map_err(|e| Failure::generic(e.to_string()))
    }

    /// Write to a temp file and rename so a crash never leaves half a state.
    pub fn save(&self, engine: &Engine) -> Result<(), Failure> {
        let tmp = self.path.with_extension("state.tmp");
        engine.save(&tmp).map_err(|e| Failure::generic(e.to_string()))?;
        std::fs::rename(&tmp, &self.path).map_err(|e| Failure::generic(format!("{}: {e}", self.path.display())))
    }
}

fn lock_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".lock");
    path.with_file_name(name)
}
