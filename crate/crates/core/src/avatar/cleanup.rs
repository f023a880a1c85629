//! Temporary media bookkeeping and session cleanup.

use std::collections::BTreeSet;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tracing::warn;

/// Files created for one session, plus the session's own directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TempResourceRegistry {
    session_id: String,
    root: Option<PathBuf>,
    paths: BTreeSet<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CleanupReport {
    pub deleted: Vec<PathBuf>,
    pub already_absent: Vec<PathBuf>,
    /// Objects that survived a retry, with the last error.
    pub failed: Vec<(PathBuf, String)>,
}

impl CleanupReport {
    pub fn deleted_count(&self) -> usize {
        self.deleted.len()
    }
}

impl TempResourceRegistry {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            root: None,
            paths: BTreeSet::new(),
        }
    }

    /// Registry whose directory is removed wholesale on cleanup, catching
    /// anything written there without being registered.
    pub fn with_root(session_id: impl Into<String>, root: impl Into<PathBuf>) -> Self {
        Self {
            root: Some(root.into()),
            ..Self::new(session_id)
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn register(&mut self, path: impl Into<PathBuf>) {
        self.paths.insert(path.into());
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.paths.iter().map(PathBuf::as_path)
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

fn remove(path: &Path) -> std::io::Result<()> {
    match fs::symlink_metadata(path) {
        Ok(meta) if meta.is_dir() => fs::remove_dir_all(path),
        Ok(_) => fs::remove_file(path),
        Err(e) => Err(e),
    }
}

fn remove_with_retry(path: &Path) -> Result<bool, std::io::Error> {
    match remove(path) {
        Ok(()) => Ok(true),
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(false),
        Err(first) => {
            warn!("cleanup of {} failed ({first}); retrying", path.display());
            match remove(path) {
                Ok(()) => Ok(true),
                Err(e) if e.kind() == ErrorKind::NotFound => Ok(false),
                Err(e) => Err(e),
            }
        }
    }
}

/// Deletes every registered object and the session directory. Idempotent:
/// a second call deletes nothing. Failures are reported, never raised.
pub fn cleanup_session(registry: &mut TempResourceRegistry) -> CleanupReport {
    let mut report = CleanupReport::default();
    for path in std::mem::take(&mut registry.paths) {
        match remove_with_retry(&path) {
            Ok(true) => report.deleted.push(path),
            Ok(false) => report.already_absent.push(path),
            Err(e) => {
                warn!("could not delete {}: {e}", path.display());
                report.failed.push((path, e.to_string()));
            }
        }
    }
    if let Some(root) = &registry.root {
        // Unregistered leftovers count as deleted too.
        if let Ok(entries) = fs::read_dir(root) {
            for entry in entries.flatten() {
                let path = entry.path();
                if let Ok(true) = remove_with_retry(&path) {
                    report.deleted.push(path);
                }
            }
        }
        if let Err(e) = fs::remove_dir(root) {
            if e.kind() != ErrorKind::NotFound {
                warn!("could not remove session directory {}: {e}", root.display());
                report.failed.push((root.clone(), e.to_string()));
            }
        }
    }
    report
}
