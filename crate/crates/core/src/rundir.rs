//! Run directory layout and atomic persistence. Every artifact is written
//! to a temporary sibling and renamed into place, so a killed process never
//! leaves a half-written file behind and runs can resume from the last
//! complete checkpoint.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunDirError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("run directory {0} is already initialized (config.json exists)")]
    AlreadyInitialized(PathBuf),
    #[error("{0} is not a run directory (missing config.json)")]
    NotARunDir(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunDirError + '_ {
    move |source| RunDirError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Handle to one experiment's output directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates the directory (parents included) for a fresh run. Refuses a
    /// directory that already holds a run, so reruns cannot silently clobber
    /// artifacts.
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, RunDirError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let dir = RunDir { root };
        if dir.config_path().exists() {
            return Err(RunDirError::AlreadyInitialized(dir.root));
        }
        Ok(dir)
    }

    /// Opens an existing run directory for resumption or reporting.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, RunDirError> {
        let root = root.into();
        let dir = RunDir { root };
        if !dir.config_path().is_file() {
            return Err(RunDirError::NotARunDir(dir.root));
        }
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn checkpoint_path(&self, iteration: u32) -> PathBuf {
        self.root.join(format!("checkpoint-{iteration:03}.json"))
    }

    pub fn report_path(&self, iteration: u32) -> PathBuf {
        self.root.join(format!("report-{iteration:03}.json"))
    }

    pub fn summary_path(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn predictions_path(&self) -> PathBuf {
        self.root.join("predictions.jsonl")
    }

    /// Serializes `value` as pretty JSON and writes it atomically.
    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), RunDirError> {
        write_json_atomic(path, value)
    }

    pub fn read_json<T: DeserializeOwned>(&self, path: &Path) -> Result<T, RunDirError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        serde_json::from_slice(&bytes).map_err(|source| RunDirError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Atomic write: temporary sibling first, then rename into place.
    pub fn write_bytes(&self, path: &Path, bytes: &[u8]) -> Result<(), RunDirError> {
        write_bytes_atomic(path, bytes)
    }

    /// Highest iteration with a checkpoint file, if any.
    pub fn latest_checkpoint_iteration(&self) -> Result<Option<u32>, RunDirError> {
        let mut latest = None;
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            let Some(rest) = name.strip_prefix("checkpoint-") else {
                continue;
            };
            let Some(number) = rest.strip_suffix(".json") else {
                continue;
            };
            if let Ok(n) = number.parse::<u32>() {
                latest = Some(latest.map_or(n, |m: u32| m.max(n)));
            }
        }
        Ok(latest)
    }
}

/// Atomic write usable outside a run directory: temporary sibling first,
/// then rename into place.
pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunDirError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Pretty-JSON counterpart of [`write_bytes_atomic`], newline-terminated.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), RunDirError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| RunDirError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    write_bytes_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Blob {
        n: u32,
        text: String,
    }

    #[test]
    fn create_then_open_round_trips_json() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::create(tmp.path().join("run")).unwrap();
        let blob = Blob {
            n: 7,
            text: "hello".to_string(),
        };
        dir.write_json(&dir.config_path(), &blob).unwrap();
        let reopened = RunDir::open(dir.root()).unwrap();
        let back: Blob = reopened.read_json(&reopened.config_path()).unwrap();
        assert_eq!(back, blob);
    }

    #[test]
    fn create_refuses_an_initialized_directory() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::create(tmp.path().join("run")).unwrap();
        dir.write_json(
            &dir.config_path(),
            &Blob {
                n: 1,
                text: String::new(),
            },
        )
        .unwrap();
        assert!(matches!(
            RunDir::create(dir.root()),
            Err(RunDirError::AlreadyInitialized(_))
        ));
    }

    #[test]
    fn open_requires_a_config_snapshot() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(
            RunDir::open(tmp.path()),
            Err(RunDirError::NotARunDir(_))
        ));
    }

    #[test]
    fn latest_checkpoint_scans_numbered_files() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::create(tmp.path().join("run")).unwrap();
        assert_eq!(dir.latest_checkpoint_iteration().unwrap(), None);
        for i in [0u32, 2, 1] {
            dir.write_json(
                &dir.checkpoint_path(i),
                &Blob {
                    n: i,
                    text: String::new(),
                },
            )
            .unwrap();
        }
        assert_eq!(dir.latest_checkpoint_iteration().unwrap(), Some(2));
        // Stray files do not confuse the scan.
        std::fs::write(dir.root().join("checkpoint-abc.json"), b"{}").unwrap();
        std::fs::write(dir.root().join("notes.txt"), b"hi").unwrap();
        assert_eq!(dir.latest_checkpoint_iteration().unwrap(), Some(2));
    }

    #[test]
    fn writes_leave_no_temporaries_behind() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::create(tmp.path().join("run")).unwrap();
        dir.write_json(
            &dir.summary_path(),
            &Blob {
                n: 3,
                text: "x".to_string(),
            },
        )
        .unwrap();
        let names: Vec<String> = std::fs::read_dir(dir.root())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["summary.json"]);
    }
}
