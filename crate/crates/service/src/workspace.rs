use std::path::{Path, PathBuf};

use crate::WORKSPACE_ENV;

/// Files a session can export, with their media types.
pub const ARTIFACTS: &[(&str, &str)] = &[
    ("session.json", "application/json"),
    ("sample.json", "application/json"),
    ("profile.toml", "application/toml"),
    ("scan.json", "application/json"),
    ("scan.csv", "text/csv"),
    ("scan.meta.json", "application/json"),
    ("hbt.json", "application/json"),
    ("hbt.csv", "text/csv"),
    ("fit.json", "application/json"),
    ("tags_a.pbtg", "application/octet-stream"),
    ("tags_b.pbtg", "application/octet-stream"),
];

pub fn artifact_content_type(name: &str) -> Option<&'static str> {
    ARTIFACTS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Flat-file store: `<root>/sessions/<id>/<artifact>`.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    /// Explicit directory, else `$PHOTONBENCH_WORKSPACE`, else
    /// `./photonbench-data`.
    pub fn resolve(explicit: Option<PathBuf>) -> Self {
        let root = explicit
            .or_else(|| std::env::var_os(WORKSPACE_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("photonbench-data"));
        Workspace::new(root)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    pub fn write(&self, id: &str, artifact: &str, bytes: &[u8]) -> std::io::Result<()> {
        debug_assert!(artifact_content_type(artifact).is_some(), "{artifact}");
        let dir = self.session_dir(id);
        std::fs::create_dir_all(&dir)?;
        // write-then-rename so a concurrent export never sees a torn file
        let tmp = dir.join(format!(".{artifact}.tmp"));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(tmp, dir.join(artifact))
    }

    /// `None` for names outside [`ARTIFACTS`] or files not written yet.
    pub fn read(&self, id: &str, artifact: &str) -> std::io::Result<Option<Vec<u8>>> {
        if artifact_content_type(artifact).is_none() {
            return Ok(None);
        }
        match std::fs::read(self.session_dir(id).join(artifact)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn remove(&self, id: &str, artifact: &str) -> std::io::Result<()> {
        match std::fs::remove_file(self.session_dir(id).join(artifact)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_artifacts_are_not_served() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        std::fs::create_dir_all(ws.session_dir("s")).unwrap();
        std::fs::write(dir.path().join("secret"), b"x").unwrap();
        assert_eq!(ws.read("s", "../../secret").unwrap(), None);
        ws.write("s", "scan.csv", b"1,2\n").unwrap();
        assert_eq!(ws.read("s", "scan.csv").unwrap().unwrap(), b"1,2\n");
        assert_eq!(ws.read("s", "hbt.json").unwrap(), None);
    }
}
