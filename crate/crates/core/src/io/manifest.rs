//! Atomic output writing and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::IoError;

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub files: Vec<FileRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub started_unix_seconds: f64,
    pub wall_clock_seconds: f64,
    pub stages: Vec<StageRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self, IoError> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|e| IoError::file(&path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| IoError::parse(&path.display().to_string(), e.line(), e.to_string()))
    }

    /// Files whose current contents no longer match the recorded checksum.
    pub fn mismatches(&self, dir: &Path) -> Vec<String> {
        self.stages
            .iter()
            .flat_map(|s| &s.files)
            .filter(|f| {
                fs::read(dir.join(&f.path))
                    .map(|b| sha256_hex(&b) != f.sha256)
                    .unwrap_or(true)
            })
            .map(|f| f.path.clone())
            .collect()
    }
}

/// Output directory whose files are written atomically and removed again
/// unless the run is committed with a manifest.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    stages: Vec<StageRecord>,
    written: Vec<PathBuf>,
    committed: bool,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, IoError> {
        fs::create_dir_all(root).map_err(|e| IoError::file(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            stages: Vec::new(),
            written: Vec::new(),
            committed: false,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn begin_stage(&mut self, name: &str) {
        self.stages.push(StageRecord {
            stage: name.to_string(),
            files: Vec::new(),
        });
    }

    fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, IoError> {
        let target = self.root.join(name);
        let tmp = self.root.join(format!(".{name}.tmp"));
        fs::write(&tmp, bytes).map_err(|e| IoError::file(&tmp, e))?;
        fs::rename(&tmp, &target).map_err(|e| {
            let _ = fs::remove_file(&tmp);
            IoError::file(&target, e)
        })?;
        Ok(target)
    }

    /// Writes `name` and records its checksum under the current stage.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), IoError> {
        if self.stages.is_empty() {
            self.begin_stage("output");
        }
        let path = self.write_atomic(name, contents.as_bytes())?;
        self.written.push(path);
        self.stages.last_mut().unwrap().files.push(FileRecord {
            path: name.to_string(),
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    pub fn stages(&self) -> &[StageRecord] {
        &self.stages
    }

    /// Writes the manifest last and keeps every output.
    pub fn commit(mut self, mut manifest: RunManifest) -> Result<PathBuf, IoError> {
        manifest.stages = std::mem::take(&mut self.stages);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
        let path = self.write_atomic(MANIFEST_NAME, text.as_bytes())?;
        self.committed = true;
        Ok(path)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> RunManifest {
        RunManifest {
            tool: "t".into(),
            version: "0".into(),
            command: "sweep".into(),
            seed: Some(1),
            config: serde_json::json!({"seed": 1}),
            started_unix_seconds: 0.0,
            wall_clock_seconds: 0.0,
            stages: Vec::new(),
            warnings: Vec::new(),
        }
    }

    #[test]
    fn uncommitted_outputs_are_removed() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut out = OutputDir::create(dir.path()).unwrap();
            out.write("a.csv", "1\n").unwrap();
            assert!(dir.path().join("a.csv").exists());
        }
        assert!(!dir.path().join("a.csv").exists());
    }

    #[test]
    fn committed_manifest_checksums_verify() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.begin_stage("sweep");
        out.write("a.csv", "1\n").unwrap();
        out.write("b.csv", "2\n").unwrap();
        out.commit(manifest()).unwrap();
        let m = RunManifest::load(dir.path()).unwrap();
        assert_eq!(m.stages[0].files.len(), 2);
        assert!(m.mismatches(dir.path()).is_empty());
        fs::write(dir.path().join("b.csv"), "3\n").unwrap();
        assert_eq!(m.mismatches(dir.path()), vec!["b.csv".to_string()]);
        assert!(!dir.path().join(".a.csv.tmp").exists());
    }
}
