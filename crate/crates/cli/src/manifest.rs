//! Run manifests and all-or-nothing output writing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(CliError::io(format!("read {}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Everything needed to repeat a run. Carries no timestamps, so identical
/// runs produce identical manifests.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub settings: Vec<(String, String)>,
    /// `(path as given, sha256)`.
    pub inputs: Vec<(String, String)>,
    pub columns: Vec<String>,
    /// `(file name, sha256)`, filled in when outputs are written.
    pub outputs: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            ..Default::default()
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path)?;
        self.inputs.push((path.display().to_string(), digest));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command={}", self.command);
        let _ = writeln!(s, "taildep_version={}", env!("CARGO_PKG_VERSION"));
        for (k, v) in &self.settings {
            let _ = writeln!(s, "config.{k}={v}");
        }
        for (p, d) in &self.inputs {
            let _ = writeln!(s, "input.sha256={d} {p}");
        }
        if !self.columns.is_empty() {
            let _ = writeln!(s, "columns={}", self.columns.join(","));
        }
        for (p, d) in &self.outputs {
            let _ = writeln!(s, "output.sha256={d} {p}");
        }
        s
    }
}

/// Output files held in memory until the whole run has succeeded.
#[derive(Debug, Clone)]
pub struct OutputSet {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl OutputSet {
    pub fn new(dir: &Path) -> Self {
        OutputSet {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, contents: String) {
        self.files.push((name.into(), contents));
    }

    /// Writes every file plus the manifest. On failure the files already
    /// written by this call are removed.
    pub fn commit(self, mut manifest: RunManifest) -> Result<Vec<PathBuf>> {
        let created_dir = !self.dir.exists();
        fs::create_dir_all(&self.dir).map_err(CliError::io(format!("create {}", self.dir.display())))?;
        manifest.outputs = self
            .files
            .iter()
            .map(|(n, c)| (n.clone(), sha256_hex(c.as_bytes())))
            .collect();
        let mut all = self.files;
        all.push((MANIFEST_FILE.to_string(), manifest.render()));
        let mut written = Vec::new();
        for (name, contents) in &all {
            let path = self.dir.join(name);
            if let Err(e) = fs::write(&path, contents) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                if created_dir {
                    let _ = fs::remove_dir(&self.dir);
                }
                return Err(CliError::Io {
                    context: format!("write {}", path.display()),
                    source: e,
                });
            }
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_abc() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn commit_writes_files_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let mut set = OutputSet::new(&out);
        set.add("a.csv", "x\n1\n".into());
        let mut m = RunManifest::new("fit");
        m.settings.push(("seed".into(), "3".into()));
        m.columns = vec!["A".into(), "B".into()];
        let paths = set.commit(m).unwrap();
        assert_eq!(paths.len(), 2);
        let text = fs::read_to_string(out.join(MANIFEST_FILE)).unwrap();
        assert!(text.contains("command=fit"));
        assert!(text.contains("config.seed=3"));
        assert!(text.contains("columns=A,B"));
        assert!(text.contains(&format!("output.sha256={} a.csv", sha256_hex(b"x\n1\n"))));
    }

    #[test]
    fn failed_commit_leaves_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let mut set = OutputSet::new(&out);
        set.add("a.csv", "1\n".into());
        set.add("missing/b.csv", "2\n".into());
        assert!(set.commit(RunManifest::new("x")).is_err());
        assert!(!out.exists());
    }
}
