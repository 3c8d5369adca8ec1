use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use splitlm::{Error, Result};

/// Output directory of one run. Every file goes through here so that the
/// manifest can list it.
pub struct RunDir {
    root: PathBuf,
    files: BTreeSet<PathBuf>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(io(root))?;
        Ok(RunDir {
            root: root.to_path_buf(),
            files: BTreeSet::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(io(&path))?;
        self.register(&path)?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let text =
            serde_json::to_string_pretty(value).map_err(|e| Error::Contract(format!("cannot encode {name}: {e}")))?;
        self.write(name, text + "\n")
    }

    /// Records a file written by someone else; it must lie under the root.
    pub fn register(&mut self, path: &Path) -> Result<()> {
        let rel = path
            .strip_prefix(&self.root)
            .map_err(|_| Error::Contract(format!("{} lies outside the output directory", path.display())))?;
        self.files.insert(rel.to_path_buf());
        Ok(())
    }

    /// Writes `manifest.json`: every registered file with its byte length.
    pub fn finish(mut self) -> Result<PathBuf> {
        let mut entries = Vec::new();
        for rel in &self.files {
            let path = self.root.join(rel);
            let bytes = fs::metadata(&path).map_err(io(&path))?.len();
            entries.push(serde_json::json!({
                "path": rel.to_string_lossy().replace('\\', "/"),
                "bytes": bytes,
            }));
        }
        let text = serde_json::to_string_pretty(&serde_json::json!({ "files": entries })).expect("manifest serializes");
        let path = self.path("manifest.json");
        fs::write(&path, text + "\n").map_err(io(&path))?;
        self.files.clear();
        Ok(path)
    }
}
