//! Output directories and content hashes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use sharessm::data::{Dataset, Targets};

use crate::error::CliResult;

/// SHA-256 of `blob <len>\0<content>`, as git computes object ids.
pub fn git_blob_sha256(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Canonical byte image of an in-memory dataset: for every sample its shape
/// and little-endian values, then the targets.
pub fn dataset_bytes(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    let put = |a: &ndarray::Array2<f64>, out: &mut Vec<u8>| {
        out.extend_from_slice(&(a.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(a.ncols() as u64).to_le_bytes());
        for v in a.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for x in data.inputs() {
        put(x, &mut out);
    }
    match data.targets() {
        Targets::Labels(l) => l.iter().for_each(|&c| out.extend_from_slice(&(c as u64).to_le_bytes())),
        Targets::Sequences(s) => s.iter().for_each(|y| put(y, &mut out)),
    }
    out
}

/// `(label, hash)` lines of `inputs.sha256`.
#[derive(Debug, Default, Clone)]
pub struct InputHashes(Vec<(String, String)>);

impl InputHashes {
    pub fn add_bytes(&mut self, label: impl Into<String>, bytes: &[u8]) {
        self.0.push((label.into(), git_blob_sha256(bytes)));
    }

    pub fn add_file(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path).map_err(|e| crate::error::CliError::Usage(format!("{}: {e}", path.display())))?;
        self.add_bytes(path.display().to_string(), &bytes);
        Ok(())
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|(label, h)| format!("{h}  {label}\n")).collect()
    }
}

/// Every file a command writes goes through here.
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    /// Creates the directory and writes the three provenance files.
    pub fn create(root: &Path, config: &str, inputs: &InputHashes, seed: Option<u64>) -> CliResult<Self> {
        fs::create_dir_all(root)?;
        let dir = Self {
            root: root.to_path_buf(),
        };
        dir.write("config.toml", config)?;
        dir.write("inputs.sha256", inputs.render())?;
        dir.write("seed", seed.map_or_else(|| "none\n".to_string(), |s| format!("{s}\n")))?;
        Ok(dir)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        fs::write(self.root.join(name), contents)?;
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}
