//! Atomic file output and run manifests.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

/// Writes `path` through a temp file in the same directory, renamed into
/// place only after `body` succeeds.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let tmp = NamedTempFile::new_in(dir).with_context(|| format!("cannot create a temp file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Writes to `path` atomically, or to stdout when `path` is `None`.
pub fn write_to(path: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, body),
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock)?;
            lock.flush()?;
            Ok(())
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn digest(path: &Path) -> Result<FileDigest> {
    let data = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let hash = Sha256::digest(&data);
    let sha256 = hash.iter().map(|b| format!("{b:02x}")).collect();
    Ok(FileDigest { path: path.display().to_string(), bytes: data.len() as u64, sha256 })
}

/// Everything needed to repeat a run: the arguments, resolved parameters and
/// digests of what went in and came out.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub parameters: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub struct Run {
    pub command: &'static str,
    pub seed: Option<u64>,
    pub parameters: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(command: &'static str) -> Self {
        Run { command, seed: None, parameters: serde_json::Value::Null, inputs: Vec::new(), outputs: Vec::new() }
    }

    pub fn params(mut self, p: impl Serialize) -> Self {
        self.parameters = serde_json::to_value(p).unwrap_or(serde_json::Value::Null);
        self
    }

    pub fn seed(mut self, s: u64) -> Self {
        self.seed = Some(s);
        self
    }

    pub fn input(mut self, p: &Path) -> Self {
        self.inputs.push(p.to_path_buf());
        self
    }

    pub fn output(mut self, p: Option<&Path>) -> Self {
        self.outputs.extend(p.map(Path::to_path_buf));
        self
    }

    /// Manifest goes to `explicit`, else next to the first output file. Runs
    /// that only wrote to stdout get none unless asked.
    pub fn finish(self, explicit: Option<&Path>, jobs: Option<usize>) -> Result<()> {
        let target = match (explicit, self.outputs.first()) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(o)) => {
                let mut s = o.as_os_str().to_owned();
                s.push(".manifest.json");
                PathBuf::from(s)
            }
            (None, None) => return Ok(()),
        };
        let m = Manifest {
            tool: "fuma",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command.to_string(),
            argv: std::env::args().skip(1).collect(),
            seed: self.seed,
            jobs,
            parameters: self.parameters,
            inputs: self.inputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
            outputs: self.outputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
        };
        write_atomic(&target, |w| {
            serde_json::to_writer_pretty(&mut *w, &m)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_partial_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        let r = write_atomic(&p, |w| {
            w.write_all(b"half")?;
            anyhow::bail!("boom")
        });
        assert!(r.is_err());
        assert!(!p.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
        write_atomic(&p, |w| Ok(w.write_all(b"done")?)).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "done");
    }

    #[test]
    fn digest_is_sha256() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        fs::write(&p, b"abc").unwrap();
        let d = digest(&p).unwrap();
        assert_eq!(d.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(d.bytes, 3);
    }
}
