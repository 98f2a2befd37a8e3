//! Atomic artifact writes and the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunFile;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub name: String,
    pub pass: bool,
}

/// Enough to re-run: the resolved configuration, the command and the seed.
/// Timings vary between runs; everything listed under `artifacts` does not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: RunFile,
    pub stages: Vec<StageTiming>,
    pub gates: Vec<GateResult>,
    /// File name to SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn read(dir: &Path) -> CliResult<Manifest> {
        let p = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&p).map_err(|_| CliError::MissingArtifact(p.clone()))?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!("{}:{}:{}: {e}", p.display(), e.line(), e.column()))
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes files into one run directory, each through a temporary file that
/// is renamed into place, and records their checksums.
pub struct ArtifactWriter {
    dir: PathBuf,
    checksums: BTreeMap<String, String>,
    stages: Vec<StageTiming>,
}

impl ArtifactWriter {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::numeric("write", format!("{}: {e}", dir.display())))?;
        Ok(ArtifactWriter {
            dir: dir.to_path_buf(),
            checksums: BTreeMap::new(),
            stages: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn checksums(&self) -> &BTreeMap<String, String> {
        &self.checksums
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(&self.dir, name, bytes)?;
        self.checksums.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut s =
            serde_json::to_string_pretty(value).map_err(|e| CliError::numeric("write", e))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// Times `f` as stage `name`.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let v = f();
        self.record(name, t0.elapsed().as_secs_f64());
        v
    }

    pub fn record(&mut self, name: &str, seconds: f64) {
        self.stages.push(StageTiming {
            name: name.to_string(),
            seconds,
        });
    }

    /// Writes `manifest.json`, keeping checksums of artifacts an earlier
    /// command left in the directory when `merge` is set.
    pub fn finish(
        self,
        command: &str,
        config: &RunFile,
        gates: Vec<GateResult>,
        merge: Option<&Manifest>,
    ) -> CliResult<Manifest> {
        let mut artifacts = merge.map(|m| m.artifacts.clone()).unwrap_or_default();
        artifacts.extend(self.checksums);
        let m = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.run.seed,
            config: config.clone(),
            stages: self.stages,
            gates,
            artifacts,
        };
        let mut s = serde_json::to_string_pretty(&m).map_err(|e| CliError::numeric("write", e))?;
        s.push('\n');
        write_atomic(&self.dir, MANIFEST, s.as_bytes())?;
        Ok(m)
    }
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<()> {
    let fail = |e: std::io::Error| CliError::numeric("write", format!("{name}: {e}"));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(dir.join(name)).map_err(|e| fail(e.error))?;
    Ok(())
}

/// CSV text with a header row; values use Rust's shortest round-trip form.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = header.join(",");
        buf.push('\n');
        Csv { buf }
    }

    pub fn row(&mut self, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                self.buf.push(',');
            }
            let _ = write!(self.buf, "{v}");
        }
        self.buf.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf.into_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_are_atomic_and_checksummed() {
        let d = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::create(d.path()).unwrap();
        w.write("a.txt", b"abc").unwrap();
        assert_eq!(std::fs::read(d.path().join("a.txt")).unwrap(), b"abc");
        assert_eq!(
            w.checksums()["a.txt"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        // Only the artifact is left behind.
        assert_eq!(std::fs::read_dir(d.path()).unwrap().count(), 1);
    }

    #[test]
    fn csv_format() {
        let mut c = Csv::new(&["x", "y"]);
        c.row(&[0.5, f64::NAN]);
        assert_eq!(String::from_utf8(c.into_bytes()).unwrap(), "x,y\n0.5,NaN\n");
    }
}
