use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct OutputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub version: &'static str,
    pub wall_clock_ms: u128,
    pub outputs: Vec<OutputDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects the artifacts of one invocation and writes them with a manifest.
pub struct Sink {
    out: Option<PathBuf>,
    manifest: Option<PathBuf>,
    started: Instant,
    outputs: Vec<OutputDigest>,
}

impl Sink {
    pub fn new(out: Option<PathBuf>, manifest: Option<PathBuf>) -> Self {
        Sink { out, manifest, started: Instant::now(), outputs: Vec::new() }
    }

    /// Writes the primary artifact to `--out`, or to stdout.
    pub fn emit(&mut self, bytes: &[u8]) -> io::Result<()> {
        match self.out.clone() {
            Some(path) => self.write_file(&path, bytes),
            None => {
                let mut stdout = io::stdout().lock();
                stdout.write_all(bytes)?;
                stdout.flush()?;
                self.outputs.push(OutputDigest { path: "-".into(), sha256: sha256_hex(bytes) });
                Ok(())
            }
        }
    }

    pub fn write_file(&mut self, path: &Path, bytes: &[u8]) -> io::Result<()> {
        fs::write(path, bytes)?;
        self.outputs.push(OutputDigest { path: path.display().to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    /// Manifest path: `--manifest`, else `<out>.manifest.json` when writing to a file.
    fn manifest_path(&self) -> Option<PathBuf> {
        self.manifest.clone().or_else(|| {
            self.out.as_ref().map(|p| {
                let mut s = p.clone().into_os_string();
                s.push(".manifest.json");
                PathBuf::from(s)
            })
        })
    }

    pub fn finish(self, subcommand: &str, config: Value, seed: Option<u64>) -> io::Result<()> {
        let Some(path) = self.manifest_path() else {
            return Ok(());
        };
        let m = RunManifest {
            subcommand: subcommand.to_owned(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION"),
            wall_clock_ms: self.started.elapsed().as_millis(),
            outputs: self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&m).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(path, text)
    }
}
