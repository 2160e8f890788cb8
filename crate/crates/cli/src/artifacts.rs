use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use sarstereo::raster::Raster;

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output files held in memory until every one of them is ready.
#[derive(Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
    inputs: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a C,
    inputs: &'a BTreeMap<String, String>,
    outputs: BTreeMap<&'a str, String>,
}

impl Artifacts {
    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    pub fn add_raster(&mut self, name: &str, r: &Raster) {
        self.add(name, r.encode());
        if !r.sidecar.is_empty() {
            let json = serde_json::to_string_pretty(&r.sidecar).expect("sidecar serializes");
            self.add(&format!("{name}.json"), json);
        }
    }

    /// Reads an input file and records its hash for the manifest.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn load_raster(&mut self, path: &Path) -> Result<Raster, CliError> {
        let bytes = self.read_input(path)?;
        let mut r = Raster::decode(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let sc = sarstereo::raster::sidecar_path(path);
        if sc.exists() {
            let text = self.read_input(&sc)?;
            r.sidecar = serde_json::from_slice(&text).map_err(|e| CliError::Data(format!("{}: {e}", sc.display())))?;
        }
        Ok(r)
    }

    /// Writes every file to a temporary name, then renames them into place
    /// and finishes with `manifest.json`. Nothing is left behind on failure.
    pub fn commit(mut self, dir: &Path, command: &str, config: &impl Serialize) -> Result<(), CliError> {
        let outputs = self.files.iter().map(|(n, b)| (n.as_str(), sha256_hex(b))).collect();
        let manifest = Manifest {
            tool: "sarstereo",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            inputs: &self.inputs,
            outputs,
        };
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        self.files.push(("manifest.json".into(), json.into_bytes()));

        let io = |p: &Path, e: std::io::Error| CliError::Data(format!("cannot write {}: {e}", p.display()));
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let pid = std::process::id();
        let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
        let cleanup = |staged: &[(PathBuf, PathBuf)]| {
            for (tmp, _) in staged {
                let _ = fs::remove_file(tmp);
            }
        };
        for (name, bytes) in &self.files {
            let dest = dir.join(name);
            let tmp = dir.join(format!(".{name}.tmp{pid}"));
            let res = (|| {
                let mut f = fs::File::create(&tmp)?;
                f.write_all(bytes)?;
                f.sync_all()
            })();
            staged.push((tmp.clone(), dest));
            if let Err(e) = res {
                cleanup(&staged);
                return Err(io(&tmp, e));
            }
        }
        for (i, (tmp, dest)) in staged.iter().enumerate() {
            if let Err(e) = fs::rename(tmp, dest) {
                cleanup(&staged[i..]);
                return Err(io(dest, e));
            }
        }
        Ok(())
    }
}
