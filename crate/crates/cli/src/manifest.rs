use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgMatches, Command};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliResult;

/// Replay record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: BTreeMap<String, Vec<String>>,
    pub seed: Option<u64>,
    /// SHA-256 of each input file.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub version: String,
    pub duration_seconds: f64,
}

pub struct Recorder {
    command: String,
    args: BTreeMap<String, Vec<String>>,
    started: Instant,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    seed: Option<u64>,
}

impl Recorder {
    /// Records every argument of `command` that has a value, defaults included.
    pub fn new(command: &Command, matches: &ArgMatches) -> Self {
        let mut args = BTreeMap::new();
        for arg in command.get_arguments() {
            let id = arg.get_id().as_str();
            if let Ok(Some(raw)) = matches.try_get_raw(id) {
                let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
                args.insert(id.to_string(), vals);
            }
        }
        Self {
            command: command.get_name().to_string(),
            args,
            started: Instant::now(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            seed: None,
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = std::fs::read(path)?;
        self.inputs
            .insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Writes the manifest to `path` and returns it.
    pub fn finish(self, path: PathBuf) -> CliResult<PathBuf> {
        let m = RunManifest {
            command: self.command,
            args: self.args,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        std::fs::write(&path, serde_json::to_string_pretty(&m)?)?;
        Ok(path)
    }
}

/// `out.json` → `out.json.manifest.json`.
pub fn beside(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
