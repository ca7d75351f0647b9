//! `--config` files: `key=value` lines applied as flags of the subcommand,
//! placed before the explicit flags so the latter win.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Command;

use crate::{CliError, CliResult};

fn config_path(argv: &[OsString]) -> CliResult<Option<PathBuf>> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return match it.next() {
                Some(p) => Ok(Some(PathBuf::from(p))),
                None => Err(CliError::Usage("--config needs a file path".into())),
            };
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Ok(Some(PathBuf::from(p)));
        }
    }
    Ok(None)
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", n + 1)))?;
        out.push((k.trim().trim_start_matches("--").to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn inject_config(cmd: &Command, argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let Some(path) = config_path(&argv)? else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let entries = parse_config(&text)?;
    let Some(pos) = argv
        .iter()
        .position(|a| cmd.find_subcommand(a).is_some())
    else {
        return Ok(argv);
    };
    let sub = cmd.find_subcommand(&argv[pos]).expect("found above");
    let mut injected = Vec::new();
    for (key, value) in entries {
        let arg = sub
            .get_arguments()
            .chain(cmd.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| CliError::Usage(format!("config key `{key}` is not a flag of `{}`", sub.get_name())))?;
        if arg.get_id() == "config" {
            continue;
        }
        if arg.get_action().takes_values() {
            injected.push(OsString::from(format!("--{key}={value}")));
        } else {
            match value.as_str() {
                "true" | "yes" | "1" => injected.push(OsString::from(format!("--{key}"))),
                "false" | "no" | "0" => {}
                _ => return Err(CliError::Usage(format!("config key `{key}` expects true or false"))),
            }
        }
    }
    let mut out = argv;
    out.splice(pos + 1..pos + 1, injected);
    Ok(out)
}
