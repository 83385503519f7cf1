//! `--config` files: `key=value` lines naming long flags of the chosen
//! subcommand. Flags given on the command line take precedence.

use std::ffi::OsString;
use std::path::Path;

use crate::{CliError, CliResult};

pub fn load(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("config line {}: expected key=value", n + 1)));
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", n + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Appends config entries as flags unless the command line already sets them.
/// `true` and `false` toggle boolean switches.
pub fn merge(argv: &[OsString], entries: &[(String, String)]) -> Vec<OsString> {
    let mut merged = argv.to_vec();
    for (key, value) in entries {
        let flag = format!("--{key}");
        let present = argv.iter().any(|a| {
            let a = a.to_string_lossy();
            a == flag || a.starts_with(&format!("{flag}="))
        });
        if present {
            continue;
        }
        match value.as_str() {
            "true" => merged.push(flag.into()),
            "false" => {}
            _ => merged.push(format!("{flag}={value}").into()),
        }
    }
    merged
}
