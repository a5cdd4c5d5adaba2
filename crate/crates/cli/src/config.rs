//! `--config` files: flat `key = value` lines that stand in for flags.
//!
//! Each key becomes `--key` (underscores read as dashes) and is spliced in
//! right after the subcommand name, ahead of the flags actually typed, so a
//! flag given on the command line overrides the file.

use std::ffi::OsString;
use std::path::Path;

use toml::Value;

/// Rewrites `args` with the flags from the `--config` file, if one is given.
pub fn expand(args: Vec<OsString>, subcommands: &[&str]) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let flags = flags_from(&text).map_err(|e| format!("config {}: {e}", path.display()))?;
    let at = args
        .iter()
        .position(|a| a.to_str().is_some_and(|a| subcommands.contains(&a)))
        .map_or(args.len(), |i| i + 1);
    let mut out = args[..at].to_vec();
    out.extend(flags.into_iter().map(OsString::from));
    out.extend_from_slice(&args[at..]);
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<std::path::PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let a = a.to_str()?;
        if a == "--" {
            return None;
        }
        if a == "--config" {
            return it.next().map(|p| Path::new(p).to_path_buf());
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Command-line tokens for every entry of a flat key-value document.
pub fn flags_from(text: &str) -> Result<Vec<String>, String> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.message().to_string())?;
    let mut out = Vec::new();
    for (key, value) in table {
        if key == "config" || key == "threads" {
            return Err(format!("'{key}' cannot be set from a config file"));
        }
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            Value::Boolean(true) => out.push(flag),
            Value::Boolean(false) => {}
            Value::Array(items) => {
                out.push(flag);
                for item in items {
                    out.push(scalar(&key, item)?);
                }
            }
            other => {
                out.push(flag);
                out.push(scalar(&key, other)?);
            }
        }
    }
    Ok(out)
}

fn scalar(key: &str, v: Value) -> Result<String, String> {
    match v {
        Value::String(s) => Ok(s),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(format!("{f:?}")),
        other => Err(format!("'{key}' must be a string, number or list of them, got {}", other.type_str())),
    }
}
