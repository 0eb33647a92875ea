//! `--config FILE`: a JSON object whose keys are flag names. Its entries are
//! spliced in after the subcommand unless the flag is already on the command
//! line, so explicit flags always win.

use std::ffi::OsString;
use std::path::Path;

use serde_json::Value;

use crate::CliError;

const VALUE_GLOBALS: [&str; 2] = ["--config", "--seed"];

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            return Some(v.into());
        }
    }
    None
}

fn subcommand_position(argv: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if VALUE_GLOBALS.contains(&a.as_ref()) {
            i += 2;
        } else if a.starts_with('-') {
            i += 1;
        } else {
            return Some(i);
        }
    }
    None
}

fn scalar(key: &str, v: &Value) -> Result<String, CliError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(CliError::usage(
            "bad_config",
            format!("config key {key:?}: expected a string, number, boolean or list"),
        )),
    }
}

pub fn apply(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage("bad_config", format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::usage("bad_config", format!("{}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(CliError::usage("bad_config", "config must be a JSON object"));
    };
    let Some(at) = subcommand_position(&argv) else {
        return Ok(argv);
    };

    let mut extra: Vec<OsString> = Vec::new();
    for (key, v) in &map {
        let flag = format!("--{}", key.replace('_', "-"));
        let given = argv[1..].iter().any(|a| {
            let a = a.to_string_lossy();
            a == flag || a.starts_with(&format!("{flag}="))
        });
        if given || flag == "--config" {
            continue;
        }
        match v {
            Value::Bool(true) => extra.push(flag.into()),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                for item in items {
                    extra.push(flag.clone().into());
                    extra.push(scalar(key, item)?.into());
                }
            }
            other => {
                extra.push(flag.into());
                extra.push(scalar(key, other)?.into());
            }
        }
    }
    let mut out = argv;
    out.splice(at + 1..at + 1, extra);
    Ok(out)
}
