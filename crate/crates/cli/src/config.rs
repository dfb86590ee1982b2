//! Optional TOML defaults. Each subcommand reads the table of the same name;
//! keys are flag names and command-line flags override them.
//!
//! ```toml
//! [gen]
//! count = 20
//! frames = 30
//!
//! [track]
//! ablate = "no-propagation"
//! ```

use std::ffi::OsString;
use std::path::PathBuf;

use crate::Failure;

/// Removes `--config FILE` from `args` and splices the matching table in
/// right after the subcommand name.
pub fn apply(mut args: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let Some(path) = take_config(&mut args)? else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let doc: toml::Table = text
        .parse()
        .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    // first bare word is the subcommand
    let Some(pos) = args.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')) else {
        return Ok(args);
    };
    let pos = pos + 1;
    let sub = args[pos].to_string_lossy().into_owned();
    let Some(table) = doc.get(&sub) else {
        return Ok(args);
    };
    let table = table
        .as_table()
        .ok_or_else(|| Failure::Invalid(format!("config entry '{sub}' is not a table")))?;
    let mut extra = Vec::new();
    for (key, value) in table {
        flag_args(key, value, &mut extra)?;
    }
    args.splice(pos + 1..pos + 1, extra);
    Ok(args)
}

fn take_config(args: &mut Vec<OsString>) -> Result<Option<PathBuf>, Failure> {
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy().into_owned();
        if a == "--" {
            break;
        }
        if a == "--config" {
            if i + 1 >= args.len() {
                return Err(Failure::Invalid("--config needs a file".into()));
            }
            let p = PathBuf::from(args.remove(i + 1));
            args.remove(i);
            return Ok(Some(p));
        }
        if let Some(p) = a.strip_prefix("--config=") {
            let p = PathBuf::from(p);
            args.remove(i);
            return Ok(Some(p));
        }
        i += 1;
    }
    Ok(None)
}

fn flag_args(key: &str, value: &toml::Value, out: &mut Vec<OsString>) -> Result<(), Failure> {
    let flag = format!("--{}", key.replace('_', "-"));
    match value {
        toml::Value::Boolean(true) => out.push(flag.into()),
        toml::Value::Boolean(false) => {}
        toml::Value::String(s) => out.push(format!("{flag}={s}").into()),
        toml::Value::Integer(n) => out.push(format!("{flag}={n}").into()),
        toml::Value::Float(x) => out.push(format!("{flag}={x}").into()),
        toml::Value::Array(items) => {
            for item in items {
                flag_args(key, item, out)?;
            }
        }
        _ => return Err(Failure::Invalid(format!("config key '{key}' has an unsupported value"))),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn no_config_leaves_args_alone() {
        let a = os(&["scenetrack", "gen", "--out", "x"]);
        assert_eq!(apply(a.clone()).unwrap(), a);
    }

    #[test]
    fn table_is_spliced_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "[gen]\ncount = 3\nmotion = \"linear\"\n[track]\nablate = \"no-appearance\"\n").unwrap();
        let got = apply(os(&["scenetrack", "--config", cfg.to_str().unwrap(), "gen", "--count", "5"])).unwrap();
        assert_eq!(got, os(&["scenetrack", "gen", "--count=3", "--motion=linear", "--count", "5"]));
    }

    #[test]
    fn arrays_repeat_the_flag() {
        let mut out = Vec::new();
        let v: toml::Value = toml::Value::Array(vec![1.into(), 2.into()]);
        flag_args("only", &v, &mut out).unwrap();
        assert_eq!(out, os(&["--only=1", "--only=2"]));
    }
}
