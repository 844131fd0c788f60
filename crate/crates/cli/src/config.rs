//! Optional `key = value` file whose entries act as flags placed before the
//! ones given on the command line, so explicit flags win.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected key = value", n + 1);
        };
        let key = k.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            bail!("line {}: invalid key {key:?}", n + 1);
        }
        out.push((key.replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

/// Turns entries into flags. `true` becomes a bare switch, `false` is dropped.
pub fn to_flags(entries: &[(String, String)]) -> Vec<OsString> {
    let mut out = Vec::new();
    for (k, v) in entries {
        match v.as_str() {
            "true" => out.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{k}").into());
                out.push(v.into());
            }
        }
    }
    out
}

/// Removes `--config <path>` from `args` and splices the file's flags in
/// right after the subcommand name.
pub fn expand(args: Vec<OsString>, subcommands: &[&str]) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut path = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = Some(it.next().context("--config needs a path")?);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let flags = to_flags(&parse(&text).with_context(|| format!("config {}", path.display()))?);
    let at = rest
        .iter()
        .position(|a| subcommands.contains(&a.to_string_lossy().as_ref()))
        .context("--config given without a subcommand")?;
    rest.splice(at + 1..at + 1, flags);
    Ok(rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_switches() {
        let e = parse("# defaults\nthreshold = 0.4\nepochs=10  # short run\n\njson = true\nverbose = false\n").unwrap();
        assert_eq!(e.len(), 4);
        let flags: Vec<String> = to_flags(&e).iter().map(|f| f.to_string_lossy().into_owned()).collect();
        assert_eq!(flags, ["--threshold", "0.4", "--epochs", "10", "--json"]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse("threshold 0.4").is_err());
        assert!(parse("= 3").is_err());
    }

    #[test]
    fn splices_after_subcommand() {
        let dir = std::env::temp_dir().join(format!("lesplat-config-{}", std::process::id()));
        std::fs::write(&dir, "seed = 3\n").unwrap();
        let args: Vec<OsString> = ["lesplat", "--config", dir.to_str().unwrap(), "bench", "--seed", "7"]
            .iter()
            .map(OsString::from)
            .collect();
        let out = expand(args, &["bench"]).unwrap();
        let out: Vec<String> = out.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert_eq!(out, ["lesplat", "bench", "--seed", "3", "--seed", "7"]);
        std::fs::remove_file(dir).unwrap();
    }
}
