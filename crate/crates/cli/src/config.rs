//! Flat `key = value` run configuration, merged with command-line flags.

use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("config error at {path}: {message}")]
pub struct ConfigError {
    /// File, line and key of the offending entry.
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

/// One `key = value` line; the value is split on whitespace into flag arguments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Entry {
    pub key: String,
    pub values: Vec<String>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ConfigFile {
    pub source: String,
    pub command: Vec<String>,
    pub entries: Vec<Entry>,
}

impl ConfigFile {
    pub fn parse(source: &str, text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ConfigFile { source: source.to_string(), ..Default::default() };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = format!("{source}:{}", n + 1);
            let (key, value) =
                line.split_once('=').ok_or_else(|| ConfigError::new(&at, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(ConfigError::new(&at, format!("invalid key `{key}`")));
            }
            let key = key.replace('_', "-");
            let values: Vec<String> = value.split_whitespace().map(str::to_string).collect();
            if key == "command" {
                if values.is_empty() {
                    return Err(ConfigError::new(format!("{at}.command"), "empty command"));
                }
                cfg.command = values;
            } else if cfg.entries.iter().any(|e| e.key == key) {
                return Err(ConfigError::new(format!("{at}.{key}"), "duplicate key"));
            } else {
                cfg.entries.push(Entry { key, values, line: n + 1 });
            }
        }
        if cfg.command.is_empty() && cfg.entries.is_empty() {
            return Err(ConfigError::new(source, "empty configuration"));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(&source, e.to_string()))?;
        Self::parse(&source, &text)
    }

    /// Field path of a key for error messages.
    pub fn field_path(&self, key: &str) -> Option<String> {
        self.entries.iter().find(|e| e.key == key).map(|e| format!("{}:{}.{}", self.source, e.line, e.key))
    }
}

/// Effective run description: subcommand path and every flag with its values.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunConfig {
    pub command: Vec<String>,
    pub options: BTreeMap<String, Vec<String>>,
}

impl RunConfig {
    pub fn argv(&self, program: &str) -> Vec<String> {
        let mut out = vec![program.to_string()];
        out.extend(self.command.iter().cloned());
        for (k, vs) in &self.options {
            if vs.len() == 1 && vs[0] == "false" {
                continue;
            }
            out.push(format!("--{k}"));
            if !(vs.len() == 1 && vs[0] == "true") {
                out.extend(vs.iter().cloned());
            }
        }
        out
    }
}

impl fmt::Display for RunConfig {
    /// The flat file form, loadable by `ConfigFile::parse`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "command = {}", self.command.join(" "))?;
        for (k, vs) in &self.options {
            writeln!(f, "{k} = {}", if vs.is_empty() { "true".to_string() } else { vs.join(" ") })?;
        }
        Ok(())
    }
}

const GLOBAL_WITH_VALUE: [&str; 3] = ["config", "out", "seed"];

/// Split raw arguments into the subcommand path and `--key values…` groups.
/// Global options take one value; other flags take every token up to the
/// next `--` flag.
fn split_args(args: &[String]) -> (Vec<String>, Vec<(String, Vec<String>)>) {
    let mut path = Vec::new();
    let mut flags: Vec<(String, Vec<String>)> = Vec::new();
    let mut it = args.iter().peekable();
    while let Some(a) = it.next() {
        let Some(name) = a.strip_prefix("--") else {
            path.push(a.clone());
            continue;
        };
        if let Some((k, v)) = name.split_once('=') {
            flags.push((k.to_string(), vec![v.to_string()]));
            continue;
        }
        let mut vals = Vec::new();
        if GLOBAL_WITH_VALUE.contains(&name) {
            vals.extend(it.next().cloned());
        } else {
            while let Some(v) = it.next_if(|v| !v.starts_with("--")) {
                vals.push(v.clone());
            }
        }
        flags.push((name.to_string(), vals));
    }
    (path, flags)
}

/// Merge raw command-line arguments (without the program name) with an
/// optional config file; flags on the command line win.
pub fn merge(args: &[String]) -> Result<(RunConfig, Option<ConfigFile>), ConfigError> {
    let (path, flags) = split_args(args);
    let config_path = flags.iter().find(|(k, _)| k == "config").map(|(_, v)| v.clone());
    let file = match config_path {
        Some(v) if v.len() == 1 => Some(ConfigFile::load(Path::new(&v[0]))?),
        Some(_) => return Err(ConfigError::new("--config", "expected one file path")),
        None => None,
    };
    let mut run = RunConfig { command: path, options: BTreeMap::new() };
    if let Some(f) = &file {
        if run.command.is_empty() {
            run.command = f.command.clone();
        }
        for e in &f.entries {
            run.options.insert(e.key.clone(), e.values.clone());
        }
    }
    for (k, v) in flags {
        if k == "config" {
            continue;
        }
        run.options.insert(k, if v.is_empty() { vec!["true".into()] } else { v });
    }
    Ok((run, file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn parse_and_errors() {
        let c = ConfigFile::parse("a.cfg", "# run\ncommand = kam schedule\ntau = 1.2\njmax=50 # steps\n").unwrap();
        assert_eq!(c.command, s(&["kam", "schedule"]));
        assert_eq!(c.entries.len(), 2);
        assert_eq!(c.field_path("jmax").unwrap(), "a.cfg:4.jmax");
        let e = ConfigFile::parse("b.cfg", "\n# nothing\n").unwrap_err();
        assert_eq!(e.path, "b.cfg");
        assert_eq!(ConfigFile::parse("c.cfg", "tau 1.2").unwrap_err().path, "c.cfg:1");
        assert_eq!(ConfigFile::parse("d.cfg", "tau = 1\ntau = 2").unwrap_err().path, "d.cfg:2.tau");
    }

    #[test]
    fn split_keeps_negative_values_and_path() {
        let (path, flags) = split_args(&s(&["--seed", "3", "liouville", "radon", "--level", "-0.5", "--ellipse", "2", "1"]));
        assert_eq!(path, s(&["liouville", "radon"]));
        assert_eq!(flags[0], ("seed".into(), s(&["3"])));
        assert_eq!(flags[1], ("level".into(), s(&["-0.5"])));
        assert_eq!(flags[2], ("ellipse".into(), s(&["2", "1"])));
    }

    #[test]
    fn flags_override_config_and_round_trip() {
        let dir = std::env::temp_dir().join(format!("kamlab-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let f = dir.join("run.cfg");
        std::fs::write(&f, "command = kam schedule\ntau = 1.3\njmax = 10\nstrict = false\n").unwrap();
        let args = s(&["--config", f.to_str().unwrap(), "--tau", "1.2"]);
        let (run, _) = merge(&args).unwrap();
        assert_eq!(run.command, s(&["kam", "schedule"]));
        assert_eq!(run.options["tau"], s(&["1.2"]));
        assert_eq!(run.options["jmax"], s(&["10"]));
        let argv = run.argv("kamlab");
        assert_eq!(argv, s(&["kamlab", "kam", "schedule", "--jmax", "10", "--tau", "1.2"]));
        let again = ConfigFile::parse("x", &run.to_string()).unwrap();
        assert_eq!(again.command, run.command);
        std::fs::remove_dir_all(&dir).ok();
    }
}
