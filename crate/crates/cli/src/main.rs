mod args;
mod commands;
mod config;
mod output;

use clap::Parser;
use config::{ConfigError, ConfigFile, RunConfig};
use output::{to_json_string, write_csv, write_script, SCHEMA};
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_ERROR: u8 = 1;
const EXIT_INVARIANT: u8 = 2;

/// Map a clap failure on a config-supplied flag back to its file position.
fn attribute(err: &clap::Error, file: Option<&ConfigFile>, run: &RunConfig) -> Option<ConfigError> {
    let file = file?;
    let text = err.to_string();
    if file.command == run.command && text.contains("subcommand") {
        return Some(ConfigError::new(format!("{}.command", file.source), text.lines().next().unwrap_or("").to_string()));
    }
    file.entries
        .iter()
        .find(|e| text.contains(&format!("--{}", e.key)))
        .and_then(|e| file.field_path(&e.key))
        .map(|path| ConfigError::new(path, text.lines().next().unwrap_or("").to_string()))
}

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args().collect();
    let program = raw.first().cloned().unwrap_or_else(|| "kamlab".into());
    let (run, file) = match config::merge(&raw[1..]) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let cli = match args::Cli::try_parse_from(run.argv(&program)) {
        Ok(c) => c,
        Err(e) => {
            if let Some(ce) = attribute(&e, file.as_ref(), &run) {
                eprintln!("{ce}");
                return ExitCode::from(EXIT_ERROR);
            }
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { 0 });
        }
    };
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("KAMLAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("kamlab-out"));
    let (family, action) = cli.family.name();
    let stem = format!("{family}_{action}");

    let report = match commands::run(&cli.family, cli.seed) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{stem}: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    };

    // the stored config drops the output location so the script can redirect it
    let mut stored = run.clone();
    stored.options.remove("out");
    stored.options.remove("seed");
    let doc = json!({
        "schema": SCHEMA,
        "command": [family, action],
        "seed": cli.seed,
        "config": stored.options,
        "report": report.body,
        "checks": report.checks,
        "ok": report.ok(),
    });
    let written = (|| -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&out)?;
        let mut files = Vec::new();
        let json_path = out.join(format!("{stem}.json"));
        std::fs::write(&json_path, to_json_string(&doc))?;
        files.push(json_path);
        for t in &report.tables {
            let p = out.join(format!("{stem}_{}.csv", t.name));
            write_csv(&p, t)?;
            files.push(p);
        }
        let cfg_name = format!("{stem}.cfg");
        std::fs::write(out.join(&cfg_name), stored.to_string())?;
        let bin = std::env::current_exe().unwrap_or_else(|_| PathBuf::from("kamlab"));
        let script = out.join(format!("reproduce_{stem}.sh"));
        write_script(&script, &bin, &cfg_name, cli.seed)?;
        files.push(script);
        Ok(files)
    })();
    match written {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
        }
        Err(e) => {
            eprintln!("{stem}: writing {}: {e}", out.display());
            return ExitCode::from(EXIT_ERROR);
        }
    }
    for c in report.checks.iter().filter(|c| !c.holds) {
        eprintln!("invariant failed: {} = {} (bound {})", c.name, output::sig17(c.value), output::sig17(c.bound));
    }
    if report.ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_INVARIANT)
    }
}
