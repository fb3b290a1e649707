//! Reports: JSON with 17 significant digits, CSV tables and a reproduction script.

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;
use std::io::{self, Write};
use std::path::Path;

pub const SCHEMA: u32 = 1;

pub fn sig17(x: f64) -> String {
    if x == 0.0 {
        if x.is_sign_negative() { "-0.0000000000000000e0".into() } else { "0.0000000000000000e0".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// Pretty JSON whose floats carry 17 significant digits.
struct Sig17Formatter(PrettyFormatter<'static>);

impl Formatter for Sig17Formatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(sig17(value).as_bytes())
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17Formatter(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("in-memory JSON serialization");
    buf.push(b'\n');
    String::from_utf8(buf).expect("JSON is UTF-8")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
    B(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => sig17(*x),
            Cell::I(n) => n.to_string(),
            Cell::S(s) => s.clone(),
            Cell::B(b) => b.to_string(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}
impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::I(x)
    }
}
impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x as i64)
    }
}
impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::B(x)
    }
}
impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// A named invariant with the measured value and the bound it is held to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub holds: bool,
}

impl Check {
    /// value ≤ bound.
    pub fn le(name: &str, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound, holds: value <= bound }
    }

    pub fn flag(name: &str, holds: bool) -> Self {
        Self { name: name.into(), value: holds as i32 as f64, bound: 1.0, holds }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub body: Value,
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }
}

pub fn write_csv(path: &Path, table: &Table) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(Cell::render))?;
    }
    w.flush()
}

pub fn write_script(path: &Path, binary: &Path, config_name: &str, seed: u64) -> io::Result<()> {
    let body = format!(
        "#!/bin/sh\n# Regenerates this run; pass a directory to write elsewhere.\nset -e\nhere=\"$(cd \"$(dirname \"$0\")\" && pwd)\"\nout=\"${{1:-$here}}\"\nexec \"${{KAMLAB_BIN:-{}}}\" --config \"$here/{config_name}\" --seed {seed} --out \"$out\"\n",
        binary.display()
    );
    std::fs::write(path, body)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o755))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(sig17(0.1), "1.0000000000000001e-1");
        assert_eq!(sig17(-1.0 / 3.0), "-3.3333333333333331e-1");
        for x in [0.1, 1.0 / 3.0, 6.02e23, -2.5e-300] {
            assert_eq!(sig17(x).parse::<f64>().unwrap(), x);
        }
        let s = to_json_string(&serde_json::json!({"a": 0.5, "n": 3, "v": [1e-3]}));
        assert!(s.contains("\"a\": 5.0000000000000000e-1"));
        assert!(s.contains("\"n\": 3"));
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["v"][0].as_f64().unwrap(), 1e-3);
    }
}
