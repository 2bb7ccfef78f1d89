//! Result files: CSV tables, gnuplot scripts, manifests and verdicts,
//! staged in memory and written together.

use crate::error::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const TOOL: &str = "irand";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Reals with 17 significant digits, which round-trips binary64.
pub fn fmt_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => fmt_real(*v),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.into())
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        Cell::Real(v.unwrap_or(f64::NAN))
    }
}

/// A CSV table with a header row.
#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> CliResult<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::render))?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.into_error()))
    }
}

/// Axis scaling for a gnuplot figure.
#[derive(Debug, Clone, Copy)]
pub struct Axes {
    pub logx: bool,
    pub logy: bool,
}

/// A gnuplot script that renders columns of `csv` (1-based) against `x`.
pub fn gnuplot_script(title: &str, csv: &str, x: usize, ys: &[(usize, &str)], axes: Axes, xlabel: &str, ylabel: &str) -> String {
    let stem = csv.trim_end_matches(".csv");
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set terminal pngcairo size 900,600\n");
    s.push_str(&format!("set output '{stem}.png'\n"));
    s.push_str(&format!("set title '{title}'\n"));
    s.push_str(&format!("set xlabel '{xlabel}'\nset ylabel '{ylabel}'\n"));
    if axes.logx {
        s.push_str("set logscale x\n");
    }
    if axes.logy {
        s.push_str("set logscale y\n");
    }
    s.push_str("set key autotitle columnhead\n");
    let plots: Vec<String> = ys
        .iter()
        .map(|(col, style)| format!("'{csv}' using {x}:{col} with {style}"))
        .collect();
    s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    s
}

/// Short form for thresholds in check conditions.
fn bound(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e6).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

/// One pass/fail check with the measured value and what it was held to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human readable condition, e.g. `< 0.05` or `in [-1.15, -0.85]`.
    pub condition: String,
    pub pass: bool,
}

impl Check {
    pub fn below(name: &str, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            value,
            condition: format!("< {}", bound(limit)),
            pass: value < limit,
        }
    }

    pub fn above(name: &str, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            value,
            condition: format!("> {}", bound(limit)),
            pass: value > limit,
        }
    }

    pub fn within(name: &str, value: f64, target: f64, tol: f64) -> Self {
        Check {
            name: name.into(),
            value,
            condition: format!("in [{}, {}]", bound(target - tol), bound(target + tol)),
            pass: (value - target).abs() <= tol,
        }
    }

    pub fn equals(name: &str, value: f64, target: f64) -> Self {
        Check {
            name: name.into(),
            value,
            condition: format!("= {}", bound(target)),
            pass: value == target,
        }
    }

    pub fn flag(name: &str, ok: bool, condition: &str) -> Self {
        Check {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            condition: condition.into(),
            pass: ok,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub experiment: String,
    pub pass: bool,
    pub checks: Vec<Check>,
}

impl Verdict {
    pub fn new(experiment: &str, checks: Vec<Check>) -> Self {
        Verdict {
            experiment: experiment.into(),
            pass: checks.iter().all(|c| c.pass),
            checks,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub tool: &'a str,
    pub version: &'a str,
    pub experiment: &'a str,
    pub seed: u64,
    pub config: &'a C,
    pub files: Vec<String>,
}

/// Named file contents, written as a unit.
#[derive(Debug, Clone, Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        let name = name.into();
        assert!(!self.files.iter().any(|(n, _)| *n == name), "duplicate output {name}");
        self.files.push((name, bytes));
    }

    pub fn add_table(&mut self, name: &str, t: &Table) -> CliResult<()> {
        self.add(name, t.to_csv()?);
        Ok(())
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, v: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(v)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    pub fn add_text(&mut self, name: &str, s: String) {
        self.add(name, s.into_bytes());
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn files(&self) -> &[(String, Vec<u8>)] {
        &self.files
    }

    /// Writes every file under `dir`. If any write fails, the files written
    /// so far are removed again.
    pub fn commit(&self, dir: &Path) -> CliResult<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            let res = path
                .parent()
                .map_or(Ok(()), fs::create_dir_all)
                .and_then(|_| fs::write(&path, bytes));
            if let Err(e) = res {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                return Err(e.into());
            }
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_round_trip() {
        for v in [0.1, 1.0 / 3.0, 8.0, -2.5e-300, 1e300, f64::MIN_POSITIVE, 0.0] {
            let s = fmt_real(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
            let digits = s.split('e').next().unwrap().chars().filter(char::is_ascii_digit).count();
            assert_eq!(digits, 17, "{s}");
        }
        assert_eq!(fmt_real(f64::NAN), "NaN");
    }

    #[test]
    fn csv_layout() {
        let mut t = Table::new(&["n", "value", "label"]);
        t.push(vec![3usize.into(), 0.5.into(), "a,b".into()]);
        let text = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert_eq!(text, "n,value,label\n3,5.0000000000000000e-1,\"a,b\"\n");
    }

    #[test]
    fn commit_writes_all_or_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut o = OutputSet::new();
        o.add_text("a.txt", "x".into());
        o.add_text("sub/b.txt", "y".into());
        o.commit(dir.path()).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("sub/b.txt")).unwrap(), "y");

        // A directory standing where a file should go makes the second write fail.
        let mut bad = OutputSet::new();
        bad.add_text("c.txt", "z".into());
        bad.add_text("blocked", "w".into());
        fs::create_dir(dir.path().join("blocked")).unwrap();
        assert!(bad.commit(dir.path()).is_err());
        assert!(!dir.path().join("c.txt").exists());
    }

    #[test]
    fn checks() {
        assert!(Check::within("s", -0.93, -1.0, 0.15).pass);
        assert!(!Check::within("s", -0.8, -1.0, 0.15).pass);
        assert!(Check::below("k", 0.01, 0.02).pass);
        assert!(!Check::below("k", 0.02, 0.02).pass);
        assert_eq!(Check::below("r", 1e-9, 1e-8).condition, "< 1e-8");
        assert_eq!(Check::within("s", 0.5, 0.5, 0.1).condition, "in [0.4, 0.6]");
        assert!(!Verdict::new("x", vec![Check::flag("a", true, ""), Check::flag("b", false, "")]).pass);
    }
}
