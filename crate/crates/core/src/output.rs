//! CSV writers. Numbers use 17 significant digits in scientific notation,
//! lines end in LF, and every file is written to a temporary name and then
//! renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::diagnostics::{EnergyLedger, LedgerRecord};
use crate::error::Result;
use crate::stepper::State;

pub fn num(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    let tmp = dir.join(format!(".{}.tmp{}", name, std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// A cell value in a report table.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Int(u64),
    Text(String),
}

impl Value {
    fn render(&self) -> String {
        match self {
            Value::Num(x) => num(*x),
            Value::Int(i) => i.to_string(),
            Value::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Num(x)
    }
}

impl From<usize> for Value {
    fn from(x: usize) -> Self {
        Value::Int(x as u64)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Text(if b { "true" } else { "false" }.into())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Value::render).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn write_report(path: &Path, table: &Table) -> Result<()> {
    write_atomic(path, &table.to_csv())
}

pub fn snapshot_csv(s: &State, gamma: f64, config_hash: &str) -> String {
    let g = s.grid();
    let mut out = String::new();
    let _ = writeln!(out, "# t = {}", num(s.t));
    let _ = writeln!(out, "# gamma = {}", num(gamma));
    let _ = writeln!(
        out,
        "# grid = dim {} origin {} {} extents {} {} cells {} {}",
        g.dim(),
        num(g.origin()[0]),
        num(g.origin()[1]),
        num(g.extents()[0]),
        num(g.extents()[1]),
        g.nx(),
        g.ny()
    );
    let _ = writeln!(out, "# config_hash = {}", config_hash);
    out.push_str("x,y,n,n1,n2,c,d,p,v\n");
    for k in 0..g.len() {
        let [x, y] = g.center(k);
        let (n, c, d) = (s.n[k], s.c[k], s.d[k]);
        let row = [
            x,
            y,
            n,
            (1.0 - c) * n,
            c * n,
            c,
            d,
            crate::stepper::pos_pow(n, gamma),
            crate::stepper::pos_pow(n, gamma + 1.0),
        ];
        let cells: Vec<String> = row.iter().map(|v| num(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_snapshot(path: &Path, s: &State, gamma: f64, config_hash: &str) -> Result<()> {
    write_atomic(path, &snapshot_csv(s, gamma, config_hash))
}

pub const TIMESERIES_COLUMNS: &[&str] = &[
    "t",
    "mass",
    "n_min",
    "n_max",
    "c_min",
    "c_max",
    "d_min",
    "d_max",
    "energy_v2",
    "energy_grad",
    "entropy",
    "excess",
    "segregation",
    "complementarity",
];

/// One row per recorded state; `history` and `ledger` must align.
pub fn timeseries_csv(history: &[State], ledger: &EnergyLedger) -> String {
    let mut out = TIMESERIES_COLUMNS.join(",");
    out.push('\n');
    for (s, r) in history.iter().zip(&ledger.records) {
        let LedgerRecord {
            t,
            mass,
            energy_v2,
            energy_grad,
            entropy,
            excess,
            segregation,
            complementarity,
        } = *r;
        let row = [
            t,
            mass,
            s.n.min(),
            s.n.max(),
            s.c.min(),
            s.c.max(),
            s.d.min(),
            s.d.max(),
            energy_v2,
            energy_grad,
            entropy,
            excess,
            segregation,
            complementarity,
        ];
        let cells: Vec<String> = row.iter().map(|v| num(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_timeseries(path: &Path, history: &[State], ledger: &EnergyLedger) -> Result<()> {
    write_atomic(path, &timeseries_csv(history, ledger))
}
