use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex SHA-256 over the reference lines, identifying a test set.
pub fn test_set_fingerprint<S: AsRef<str>>(refs: &[Vec<S>]) -> String {
    let mut h = Sha256::new();
    for line in refs {
        for (i, t) in line.iter().enumerate() {
            if i > 0 {
                h.update(b" ");
            }
            h.update(t.as_ref().as_bytes());
        }
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// One system's score on one test set.
#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    pub row: String,
    pub system: String,
    pub value: f64,
    pub fingerprint: String,
}

/// Systems × test sets, with per-row best marks and pairwise deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaReport {
    pub metric: String,
    pub rows: Vec<String>,
    pub systems: Vec<String>,
    /// `cells[row][system]`; `None` where a system was not run.
    pub cells: Vec<Vec<Option<f64>>>,
    /// Index of the best system per row.
    pub best: Vec<Option<usize>>,
}

/// Arranges scores into a grid. Rows and systems keep first-seen order
/// unless `systems` fixes the column order.
pub fn system_delta_report(metric: &str, entries: &[GridEntry], systems: Option<&[String]>) -> Result<DeltaReport> {
    let mut cols: Vec<String> = systems.map(<[String]>::to_vec).unwrap_or_default();
    let mut rows: Vec<String> = Vec::new();
    for e in entries {
        if !rows.contains(&e.row) {
            rows.push(e.row.clone());
        }
        if !cols.contains(&e.system) {
            if systems.is_some() {
                return Err(Error::Input(format!("system {:?} is not among the declared columns", e.system)));
            }
            cols.push(e.system.clone());
        }
    }
    if cols.len() < 2 {
        return Err(Error::Input(format!("a delta report needs at least 2 systems, got {}", cols.len())));
    }
    let mut cells = vec![vec![None; cols.len()]; rows.len()];
    let mut prints: Vec<Option<&str>> = vec![None; rows.len()];
    for e in entries {
        let r = rows.iter().position(|x| *x == e.row).unwrap();
        let c = cols.iter().position(|x| *x == e.system).unwrap();
        match prints[r] {
            Some(p) if p != e.fingerprint => {
                return Err(Error::Input(format!(
                    "systems in row {:?} were evaluated on different test sets ({} vs {}); deltas would be meaningless",
                    e.row,
                    &p[..p.len().min(12)],
                    &e.fingerprint[..e.fingerprint.len().min(12)]
                )))
            }
            _ => prints[r] = Some(&e.fingerprint),
        }
        if cells[r][c].is_some() {
            return Err(Error::Input(format!("duplicate score for {:?} on {:?}", e.system, e.row)));
        }
        cells[r][c] = Some(e.value);
    }
    let best = cells
        .iter()
        .map(|row| {
            let mut best: Option<usize> = None;
            for (i, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    if best.map_or(true, |b| *v > row[b].unwrap()) {
                        best = Some(i);
                    }
                }
            }
            best
        })
        .collect();
    Ok(DeltaReport {
        metric: metric.to_string(),
        rows,
        systems: cols,
        cells,
        best,
    })
}

impl DeltaReport {
    /// `value(a) − value(b)` in `row`, when both were run.
    pub fn delta(&self, row: usize, a: usize, b: usize) -> Option<f64> {
        Some(self.cells[row][a]? - self.cells[row][b]?)
    }

    /// Aligned text: the score grid (best marked `*`, missing cells `N/A`)
    /// followed by the pairwise deltas.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let label_w = self.rows.iter().map(String::len).max().unwrap_or(0).max(self.metric.len());
        let col_w: Vec<usize> = self.systems.iter().map(|s| s.len().max(7)).collect();
        let _ = write!(out, "{:<label_w$}", self.metric);
        for (s, w) in self.systems.iter().zip(&col_w) {
            let _ = write!(out, " | {s:>w$}");
        }
        out.push('\n');
        for (r, row) in self.rows.iter().enumerate() {
            let _ = write!(out, "{row:<label_w$}");
            for (c, w) in col_w.iter().enumerate() {
                let cell = match self.cells[r][c] {
                    Some(v) if self.best[r] == Some(c) => format!("*{v:.2}"),
                    Some(v) => format!("{v:.2}"),
                    None => "N/A".to_string(),
                };
                let _ = write!(out, " | {cell:>w$}");
            }
            out.push('\n');
        }
        let pairs = self.pairs();
        if !pairs.is_empty() {
            out.push('\n');
            let names: Vec<String> = pairs
                .iter()
                .map(|&(a, b)| format!("{} - {}", self.systems[a], self.systems[b]))
                .collect();
            let name_w = names.iter().map(String::len).max().unwrap_or(0);
            let row_w: Vec<usize> = self.rows.iter().map(|r| r.len().max(6)).collect();
            let _ = write!(out, "{:<name_w$}", "delta");
            for (r, w) in self.rows.iter().zip(&row_w) {
                let _ = write!(out, " | {r:>w$}");
            }
            out.push('\n');
            for (name, &(a, b)) in names.iter().zip(&pairs) {
                let _ = write!(out, "{name:<name_w$}");
                for (r, w) in row_w.iter().enumerate() {
                    let cell = self.delta(r, a, b).map_or("N/A".to_string(), |d| format!("{d:+.2}"));
                    let _ = write!(out, " | {cell:>w$}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn key_values(&self) -> String {
        let mut out = String::new();
        for (r, row) in self.rows.iter().enumerate() {
            for (c, sys) in self.systems.iter().enumerate() {
                match self.cells[r][c] {
                    Some(v) => {
                        let _ = writeln!(out, "{}.{row}.{sys}={v:.4}", self.metric);
                    }
                    None => {
                        let _ = writeln!(out, "{}.{row}.{sys}=NA", self.metric);
                    }
                }
            }
            if let Some(b) = self.best[r] {
                let _ = writeln!(out, "best.{row}={}", self.systems[b]);
            }
            for (a, b) in self.pairs() {
                if let Some(d) = self.delta(r, a, b) {
                    let _ = writeln!(out, "delta.{row}.{}-{}={d:.4}", self.systems[a], self.systems[b]);
                }
            }
        }
        out
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.systems.len();
        (0..n).flat_map(|a| (a + 1..n).map(move |b| (b, a))).collect()
    }
}
