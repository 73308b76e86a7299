//! Comma-separated output tables with a provenance footer.

use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

/// SHA-256 of the effective configuration text, as lowercase hex.
pub fn config_hash(effective: &str) -> String {
    let digest = Sha256::digest(effective.as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Fixed-schema numeric table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Extra `# key value` lines placed before the hash footer.
    pub notes: Vec<(String, String)>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new(), notes: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    /// Integers print without exponent, everything else as `{:.17e}`.
    fn cell(v: f64) -> String {
        if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
            format!("{}", v as i64)
        } else if v.is_nan() {
            "nan".into()
        } else {
            format!("{v:.17e}")
        }
    }

    pub fn render(&self, hash: &str) -> io::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|&v| Self::cell(v)))?;
        }
        let mut text = String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is UTF-8");
        for (k, v) in &self.notes {
            let _ = writeln!(text, "# {k} {v}");
        }
        let _ = writeln!(text, "# config-hash sha256:{hash}");
        Ok(text)
    }

    pub fn write(&self, dir: &Path, name: &str, hash: &str) -> io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(name);
        fs::write(&path, self.render(hash)?)?;
        Ok(path)
    }
}

/// Reads a table written by [`Table::write`]; comment lines are returned as notes.
pub fn read_table(path: &Path) -> io::Result<Table> {
    let text = fs::read_to_string(path)?;
    let mut notes = Vec::new();
    for line in text.lines().filter_map(|l| l.strip_prefix("# ")) {
        let (k, v) = line.split_once(' ').unwrap_or((line, ""));
        notes.push((k.to_string(), v.to_string()));
    }
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let columns = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|c| c.trim().parse::<f64>().map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: bad number \"{c}\": {e}", path.display()))))
            .collect::<io::Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { columns, rows, notes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_read_back() {
        let mut t = Table::new(&["iter", "value"]);
        t.push(vec![0.0, 0.1]);
        t.push(vec![1.0, f64::NAN]);
        t.note("noise-level", 0.25);
        let dir = tempfile::tempdir().unwrap();
        let path = t.write(dir.path(), "t.csv", "abc").unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("iter,value\n0,1.00000000000000006e-1\n1,nan\n"));
        assert!(text.ends_with("# config-hash sha256:abc\n"));
        let back = read_table(&path).unwrap();
        assert_eq!(back.columns, t.columns);
        assert_eq!(back.rows[0], vec![0.0, 0.1]);
        assert!(back.rows[1][1].is_nan());
        assert!(back.notes.contains(&("noise-level".into(), "0.25".into())));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
