//! Small helpers for the CSV emitters (comma-separated, `.` decimal,
//! `#`-prefixed header lines).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

/// Write a CSV file: `#`-prefixed header lines, a `# columns:` line, then
/// one comma-joined row per record.
pub fn write_csv(
    path: impl AsRef<Path>,
    header_lines: &[String],
    columns: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for line in header_lines {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "# columns: {}", columns.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width scientific formatting shared by all emitters so reruns are
/// byte-identical.
pub fn num(v: f64) -> String {
    format!("{v:.12e}")
}
