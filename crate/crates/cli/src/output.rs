use std::io::Write;
use std::path::Path;

use binprobe_core::numeric::format_significant;
use serde::Serialize;

use crate::config::Format;
use crate::CliError;

/// CSV significant digits.
pub const CSV_DIGITS: usize = 12;

/// Rows for CSV output; the column order is part of the interface.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format_significant(x, CSV_DIGITS)
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn int(x: impl Into<u64>) -> String {
    x.into().to_string()
}

/// Writes `json` or `table` to `out` (stdout when absent).
pub fn emit<T: Serialize>(
    format: Format,
    out: Option<&Path>,
    json: &T,
    table: impl FnOnce() -> Table,
) -> Result<(), CliError> {
    let text = match format {
        Format::Json => {
            let mut s =
                serde_json::to_string_pretty(json).map_err(|e| CliError::usage(e.to_string()))?;
            s.push('\n');
            s
        }
        Format::Csv => table().render(),
    };
    write_text(out, &text)
}

pub fn write_text(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::usage(format!("cannot write output: {e}")))
        }
    }
}
