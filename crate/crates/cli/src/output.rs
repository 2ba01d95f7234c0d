//! Deterministic CSV and JSON writers. Floats are written in their shortest
//! round-trip form, CSV uses LF line endings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::OutputFormat;
use crate::error::{CliError, CliResult};

pub struct Writer {
    pub dir: PathBuf,
    pub format: OutputFormat,
}

impl Writer {
    pub fn new(dir: &Path, format: OutputFormat) -> Self {
        Self {
            dir: dir.to_path_buf(),
            format,
        }
    }

    /// Writes `rows` to `<dir>/<stem>.csv` or `<stem>.json`.
    pub fn rows<T: Serialize>(&self, stem: &str, rows: &[T]) -> CliResult<PathBuf> {
        match self.format {
            OutputFormat::Csv => {
                let path = self.dir.join(format!("{stem}.csv"));
                write_csv(&path, rows)?;
                Ok(path)
            }
            OutputFormat::Json => {
                let path = self.dir.join(format!("{stem}.json"));
                write_json(&path, &rows)?;
                Ok(path)
            }
        }
    }

    pub fn text(&self, name: &str, body: &str) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|e| CliError::io(&format!("write {}", path.display()), e))?;
        Ok(path)
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        write_json(&path, value)?;
        Ok(path)
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let err = |e: csv::Error| CliError::io(&format!("write {}", path.display()), e);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(err)?;
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(&format!("write {}", path.display()), e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io("serialize", e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(&format!("write {}", path.display()), e))
}

/// Reads rows back from either format, chosen by extension.
pub fn read_rows<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let what = format!("read {}", path.display());
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(&what, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::io(&what, e))
    } else {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::io(&what, e))?;
        rdr.deserialize().collect::<Result<_, _>>().map_err(|e| CliError::io(&what, e))
    }
}
