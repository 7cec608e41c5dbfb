//! File-based batch adapter for models living outside the process.
//!
//! The adapter writes `inputs.csv` (header `x1,...,xp`, physical coordinates)
//! into `io_dir`, runs `command io_dir` and reads `outputs.csv` (header `f`,
//! one value per input row, same order).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use crate::error::{Error, Result};

#[derive(Debug)]
pub struct ExternalModel {
    command: String,
    io_dir: PathBuf,
    lock: Mutex<()>,
}

impl ExternalModel {
    pub fn new(command: impl Into<String>, io_dir: impl Into<PathBuf>) -> Self {
        Self {
            command: command.into(),
            io_dir: io_dir.into(),
            lock: Mutex::new(()),
        }
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn io_dir(&self) -> &Path {
        &self.io_dir
    }

    /// Runs one batch of physical-coordinate rows. Errors carry the index
    /// of the offending row when one can be identified.
    pub fn run_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, (Option<usize>, String)> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let p = rows.first().map_or(0, Vec::len);
        fs::create_dir_all(&self.io_dir).map_err(|e| (None, format!("{}: {e}", self.io_dir.display())))?;
        let input = self.io_dir.join("inputs.csv");
        let output = self.io_dir.join("outputs.csv");
        let _ = fs::remove_file(&output);

        let write = || -> Result<()> {
            let mut w = csv::Writer::from_path(&input)?;
            w.write_record((1..=p).map(|i| format!("x{i}")))?;
            for row in rows {
                w.write_record(row.iter().map(|v| v.to_string()))?;
            }
            w.flush().map_err(|e| Error::io(&input, e))?;
            Ok(())
        };
        write().map_err(|e| (None, e.to_string()))?;

        let mut parts = self.command.split_whitespace();
        let program = parts.next().ok_or((None, "empty external command".to_string()))?;
        let status = Command::new(program)
            .args(parts)
            .arg(&self.io_dir)
            .status()
            .map_err(|e| (None, format!("failed to start `{}`: {e}", self.command)))?;
        if !status.success() {
            return Err((None, format!("`{}` exited with {status}", self.command)));
        }

        let mut reader = csv::Reader::from_path(&output).map_err(|e| (None, e.to_string()))?;
        let header_ok = reader.headers().map(|h| h.len() == 1 && &h[0] == "f").unwrap_or(false);
        if !header_ok {
            return Err((None, "outputs.csv must have the single header `f`".into()));
        }
        let mut values = Vec::with_capacity(rows.len());
        for (r, record) in reader.records().enumerate() {
            let record = record.map_err(|e| (Some(r), e.to_string()))?;
            let v: f64 = record[0]
                .trim()
                .parse()
                .map_err(|_| (Some(r), format!("unparsable output `{}`", &record[0])))?;
            if !v.is_finite() {
                return Err((Some(r), format!("non-finite output {v}")));
            }
            values.push(v);
        }
        if values.len() != rows.len() {
            return Err((
                Some(values.len().min(rows.len().saturating_sub(1))),
                format!("expected {} outputs, found {}", rows.len(), values.len()),
            ));
        }
        Ok(values)
    }
}
