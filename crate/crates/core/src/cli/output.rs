//! Output directory with atomic writes and failure marking.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dynamics::State3;
use crate::{Error, Result};

/// Column order of every state table.
pub const STATE_COLUMNS: [&str; 8] = ["t_s", "x_m", "y_m", "z_m", "vx_mps", "vy_mps", "vz_mps", "event"];

pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(format!("creating {}", root.display()), e))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Write `bytes` to `name` through a temporary file and a rename.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        let tmp = self.root.join(format!(".{name}.tmp"));
        fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))?;
        // a stale marker from an earlier failed run no longer applies
        let _ = fs::remove_file(failed_name(&path));
        if !self.written.contains(&path) {
            self.written.push(path.clone());
        }
        Ok(path)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// One JSON document per line.
    pub fn json_lines<T: Serialize>(&mut self, name: &str, values: &[T]) -> Result<PathBuf> {
        let mut text = String::new();
        for v in values {
            text.push_str(&serde_json::to_string(v)?);
            text.push('\n');
        }
        self.write(name, text.as_bytes())
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Numerical(format!("csv encoding of {name}: {e}"));
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numerical(format!("csv encoding of {name}: {e}")))?;
        self.write(name, &bytes)
    }

    /// Rename everything written so far with a `.failed` suffix.
    pub fn mark_failed(&mut self) {
        for path in self.written.drain(..) {
            let _ = fs::rename(&path, failed_name(&path));
        }
    }
}

fn failed_name(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".failed");
    PathBuf::from(name)
}

/// Shortest round-trip text of a float.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn state_row(t: f64, x: &State3, event: &str) -> Vec<String> {
    let mut row = vec![num(t)];
    row.extend(x.iter().map(|v| num(*v)));
    row.push(event.to_string());
    row
}
