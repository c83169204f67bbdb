//! Small file helpers shared by the CSV and JSON writers.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{RafdaError, Result};

/// Formats a double with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Creates (truncating) a file, making missing parent directories.
pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| RafdaError::io(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| RafdaError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| RafdaError::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| RafdaError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| RafdaError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| RafdaError::Format {
        path: path.into(),
        message: e.to_string(),
    })
}
