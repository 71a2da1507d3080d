//! Line-delimited JSON helpers shared by the manifest, index and
//! prediction file formats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Reads every non-blank line of `path`, returning `(line_number, text)`.
pub(crate) fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub(crate) fn parse_line<T: DeserializeOwned>(path: &Path, line_no: usize, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        line: line_no,
        msg: e.to_string(),
    })
}

/// Streams JSON objects to `path`, one per line.
pub(crate) struct LineWriter {
    path: std::path::PathBuf,
    inner: BufWriter<File>,
}

impl LineWriter {
    pub(crate) fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(LineWriter {
            path: path.to_path_buf(),
            inner: BufWriter::new(file),
        })
    }

    pub(crate) fn write<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.inner, value).map_err(|e| {
            Error::io(&self.path, std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })?;
        self.inner
            .write_all(b"\n")
            .map_err(|e| Error::io(&self.path, e))
    }

    pub(crate) fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}
