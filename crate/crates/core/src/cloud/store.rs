//! Append-only canonical-line logs. Each store keeps its in-memory index and
//! rebuilds it from the log on startup.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::canonical;

pub struct AppendLog<T> {
    path: PathBuf,
    file: File,
    _marker: PhantomData<fn(T)>,
}

impl<T: Serialize + DeserializeOwned> AppendLog<T> {
    /// Opens (creating if needed) and returns every intact record. A torn
    /// final line from an interrupted write is cut off.
    pub fn open(path: impl Into<PathBuf>) -> io::Result<(Self, Vec<T>)> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let records = if path.exists() {
            truncate_torn_tail(&path)?;
            read_lines(&path)?
        } else {
            Vec::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok((
            AppendLog {
                path,
                file,
                _marker: PhantomData,
            },
            records,
        ))
    }

    pub fn append(&mut self, record: &T) -> io::Result<usize> {
        let line = canonical::to_framed_line(record).map_err(io::Error::other)?;
        self.file.write_all(line.as_bytes())?;
        Ok(line.len())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn read_lines<T: DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let rec = canonical::from_line(&line).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), i + 1),
            )
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Drops any bytes after the last `\n`. Returns the number of bytes removed.
pub fn truncate_torn_tail(path: &Path) -> io::Result<u64> {
    let bytes = fs::read(path)?;
    let keep = bytes.iter().rposition(|&b| b == b'\n').map(|i| i + 1).unwrap_or(0);
    let removed = (bytes.len() - keep) as u64;
    if removed > 0 {
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(keep as u64)?;
        f.sync_all()?;
    }
    Ok(removed)
}

/// Writes `contents` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
