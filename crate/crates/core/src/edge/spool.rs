//! Local append-only store of every scored window, awaiting batch upload.
//!
//! Layout: one file per segment, `<start:020>.open` while being written and
//! `<start:020>.seg` once closed, plus a `watermark` file holding the last
//! window index of the most recently closed segment (so resumption works
//! after closed segments have been uploaded and deleted).

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use tracing::{info, warn};

use crate::canonical;
use crate::cloud::store::{read_lines, truncate_torn_tail, write_atomic};
use crate::protocol::RawRecord;

const OPEN_EXT: &str = "open";
const CLOSED_EXT: &str = "seg";
const WATERMARK: &str = "watermark";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentInfo {
    pub segment_id: String,
    pub start: u64,
    pub path: PathBuf,
}

struct OpenSegment {
    start: u64,
    path: PathBuf,
    file: File,
    records: u64,
}

pub struct Spool {
    dir: PathBuf,
    edge_id: String,
    segment_windows: u64,
    current: Option<OpenSegment>,
    last_window: Option<u64>,
    bytes_written: u64,
    records_written: u64,
}

pub fn segment_id(edge_id: &str, start: u64) -> String {
    format!("{edge_id}-{start:012}")
}

fn segment_file(dir: &Path, start: u64, ext: &str) -> PathBuf {
    dir.join(format!("{start:020}.{ext}"))
}

fn parse_name(path: &Path) -> Option<(u64, &str)> {
    let ext = path.extension()?.to_str()?;
    let start = path.file_stem()?.to_str()?.parse().ok()?;
    Some((start, ext))
}

fn last_index(path: &Path) -> io::Result<(Option<u64>, u64)> {
    let recs: Vec<RawRecord> = read_lines(path)?;
    Ok((recs.last().map(|r| r.window_index), recs.len() as u64))
}

impl Spool {
    /// Opens (or creates) a spool directory. A torn final line in the open
    /// segment, left by a crash mid-write, is truncated away.
    pub fn open(dir: impl Into<PathBuf>, edge_id: &str, segment_windows: u64) -> io::Result<Spool> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut last_window: Option<u64> = match fs::read_to_string(dir.join(WATERMARK)) {
            Ok(s) => s.trim().parse().ok(),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(e),
        };
        let mut current = None;
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            let Some((start, ext)) = parse_name(&path) else {
                continue;
            };
            match ext {
                OPEN_EXT => {
                    let cut = truncate_torn_tail(&path)?;
                    if cut > 0 {
                        warn!(path = %path.display(), bytes = cut, "truncated torn spool record");
                    }
                    let (last, records) = last_index(&path)?;
                    last_window = last_window.max(last);
                    if current.is_some() {
                        return Err(io::Error::other(format!(
                            "multiple open spool segments in {}",
                            dir.display()
                        )));
                    }
                    let file = OpenOptions::new().append(true).open(&path)?;
                    current = Some(OpenSegment {
                        start,
                        path,
                        file,
                        records,
                    });
                }
                CLOSED_EXT => last_window = last_window.max(last_index(&path)?.0),
                _ => {}
            }
        }
        if let Some(w) = last_window {
            info!(dir = %dir.display(), last_window = w, "spool resumed");
        }
        Ok(Spool {
            dir,
            edge_id: edge_id.to_string(),
            segment_windows,
            current,
            last_window,
            bytes_written: 0,
            records_written: 0,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Index of the newest spooled window, across open and closed segments.
    pub fn last_window(&self) -> Option<u64> {
        self.last_window
    }

    /// Bytes appended by this process.
    pub fn bytes_written(&self) -> u64 {
        self.bytes_written
    }

    pub fn records_written(&self) -> u64 {
        self.records_written
    }

    /// Appends one record; rolls the segment every `segment_windows`
    /// records. Window indices must strictly increase.
    pub fn append(&mut self, record: &RawRecord) -> io::Result<usize> {
        if self.last_window.is_some_and(|w| record.window_index <= w) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!(
                    "window {} not after last spooled window {}",
                    record.window_index,
                    self.last_window.unwrap()
                ),
            ));
        }
        if self.current.is_none() {
            let path = segment_file(&self.dir, record.window_index, OPEN_EXT);
            let file = OpenOptions::new().create(true).append(true).open(&path)?;
            self.current = Some(OpenSegment {
                start: record.window_index,
                path,
                file,
                records: 0,
            });
        }
        let line = canonical::to_framed_line(record).map_err(io::Error::other)?;
        let seg = self.current.as_mut().expect("segment open");
        seg.file.write_all(line.as_bytes())?;
        seg.records += 1;
        self.last_window = Some(record.window_index);
        self.bytes_written += line.len() as u64;
        self.records_written += 1;
        if seg.records >= self.segment_windows {
            self.close_current()?;
        }
        Ok(line.len())
    }

    /// Closes the open segment, making it eligible for upload.
    pub fn close_current(&mut self) -> io::Result<Option<SegmentInfo>> {
        let Some(seg) = self.current.take() else {
            return Ok(None);
        };
        seg.file.sync_data()?;
        drop(seg.file);
        if let Some(w) = self.last_window {
            write_atomic(&self.dir.join(WATERMARK), w.to_string().as_bytes())?;
        }
        let closed = segment_file(&self.dir, seg.start, CLOSED_EXT);
        fs::rename(&seg.path, &closed)?;
        Ok(Some(SegmentInfo {
            segment_id: segment_id(&self.edge_id, seg.start),
            start: seg.start,
            path: closed,
        }))
    }

    pub fn open_segment_records(&self) -> u64 {
        self.current.as_ref().map_or(0, |s| s.records)
    }
}

/// Closed segments in a spool directory, oldest first. Safe to call while
/// another process appends to the open segment.
pub fn closed_segments(dir: &Path, edge_id: &str) -> io::Result<Vec<SegmentInfo>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if let Some((start, CLOSED_EXT)) = parse_name(&path) {
            out.push(SegmentInfo {
                segment_id: segment_id(edge_id, start),
                start,
                path,
            });
        }
    }
    out.sort_by_key(|s| s.start);
    Ok(out)
}

pub fn read_segment(seg: &SegmentInfo) -> io::Result<Vec<RawRecord>> {
    read_lines(&seg.path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: u64) -> RawRecord {
        RawRecord {
            window_index: i,
            features: vec![i as f64, 0.5],
            score: 1.0,
        }
    }

    #[test]
    fn rolls_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Spool::open(dir.path(), "e1", 4).unwrap();
        for i in 0..10 {
            s.append(&rec(i)).unwrap();
        }
        let closed = closed_segments(dir.path(), "e1").unwrap();
        assert_eq!(closed.len(), 2);
        assert_eq!(closed[0].segment_id, "e1-000000000000");
        assert_eq!(closed[1].segment_id, "e1-000000000004");
        assert_eq!(s.open_segment_records(), 2);
        drop(s);
        let mut s = Spool::open(dir.path(), "e1", 4).unwrap();
        assert_eq!(s.last_window(), Some(9));
        assert!(s.append(&rec(9)).is_err());
        s.append(&rec(10)).unwrap();
        assert_eq!(s.open_segment_records(), 3);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Spool::open(dir.path(), "e1", 100).unwrap();
        for i in 0..3 {
            s.append(&rec(i)).unwrap();
        }
        drop(s);
        let open = segment_file(dir.path(), 0, OPEN_EXT);
        let mut f = OpenOptions::new().append(true).open(&open).unwrap();
        f.write_all(b"{\"features\":[3.0,").unwrap();
        drop(f);
        let mut s = Spool::open(dir.path(), "e1", 100).unwrap();
        assert_eq!(s.last_window(), Some(2));
        s.append(&rec(3)).unwrap();
        s.close_current().unwrap();
        let seg = &closed_segments(dir.path(), "e1").unwrap()[0];
        let idx: Vec<u64> = read_segment(seg).unwrap().iter().map(|r| r.window_index).collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn watermark_survives_upload() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Spool::open(dir.path(), "e1", 100).unwrap();
        for i in 0..5 {
            s.append(&rec(i)).unwrap();
        }
        let seg = s.close_current().unwrap().unwrap();
        fs::remove_file(&seg.path).unwrap();
        drop(s);
        let s = Spool::open(dir.path(), "e1", 100).unwrap();
        assert_eq!(s.last_window(), Some(4));
    }
}
