//! Batch upload of closed spool segments as RAW_BATCH chunks.

use std::fs;
use std::path::Path;

use serde::Serialize;
use tracing::{info, warn};

use super::link::CloudLink;
use super::spool::{closed_segments, read_segment};
use super::EdgeError;
use crate::protocol::{AckStatus, Envelope, Payload, RawBatchChunkPayload};

pub const MAX_CHUNK_RECORDS: usize = 500;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct UploadReport {
    pub segments_uploaded: usize,
    pub records: usize,
    pub chunks: usize,
    /// Segments left in place because an upload failed.
    pub segments_retained: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl UploadReport {
    pub fn is_complete(&self) -> bool {
        self.error.is_none()
    }
}

/// Splits `n` records into chunk sizes of at most [`MAX_CHUNK_RECORDS`].
/// An empty segment still travels as one empty chunk.
pub fn chunk_sizes(n: usize) -> Vec<usize> {
    if n == 0 {
        return vec![0];
    }
    (0..n.div_ceil(MAX_CHUNK_RECORDS))
        .map(|i| MAX_CHUNK_RECORDS.min(n - i * MAX_CHUNK_RECORDS))
        .collect()
}

/// Sends every closed segment in `spool_dir`, oldest first. A segment file
/// is deleted only once the cloud has ACKed its final chunk; the first
/// failure stops the run and leaves that segment and all later ones for
/// the next trigger.
pub fn upload_closed_segments(
    link: &mut dyn CloudLink,
    spool_dir: &Path,
    edge_id: &str,
    next_seq: &mut u64,
    now: &dyn Fn() -> u64,
) -> Result<UploadReport, EdgeError> {
    let segments = closed_segments(spool_dir, edge_id).map_err(EdgeError::Spool)?;
    let mut report = UploadReport::default();
    for (i, seg) in segments.iter().enumerate() {
        let records = read_segment(seg).map_err(EdgeError::Spool)?;
        let sizes = chunk_sizes(records.len());
        let total = sizes.len() as u32;
        let mut offset = 0;
        let mut failure = None;
        for (ci, size) in sizes.iter().enumerate() {
            *next_seq += 1;
            let env = Envelope::new(
                edge_id,
                *next_seq,
                now(),
                Payload::RawBatch(RawBatchChunkPayload {
                    chunk_index: ci as u32,
                    total_chunks: total,
                    records: records[offset..offset + size].to_vec(),
                    segment_id: seg.segment_id.clone(),
                }),
            );
            offset += size;
            match link.request(&env) {
                Ok(ack) if ack.status == AckStatus::Ok => report.chunks += 1,
                Ok(ack) => {
                    failure = Some(format!(
                        "cloud refused chunk {ci} of {}: {}",
                        seg.segment_id,
                        ack.detail.unwrap_or_default()
                    ));
                    break;
                }
                Err(e) => {
                    failure = Some(format!("chunk {ci} of {}: {e}", seg.segment_id));
                    break;
                }
            }
        }
        if let Some(f) = failure {
            warn!(segment = %seg.segment_id, "{f}");
            report.segments_retained = segments.len() - i;
            report.error = Some(f);
            return Ok(report);
        }
        fs::remove_file(&seg.path).map_err(EdgeError::Spool)?;
        report.segments_uploaded += 1;
        report.records += records.len();
    }
    if report.segments_uploaded > 0 {
        info!(?report, "batch upload complete");
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunking_arithmetic() {
        assert_eq!(chunk_sizes(1200), vec![500, 500, 200]);
        assert_eq!(chunk_sizes(500), vec![500]);
        assert_eq!(chunk_sizes(501), vec![500, 1]);
        assert_eq!(chunk_sizes(0), vec![0]);
    }
}
