//! JSON-lines annotation records.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line as written on disk. Times are frames when `num_frames` is given,
/// seconds when `duration_seconds` and `fps` are given instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    video: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_frames: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    duration_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fps: Option<f64>,
    start: f64,
    end: f64,
    query: Vec<String>,
}

/// A validated annotation with times in dense-frame units.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub id: String,
    /// Feature file stem; defaults to `id`.
    pub video: String,
    pub num_frames: usize,
    pub start: f64,
    pub end: f64,
    pub query: Vec<String>,
}

impl RawRecord {
    fn resolve(self) -> Result<AnnotationRecord> {
        let fail = |m: String| Err(Error::Validation(format!("record {}: {m}", self.id)));
        let (num_frames, scale) = match (self.num_frames, self.duration_seconds, self.fps) {
            (Some(n), None, None) => (n, 1.0),
            (None, Some(d), Some(fps)) if d > 0.0 && fps > 0.0 && (d * fps).is_finite() => ((d * fps).round() as usize, fps),
            (None, Some(_), Some(_)) => return fail("duration_seconds and fps must be positive".into()),
            _ => return fail("give either num_frames or duration_seconds with fps".into()),
        };
        let (start, end) = (self.start * scale, self.end * scale);
        if num_frames == 0 {
            return fail("num_frames must be positive".into());
        }
        if !(start.is_finite() && end.is_finite()) || start < 0.0 || start > end || end > num_frames as f64 {
            return fail(format!("segment ({start}, {end}) violates 0 <= start <= end <= {num_frames}"));
        }
        if self.query.is_empty() {
            return fail("query is empty".into());
        }
        Ok(AnnotationRecord {
            video: self.video.unwrap_or_else(|| self.id.clone()),
            id: self.id,
            num_frames,
            start,
            end,
            query: self.query,
        })
    }
}

pub fn parse_annotations(text: &str, path: &Path) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(raw.resolve()?);
    }
    Ok(out)
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, path)
}

/// Writes frame-based records, one per line.
pub fn write_annotations(records: &[AnnotationRecord], path: &Path) -> Result<()> {
    let mut text = String::new();
    for r in records {
        let raw = RawRecord {
            id: r.id.clone(),
            video: (r.video != r.id).then(|| r.video.clone()),
            num_frames: Some(r.num_frames),
            duration_seconds: None,
            fps: None,
            start: r.start,
            end: r.end,
            query: r.query.clone(),
        };
        text.push_str(&serde_json::to_string(&raw).expect("annotation serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
