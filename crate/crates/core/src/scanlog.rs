//! Line-delimited JSON scan logs.
//!
//! Each line is one frame:
//!
//! ```text
//! {"format_version":1,"frame":0,"timestamp":0.0,
//!  "ego_pose":{"x":0.0,"y":0.0,"theta":0.0},
//!  "points":[[x,y],...],
//!  "labels":[id,...],          // optional, one per point
//!  "truth":[{...},...]}        // optional, see TruthState
//! ```

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::fitting::{Point, Pose2};
use crate::simulator::{ScanFrame, TruthState};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    format_version: u32,
    frame: usize,
    timestamp: f64,
    ego_pose: Pose2,
    points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    truth: Vec<TruthState>,
}

pub fn write_frames<W: Write>(mut out: W, frames: &[ScanFrame]) -> Result<()> {
    for (k, f) in frames.iter().enumerate() {
        let rec = Record {
            format_version: FORMAT_VERSION,
            frame: k,
            timestamp: f.timestamp,
            ego_pose: f.ego_pose,
            points: f.points.iter().map(|p| [p.x, p.y]).collect(),
            labels: f.labels.clone(),
            truth: f.truth.clone(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Result of reading a log: the complete frames and whether the last line was cut off.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanLog {
    pub frames: Vec<ScanFrame>,
    pub truncated: bool,
}

/// Reads a log. A malformed final line without a trailing newline is treated as
/// truncation and skipped; any other malformed line is a data error.
pub fn read_frames<R: BufRead>(mut input: R, path: &str) -> Result<ScanLog> {
    let mut frames = Vec::new();
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            break;
        }
        line_no += 1;
        let complete = line.ends_with('\n');
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let data_err = |message: String| Error::Data { path: path.to_string(), line: line_no, message };
        let rec: Record = match serde_json::from_str(text) {
            Ok(r) => r,
            Err(e) if !complete && e.is_eof() => {
                log::warn!("{path}:{line_no}: truncated frame skipped");
                return Ok(ScanLog { frames, truncated: true });
            }
            Err(e) => return Err(data_err(e.to_string())),
        };
        if rec.format_version != FORMAT_VERSION {
            return Err(data_err(format!("unsupported format_version {}", rec.format_version)));
        }
        if let Some(l) = &rec.labels {
            if l.len() != rec.points.len() {
                return Err(data_err(format!("{} labels for {} points", l.len(), rec.points.len())));
            }
        }
        if let Some(prev) = frames.last().map(|f: &ScanFrame| f.timestamp) {
            if rec.timestamp.partial_cmp(&prev) != Some(std::cmp::Ordering::Greater) {
                return Err(data_err(format!("timestamp {} not after {prev}", rec.timestamp)));
            }
        }
        frames.push(ScanFrame {
            timestamp: rec.timestamp,
            ego_pose: rec.ego_pose,
            points: rec.points.iter().map(|p| Point::new(p[0], p[1])).collect(),
            labels: rec.labels,
            truth: rec.truth,
        });
    }
    Ok(ScanLog { frames, truncated: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(t: f64) -> ScanFrame {
        ScanFrame {
            timestamp: t,
            ego_pose: Pose2 { x: 1.0, y: 2.0, theta: 0.1 },
            points: vec![Point::new(0.1, 0.2), Point::new(1.0 / 3.0, -2.5)],
            labels: None,
            truth: vec![],
        }
    }

    #[test]
    fn round_trip() {
        let frames = vec![frame(0.0), frame(0.1)];
        let mut buf = Vec::new();
        write_frames(&mut buf, &frames).unwrap();
        let log = read_frames(buf.as_slice(), "mem").unwrap();
        assert!(!log.truncated);
        assert_eq!(log.frames, frames);
    }

    #[test]
    fn truncated_tail_is_skipped() {
        let mut buf = Vec::new();
        write_frames(&mut buf, &[frame(0.0), frame(0.1)]).unwrap();
        buf.truncate(buf.len() - 20);
        let log = read_frames(buf.as_slice(), "mem").unwrap();
        assert!(log.truncated);
        assert_eq!(log.frames.len(), 1);
    }

    #[test]
    fn bad_line_reports_line_number() {
        let mut buf = Vec::new();
        write_frames(&mut buf, &[frame(0.0)]).unwrap();
        buf.extend_from_slice(b"{\"format_version\":1,\"oops\":1}\n");
        match read_frames(buf.as_slice(), "mem") {
            Err(Error::Data { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
