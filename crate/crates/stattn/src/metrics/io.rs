//! JSON readers and writers for detection files, ground-truth files, and
//! evaluation reports.
//!
//! A detections file is an array of `{image_id, bbox: [x, y, w, h], score,
//! cls}` objects; a ground-truth file drops the score. Semantic violations
//! (non-finite numbers, scores outside `[0, 1]`, empty ground-truth boxes)
//! are reported as parse errors naming the file and the offending entry.

use std::fs;
use std::path::Path;

use super::{Detection, EvalReport, GroundTruthBox};
use crate::error::{Error, Result};

fn parse_error(path: &Path, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message,
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {}", path.display(), e),
        ))
    })
}

fn check_box(kind: &str, i: usize, b: &super::BBox, strict: bool) -> std::result::Result<(), String> {
    for (name, v) in [("x", b.x), ("y", b.y), ("w", b.w), ("h", b.h)] {
        if !v.is_finite() {
            return Err(format!("{} {}: bbox field {} is not finite", kind, i, name));
        }
    }
    if strict {
        if !(b.w > 0.0) || !(b.h > 0.0) {
            return Err(format!("{} {}: bbox extents must be positive", kind, i));
        }
    } else if b.w < 0.0 || b.h < 0.0 {
        return Err(format!("{} {}: bbox extents must be nonnegative", kind, i));
    }
    Ok(())
}

/// Reads a detections file, sorted or not; callers needing the matching
/// precondition sort afterwards.
pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let text = read_text(path)?;
    let dets: Vec<Detection> =
        serde_json::from_str(&text).map_err(|e| parse_error(path, e.to_string()))?;
    for (i, d) in dets.iter().enumerate() {
        check_box("detection", i, &d.bbox, false).map_err(|m| parse_error(path, m))?;
        if !d.score.is_finite() || !(0.0..=1.0).contains(&d.score) {
            return Err(parse_error(
                path,
                format!("detection {}: score {} outside [0, 1]", i, d.score),
            ));
        }
    }
    Ok(dets)
}

/// Reads a ground-truth file; boxes must have positive extents.
pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthBox>> {
    let text = read_text(path)?;
    let gts: Vec<GroundTruthBox> =
        serde_json::from_str(&text).map_err(|e| parse_error(path, e.to_string()))?;
    for (i, g) in gts.iter().enumerate() {
        check_box("ground-truth box", i, &g.bbox, true).map_err(|m| parse_error(path, m))?;
    }
    Ok(gts)
}

/// Writes an evaluation report as pretty-printed JSON.
pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| parse_error(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
