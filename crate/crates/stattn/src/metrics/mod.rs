//! Detection-quality evaluation: IoU matching, 101-point AP at the 0.5
//! threshold, and a three-way error taxonomy (wrong class, poor
//! localization, missed ground truth) reported as counts per 100 ground-truth
//! boxes.
//!
//! Matching is greedy in descending score order with a one-to-one rule: only
//! a true positive consumes its ground-truth box. Thresholds are fixed at
//! [`FG_IOU`] and [`BG_IOU`]. All fractional-score ties resolve by input
//! order and IoU ties by lowest ground-truth index, so every result is
//! deterministic.

pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Foreground threshold: a detection at or above this IoU can match.
pub const FG_IOU: f64 = 0.5;
/// Background threshold: below this IoU a ground-truth box counts as
/// untouched.
pub const BG_IOU: f64 = 0.1;

/// Axis-aligned box, top-left corner plus extents, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// One predicted box with its confidence and category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BBox,
    pub score: f64,
    pub cls: u32,
}

/// One annotated box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub image_id: String,
    pub bbox: BBox,
    pub cls: u32,
}

/// Outcome category of a single detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionLabel {
    Tp,
    ClsError,
    LocError,
    Fp,
}

/// Outcome category of a single ground-truth box: consumed by a true
/// positive, covered above [`BG_IOU`] without being matched, or missed
/// entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GtStatus {
    Matched,
    Covered,
    Missed,
}

/// Full matching result; all vectors are parallel to the inputs.
#[derive(Debug, Clone)]
pub struct MatchOutcome {
    pub labels: Vec<DetectionLabel>,
    /// Ground-truth index consumed by each detection (true positives only).
    pub matched_gt: Vec<Option<usize>>,
    pub gt_status: Vec<GtStatus>,
}

/// One detection's entry in a per-image match list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionMatch {
    /// Index into the evaluated detection list.
    pub detection: usize,
    pub label: DetectionLabel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched_gt: Option<usize>,
}

/// Match lists for one image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageMatches {
    pub image_id: String,
    pub detections: Vec<DetectionMatch>,
    /// Indices into the ground-truth list of boxes nothing came near.
    pub missed_gts: Vec<usize>,
}

/// Headline numbers plus the per-image breakdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap50: f64,
    pub e_cls: f64,
    pub e_loc: f64,
    pub e_miss: f64,
    pub images: Vec<ImageMatches>,
}

/// Intersection-over-union of two boxes; 0 when the union has no area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    let inter = ix.max(0.0) * iy.max(0.0);
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn validate_inputs(dets: &[Detection], gts: &[GroundTruthBox]) -> Result<()> {
    for pair in dets.windows(2) {
        if pair[0].score < pair[1].score {
            return Err(Error::Precondition(
                "detections must be sorted by descending score".into(),
            ));
        }
    }
    for (i, d) in dets.iter().enumerate() {
        if !d.score.is_finite() || !(0.0..=1.0).contains(&d.score) {
            return Err(Error::Precondition(format!(
                "detection {}: score {} outside [0, 1]",
                i, d.score
            )));
        }
        if d.bbox.w < 0.0 || d.bbox.h < 0.0 {
            return Err(Error::Precondition(format!(
                "detection {}: negative box extents",
                i
            )));
        }
    }
    for (i, g) in gts.iter().enumerate() {
        if !(g.bbox.w > 0.0) || !(g.bbox.h > 0.0) {
            return Err(Error::Precondition(format!(
                "ground-truth box {}: extents must be positive",
                i
            )));
        }
    }
    Ok(())
}

/// Labels every detection and ground-truth box.
///
/// Detections are visited in their (descending-score) input order. Each one
/// looks at the not-yet-consumed ground truth of its image: a same-class box
/// at IoU ≥ `fg_iou` makes it a true positive and consumes that box; failing
/// that, a different-class box at IoU ≥ `fg_iou` makes it a classification
/// error; failing that, a same-class box with IoU in `[bg_iou, fg_iou)`
/// makes it a localization error; otherwise it is a false positive. A
/// ground-truth box no detection reaches at IoU ≥ `bg_iou` is missed.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    fg_iou: f64,
    bg_iou: f64,
) -> Result<MatchOutcome> {
    if !(0.0..=1.0).contains(&bg_iou) || !(0.0..=1.0).contains(&fg_iou) || bg_iou >= fg_iou {
        return Err(Error::Domain(format!(
            "need 0 <= bg < fg <= 1, got bg {} fg {}",
            bg_iou, fg_iou
        )));
    }
    validate_inputs(dets, gts)?;

    let mut consumed = vec![false; gts.len()];
    let mut labels = Vec::with_capacity(dets.len());
    let mut matched_gt = vec![None; dets.len()];
    for (di, det) in dets.iter().enumerate() {
        let mut best_same: Option<(f64, usize)> = None;
        let mut best_diff: Option<(f64, usize)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if consumed[gi] || gt.image_id != det.image_id {
                continue;
            }
            let v = iou(&det.bbox, &gt.bbox);
            let slot = if gt.cls == det.cls {
                &mut best_same
            } else {
                &mut best_diff
            };
            // strict improvement keeps the lowest index on ties
            if slot.map_or(true, |(bv, _)| v > bv) {
                *slot = Some((v, gi));
            }
        }
        let label = if let Some((_, gi)) = best_same.filter(|&(v, _)| v >= fg_iou) {
            consumed[gi] = true;
            matched_gt[di] = Some(gi);
            DetectionLabel::Tp
        } else if best_diff.is_some_and(|(v, _)| v >= fg_iou) {
            DetectionLabel::ClsError
        } else if best_same.is_some_and(|(v, _)| v >= bg_iou) {
            DetectionLabel::LocError
        } else {
            DetectionLabel::Fp
        };
        labels.push(label);
    }

    let gt_status = gts
        .iter()
        .enumerate()
        .map(|(gi, gt)| {
            if consumed[gi] {
                GtStatus::Matched
            } else if dets
                .iter()
                .any(|d| d.image_id == gt.image_id && iou(&d.bbox, &gt.bbox) >= bg_iou)
            {
                GtStatus::Covered
            } else {
                GtStatus::Missed
            }
        })
        .collect();

    Ok(MatchOutcome {
        labels,
        matched_gt,
        gt_status,
    })
}

fn ap_from_flags(tp_flags: &[bool], n_gt: usize) -> f64 {
    let mut points = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (k, &hit) in tp_flags.iter().enumerate() {
        if hit {
            tp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut sum = 0.0;
    for i in 0..=100u32 {
        let r = f64::from(i) / 100.0;
        let best = points
            .iter()
            .filter(|&&(recall, _)| recall >= r)
            .map(|&(_, precision)| precision)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

/// 101-point interpolated average precision at IoU 0.5, computed per class
/// and averaged over the classes present in the ground truth.
pub fn ap50(dets: &[Detection], gts: &[GroundTruthBox]) -> Result<f64> {
    if gts.is_empty() {
        return Err(Error::UndefinedAp);
    }
    let outcome = match_detections(dets, gts, FG_IOU, BG_IOU)?;
    ap50_from_outcome(dets, gts, &outcome)
}

fn ap50_from_outcome(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    outcome: &MatchOutcome,
) -> Result<f64> {
    if gts.is_empty() {
        return Err(Error::UndefinedAp);
    }
    let mut classes: Vec<u32> = gts.iter().map(|g| g.cls).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut total = 0.0;
    for &c in &classes {
        let n_gt = gts.iter().filter(|g| g.cls == c).count();
        let flags: Vec<bool> = dets
            .iter()
            .zip(&outcome.labels)
            .filter(|(d, _)| d.cls == c)
            .map(|(_, &l)| l == DetectionLabel::Tp)
            .collect();
        total += ap_from_flags(&flags, n_gt);
    }
    Ok(total / classes.len() as f64)
}

/// Evaluates everything at the fixed thresholds: AP plus the three error
/// rates as counts per 100 ground-truth boxes, with per-image match lists.
pub fn error_decomposition(dets: &[Detection], gts: &[GroundTruthBox]) -> Result<EvalReport> {
    if gts.is_empty() {
        return Err(Error::UndefinedAp);
    }
    let outcome = match_detections(dets, gts, FG_IOU, BG_IOU)?;
    let ap50 = ap50_from_outcome(dets, gts, &outcome)?;
    let n_gt = gts.len() as f64;
    let count = |want: DetectionLabel| {
        outcome.labels.iter().filter(|&&l| l == want).count() as f64
    };
    let missed = outcome
        .gt_status
        .iter()
        .filter(|&&s| s == GtStatus::Missed)
        .count() as f64;

    let mut ids: Vec<&str> = gts
        .iter()
        .map(|g| g.image_id.as_str())
        .chain(dets.iter().map(|d| d.image_id.as_str()))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let images = ids
        .into_iter()
        .map(|id| ImageMatches {
            image_id: id.to_string(),
            detections: dets
                .iter()
                .enumerate()
                .filter(|(_, d)| d.image_id == id)
                .map(|(di, _)| DetectionMatch {
                    detection: di,
                    label: outcome.labels[di],
                    matched_gt: outcome.matched_gt[di],
                })
                .collect(),
            missed_gts: gts
                .iter()
                .enumerate()
                .filter(|(gi, g)| {
                    g.image_id == id && outcome.gt_status[*gi] == GtStatus::Missed
                })
                .map(|(gi, _)| gi)
                .collect(),
        })
        .collect();

    Ok(EvalReport {
        ap50,
        e_cls: 100.0 * count(DetectionLabel::ClsError) / n_gt,
        e_loc: 100.0 * count(DetectionLabel::LocError) / n_gt,
        e_miss: 100.0 * missed / n_gt,
        images,
    })
}
