//! Helpers shared by the integration suites: an independent brute-force
//! matcher and recall-grid AP integrator for the detection metrics, plus a
//! randomized scene generator.
//!
//! The oracle re-derives everything from the documented matching rules with
//! its own code paths — candidate lists sorted instead of running maxima, an
//! axis-overlap IoU, an explicit walk over the 101-point recall grid — so
//! exact agreement with the library is evidence rather than tautology.

#![allow(dead_code)]

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stattn::metrics::{BBox, Detection, GroundTruthBox};

pub const ORACLE_FG: f64 = 0.5;
pub const ORACLE_BG: f64 = 0.1;

/// What became of one detection, per the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    /// Claimed the ground-truth box with this index.
    Hit(usize),
    WrongClass,
    Mislocalized,
    Spurious,
}

/// What became of one ground-truth box, per the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtFate {
    Claimed,
    Grazed,
    Unseen,
}

fn span(lo_a: f64, len_a: f64, lo_b: f64, len_b: f64) -> f64 {
    let hi = (lo_a + len_a).min(lo_b + len_b);
    (hi - lo_a.max(lo_b)).max(0.0)
}

pub fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = span(a.x, a.w, b.x, b.w) * span(a.y, a.h, b.y, b.h);
    let union = a.w * a.h + b.w * b.h - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

pub struct BruteOutcome {
    pub fates: Vec<Fate>,
    pub gt_fates: Vec<GtFate>,
}

/// Exhaustive re-labeling: every detection, in input order, ranks all
/// not-yet-claimed ground truth of its image by (IoU descending, index
/// ascending) and applies the tier rules verbatim.
pub fn brute_match(dets: &[Detection], gts: &[GroundTruthBox], fg: f64, bg: f64) -> BruteOutcome {
    let mut claimed = vec![false; gts.len()];
    let mut fates = Vec::with_capacity(dets.len());
    for det in dets {
        let mut same: Vec<(f64, usize)> = Vec::new();
        let mut other: Vec<(f64, usize)> = Vec::new();
        for (gi, gt) in gts.iter().enumerate() {
            if claimed[gi] || gt.image_id != det.image_id {
                continue;
            }
            let v = oracle_iou(&det.bbox, &gt.bbox);
            if gt.cls == det.cls {
                same.push((v, gi));
            } else {
                other.push((v, gi));
            }
        }
        let rank = |list: &mut Vec<(f64, usize)>| {
            list.sort_by(|l, r| r.0.total_cmp(&l.0).then(l.1.cmp(&r.1)));
            list.first().copied()
        };
        let best_same = rank(&mut same);
        let best_other = rank(&mut other);
        let fate = match best_same {
            Some((v, gi)) if v >= fg => {
                claimed[gi] = true;
                Fate::Hit(gi)
            }
            _ if matches!(best_other, Some((v, _)) if v >= fg) => Fate::WrongClass,
            Some((v, _)) if v >= bg => Fate::Mislocalized,
            _ => Fate::Spurious,
        };
        fates.push(fate);
    }
    let gt_fates = gts
        .iter()
        .enumerate()
        .map(|(gi, gt)| {
            if claimed[gi] {
                GtFate::Claimed
            } else {
                let touched = dets
                    .iter()
                    .any(|d| d.image_id == gt.image_id && oracle_iou(&d.bbox, &gt.bbox) >= bg);
                if touched {
                    GtFate::Grazed
                } else {
                    GtFate::Unseen
                }
            }
        })
        .collect();
    BruteOutcome { fates, gt_fates }
}

/// 101-point interpolated AP from a per-rank hit list: at each grid recall
/// `i/100`, the best precision among curve points reaching that recall.
pub fn grid_ap(hits: &[bool], n_gt: usize) -> f64 {
    let mut curve = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (rank, &hit) in hits.iter().enumerate() {
        tp += usize::from(hit);
        let fp = rank + 1 - tp;
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut acc = 0.0;
    for i in 0..=100u32 {
        let grid_r = f64::from(i) / 100.0;
        let mut best = 0.0f64;
        for &(r, p) in &curve {
            if r >= grid_r && p > best {
                best = p;
            }
        }
        acc += best;
    }
    acc / 101.0
}

/// Class-averaged AP at the fixed thresholds; `None` when ground truth is
/// empty and the quantity is undefined.
pub fn brute_ap50(dets: &[Detection], gts: &[GroundTruthBox]) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let outcome = brute_match(dets, gts, ORACLE_FG, ORACLE_BG);
    let mut classes: Vec<u32> = gts.iter().map(|g| g.cls).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut acc = 0.0;
    for &c in &classes {
        let n_gt = gts.iter().filter(|g| g.cls == c).count();
        let hits: Vec<bool> = dets
            .iter()
            .zip(&outcome.fates)
            .filter(|(d, _)| d.cls == c)
            .map(|(_, f)| matches!(f, Fate::Hit(_)))
            .collect();
        acc += grid_ap(&hits, n_gt);
    }
    Some(acc / classes.len() as f64)
}

pub struct BruteReport {
    pub ap50: f64,
    pub e_cls: f64,
    pub e_loc: f64,
    pub e_miss: f64,
    pub wrong_class: usize,
    pub mislocalized: usize,
    pub unseen: usize,
}

pub fn brute_eval(dets: &[Detection], gts: &[GroundTruthBox]) -> Option<BruteReport> {
    let ap50 = brute_ap50(dets, gts)?;
    let outcome = brute_match(dets, gts, ORACLE_FG, ORACLE_BG);
    let wrong_class = outcome
        .fates
        .iter()
        .filter(|f| matches!(f, Fate::WrongClass))
        .count();
    let mislocalized = outcome
        .fates
        .iter()
        .filter(|f| matches!(f, Fate::Mislocalized))
        .count();
    let unseen = outcome
        .gt_fates
        .iter()
        .filter(|f| matches!(f, GtFate::Unseen))
        .count();
    let n = gts.len() as f64;
    Some(BruteReport {
        ap50,
        e_cls: 100.0 * wrong_class as f64 / n,
        e_loc: 100.0 * mislocalized as f64 / n,
        e_miss: 100.0 * unseen as f64 / n,
        wrong_class,
        mislocalized,
        unseen,
    })
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn pick(rng: &mut ChaCha8Rng, n: u64) -> u64 {
    rng.next_u64() % n
}

/// A small randomized evaluation scene: at most 10 detections, 10 ground
/// truth boxes and 3 classes spread over one or two images, mixing jittered
/// copies of the ground truth (true positives, localization and class
/// slips) with unrelated boxes, scores already sorted descending.
pub fn random_scene(seed: u64) -> (Vec<Detection>, Vec<GroundTruthBox>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_images = 1 + pick(&mut rng, 2) as usize;
    let n_classes = 1 + pick(&mut rng, 3);
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for img in 0..n_images {
        let id = format!("frame-{img}");
        let n_gt = pick(&mut rng, 6) as usize;
        let mut local: Vec<(BBox, u32)> = Vec::new();
        for _ in 0..n_gt {
            let b = BBox::new(
                unit(&mut rng) * 20.0,
                unit(&mut rng) * 20.0,
                0.5 + unit(&mut rng) * 5.0,
                0.5 + unit(&mut rng) * 5.0,
            );
            let cls = pick(&mut rng, n_classes) as u32;
            local.push((b, cls));
            gts.push(GroundTruthBox {
                image_id: id.clone(),
                bbox: b,
                cls,
            });
        }
        let mut proposals: Vec<(BBox, u32)> = Vec::new();
        for &(b, cls) in &local {
            if unit(&mut rng) < 0.65 {
                let wobble = unit(&mut rng) * 1.4;
                let jittered = BBox::new(
                    b.x + (unit(&mut rng) - 0.5) * b.w * wobble,
                    b.y + (unit(&mut rng) - 0.5) * b.h * wobble,
                    (b.w * (1.0 + (unit(&mut rng) - 0.5) * wobble)).max(0.2),
                    (b.h * (1.0 + (unit(&mut rng) - 0.5) * wobble)).max(0.2),
                );
                let det_cls = if unit(&mut rng) < 0.7 {
                    cls
                } else {
                    pick(&mut rng, n_classes) as u32
                };
                proposals.push((jittered, det_cls));
            }
        }
        for _ in 0..pick(&mut rng, 3) {
            let b = BBox::new(
                unit(&mut rng) * 30.0,
                unit(&mut rng) * 30.0,
                0.3 + unit(&mut rng) * 4.0,
                0.3 + unit(&mut rng) * 4.0,
            );
            proposals.push((b, pick(&mut rng, n_classes) as u32));
        }
        proposals.truncate(5);
        for (b, cls) in proposals {
            dets.push(Detection {
                image_id: id.clone(),
                bbox: b,
                score: unit(&mut rng),
                cls,
            });
        }
    }
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    (dets, gts)
}
