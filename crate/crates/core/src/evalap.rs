//! Detection evaluation: greedy matching under circle IoU and COCO-style
//! average precision with size buckets.
//!
//! The main AP averages over the ten cIoU thresholds 0.50:0.05:0.95 using
//! 101-point interpolated precision. Size buckets use circle area `pi r^2`
//! in pixel units: small below `32^2`, medium in `[32^2, 96^2)`. Bucketed
//! metrics apply ignore rules on both sides: out-of-range ground truths are
//! ignored, detections matched to ignored ground truths do not count, and
//! unmatched detections outside the range are dropped rather than counted
//! as false positives.

use crate::error::{Error, Result};
use crate::geom::{self, Circle};
use crate::synthgen::{AnnotationFile, PredictionFile};
use std::collections::BTreeMap;

/// Area threshold between small and medium objects.
pub const SMALL_AREA_MAX: f64 = 32.0 * 32.0;
/// Upper area bound of the medium bucket.
pub const MEDIUM_AREA_MAX: f64 = 96.0 * 96.0;

/// The ten cIoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// A scored detection in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Detection {
    pub circle: Circle,
    pub score: f64,
}

/// AP value together with a degenerate-denominator flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApValue {
    pub value: f64,
    /// True when there were no ground truths; the AP is defined as 0 then.
    pub no_ground_truth: bool,
}

/// Full evaluation report.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ApReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ap_s: f64,
    pub ap_m: f64,
    pub per_threshold: Vec<ThresholdBreakdown>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// AP at one cIoU threshold, overall and per size bucket.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ThresholdBreakdown {
    pub threshold: f64,
    pub ap: f64,
    pub ap_small: f64,
    pub ap_medium: f64,
}

/// Detection ordering: score descending, then radius descending, then input
/// order.
fn sort_order(dets: &[Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                dets[b]
                    .circle
                    .r
                    .partial_cmp(&dets[a].circle.r)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(a.cmp(&b))
    });
    idx
}

/// Greedy per-image matching: in score order each prediction claims the
/// unmatched ground truth with the highest cIoU at or above the threshold.
/// Returns true-positive flags in the input order of `preds`.
pub fn greedy_match(preds: &[Detection], gts: &[Circle], thresh: f64) -> Vec<bool> {
    let mut flags = vec![false; preds.len()];
    let mut used = vec![false; gts.len()];
    for &pi in &sort_order(preds) {
        let mut best: Option<(f64, usize)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if used[gi] {
                continue;
            }
            let iou = geom::ciou(&preds[pi].circle, gt).unwrap_or(0.0);
            if iou >= thresh && best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, gi));
            }
        }
        if let Some((_, gi)) = best {
            used[gi] = true;
            flags[pi] = true;
        }
    }
    flags
}

/// 101-point interpolated average precision from scored TP/FP flags.
///
/// Detections are sorted by score descending (stable under ties, so callers
/// control tie order); the precision envelope is sampled at recalls
/// 0.00, 0.01, ..., 1.00.
pub fn average_precision(detections: &[(f64, bool)], n_gt: usize) -> ApValue {
    if n_gt == 0 {
        return ApValue { value: 0.0, no_ground_truth: true };
    }
    let mut dets = detections.to_vec();
    dets.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut points = Vec::with_capacity(dets.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, is_tp) in &dets {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    // precision envelope: best precision at any recall >= r
    let mut ap = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let env = points
            .iter()
            .filter(|(recall, _)| *recall + 1e-12 >= r)
            .map(|(_, p)| *p)
            .fold(0.0f64, f64::max);
        ap += env;
    }
    ApValue { value: ap / 101.0, no_ground_truth: false }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outcome {
    Tp,
    Fp,
    Ignored,
}

/// Matches one image under a size-range filter with ignore semantics.
fn match_image_with_range(
    preds: &[Detection],
    gts: &[Circle],
    thresh: f64,
    range: (f64, f64),
) -> Vec<(f64, Outcome)> {
    let in_range = |c: &Circle| {
        let area = std::f64::consts::PI * c.r * c.r;
        area >= range.0 && area < range.1
    };
    let counted: Vec<usize> = (0..gts.len()).filter(|&i| in_range(&gts[i])).collect();
    let ignored: Vec<usize> = (0..gts.len()).filter(|&i| !in_range(&gts[i])).collect();
    let mut used = vec![false; gts.len()];
    let mut out = Vec::with_capacity(preds.len());
    for &pi in &sort_order(preds) {
        let best_of = |pool: &[usize], used: &[bool]| -> Option<(f64, usize)> {
            let mut best: Option<(f64, usize)> = None;
            for &gi in pool {
                if used[gi] {
                    continue;
                }
                let iou = geom::ciou(&preds[pi].circle, &gts[gi]).unwrap_or(0.0);
                if iou >= thresh && best.is_none_or(|(b, _)| iou > b) {
                    best = Some((iou, gi));
                }
            }
            best
        };
        let outcome = if let Some((_, gi)) = best_of(&counted, &used) {
            used[gi] = true;
            Outcome::Tp
        } else if let Some((_, gi)) = best_of(&ignored, &used) {
            used[gi] = true;
            Outcome::Ignored
        } else if in_range(&preds[pi].circle) {
            Outcome::Fp
        } else {
            Outcome::Ignored
        };
        out.push((preds[pi].score, outcome));
    }
    out
}

fn bucket_ap(
    images: &BTreeMap<u64, (Vec<Detection>, Vec<Circle>)>,
    thresh: f64,
    range: (f64, f64),
) -> ApValue {
    let mut dets: Vec<(f64, bool)> = Vec::new();
    let mut n_gt = 0usize;
    for (preds, gts) in images.values() {
        let in_range = |c: &Circle| {
            let area = std::f64::consts::PI * c.r * c.r;
            area >= range.0 && area < range.1
        };
        n_gt += gts.iter().filter(|g| in_range(g)).count();
        for (score, outcome) in match_image_with_range(preds, gts, thresh, range) {
            match outcome {
                Outcome::Tp => dets.push((score, true)),
                Outcome::Fp => dets.push((score, false)),
                Outcome::Ignored => {}
            }
        }
    }
    average_precision(&dets, n_gt)
}

/// Computes the evaluation report from ground-truth annotations and scored
/// predictions grouped by image id.
pub fn ap_summary(gt: &AnnotationFile, pred: &PredictionFile) -> Result<ApReport> {
    let mut images: BTreeMap<u64, (Vec<Detection>, Vec<Circle>)> = BTreeMap::new();
    for img in &gt.images {
        images.insert(img.id, (Vec::new(), Vec::new()));
    }
    for ann in &gt.annotations {
        let entry = images
            .get_mut(&ann.image_id)
            .ok_or(Error::MissingImage { image_id: ann.image_id })?;
        entry.1.push(Circle::new(ann.x, ann.y, ann.r));
    }
    for p in &pred.predictions {
        let entry = images
            .get_mut(&p.image_id)
            .ok_or(Error::MissingImage { image_id: p.image_id })?;
        entry.0.push(Detection { circle: Circle::new(p.x, p.y, p.r), score: p.score });
    }

    let full = (0.0, f64::INFINITY);
    let small = (0.0, SMALL_AREA_MAX);
    let medium = (SMALL_AREA_MAX, MEDIUM_AREA_MAX);

    let mut per_threshold = Vec::new();
    let mut warnings = Vec::new();
    let (mut sum, mut sum_s, mut sum_m) = (0.0, 0.0, 0.0);
    let (mut ap50, mut ap75) = (0.0, 0.0);
    for (ti, t) in coco_thresholds().into_iter().enumerate() {
        let all = bucket_ap(&images, t, full);
        let s = bucket_ap(&images, t, small);
        let m = bucket_ap(&images, t, medium);
        if ti == 0 {
            if all.no_ground_truth {
                warnings.push("no ground truths".to_string());
            }
            if s.no_ground_truth {
                warnings.push("no small ground truths; AP_S reported as 0".to_string());
            }
            if m.no_ground_truth {
                warnings.push("no medium ground truths; AP_M reported as 0".to_string());
            }
        }
        if ti == 0 {
            ap50 = all.value;
        }
        if ti == 5 {
            ap75 = all.value;
        }
        sum += all.value;
        sum_s += s.value;
        sum_m += m.value;
        per_threshold.push(ThresholdBreakdown {
            threshold: t,
            ap: all.value,
            ap_small: s.value,
            ap_medium: m.value,
        });
    }
    Ok(ApReport {
        ap: sum / 10.0,
        ap50,
        ap75,
        ap_s: sum_s / 10.0,
        ap_m: sum_m / 10.0,
        per_threshold,
        warnings,
    })
}
