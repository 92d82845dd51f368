//! Classification/regression losses and optimal set-to-set matching between
//! predicted and ground-truth circles.
//!
//! The matching cost couples a focal classification term with the circle
//! regression loss; the assignment minimizing the total cost is found with a
//! Hungarian solver and refined to the lexicographically smallest optimum so
//! results are reproducible under cost ties.

use crate::error::{Error, Result};
use crate::geom::{self, Circle};
use crate::segloss::{self, MaskPatch};

/// Probability clamp applied before logarithms.
const PROB_EPS: f64 = 1e-6;

/// Tolerance used when deciding whether a candidate pairing still achieves
/// the optimal total cost during lexicographic refinement.
const TIE_EPS: f64 = 1e-9;

/// Loss weights and focal parameters.
///
/// Defaults: `alpha = 0.25`, `gamma = 0.1`, focal weight 2.0 inside matching
/// and 1.0 in the training loss, `lambda_gciou = 2.0`, `lambda_c = 5.0`,
/// `lambda_dice = 8.0`, `lambda_bce = 2.0`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub lambda_focal_match: f64,
    pub lambda_focal_loss: f64,
    pub lambda_gciou: f64,
    pub lambda_c: f64,
    pub lambda_dice: f64,
    pub lambda_bce: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.25,
            gamma: 0.1,
            lambda_focal_match: 2.0,
            lambda_focal_loss: 1.0,
            lambda_gciou: 2.0,
            lambda_c: 5.0,
            lambda_dice: 8.0,
            lambda_bce: 2.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.lambda_focal_match,
            self.lambda_focal_loss,
            self.lambda_gciou,
            self.lambda_c,
            self.lambda_dice,
            self.lambda_bce,
        ];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidAssignment { reason: "loss weights must be >= 0".into() });
        }
        if !(0.0..=1.0).contains(&self.alpha) || !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::InvalidAssignment {
                reason: "alpha must lie in [0,1] and gamma must be >= 0".into(),
            });
        }
        Ok(())
    }
}

/// A scored circle prediction with optional mask output.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub circle: Circle,
    /// Foreground probability after sigmoid, in (0, 1).
    pub class_prob: f64,
    pub mask: Option<MaskPatch>,
}

/// Ground-truth class label: a foreground object or "no object".
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GtLabel {
    Foreground,
    NoObject,
}

/// A ground-truth entry; the mask patch, when present, is the RoI-aligned
/// crop of the instance mask.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub circle: Circle,
    pub label: GtLabel,
    pub mask: Option<MaskPatch>,
}

/// A one-to-one matching between ground truths and predictions.
///
/// `pairs[k] = (gt_index, pred_index)`; indices are distinct within each
/// side and pairs are sorted by ground-truth index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
}

/// Focal loss for a single foreground probability.
///
/// Positive: `-alpha (1-p)^gamma ln p`; negative: `-(1-alpha) p^gamma ln(1-p)`.
/// The probability is silently clamped to `[1e-6, 1 - 1e-6]` before the logs.
pub fn focal_loss(p: f64, positive: bool, cfg: &LossConfig) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if positive {
        -cfg.alpha * (1.0 - p).powf(cfg.gamma) * p.ln()
    } else {
        -(1.0 - cfg.alpha) * p.powf(cfg.gamma) * (1.0 - p).ln()
    }
}

/// L1 distance between circle parameter triples.
pub fn l1_circle(c: &Circle, chat: &Circle) -> Result<f64> {
    c.validate()?;
    chat.validate()?;
    Ok((c.x - chat.x).abs() + (c.y - chat.y).abs() + (c.r - chat.r).abs())
}

/// Circle regression loss: `lambda_gciou * (1 - gciou) + lambda_c * l1`.
pub fn circle_loss(c: &Circle, chat: &Circle, cfg: &LossConfig) -> Result<f64> {
    Ok(cfg.lambda_gciou * (1.0 - geom::gciou(c, chat)?) + cfg.lambda_c * l1_circle(c, chat)?)
}

/// Matching cost matrix, one row per foreground ground truth and one column
/// per prediction. Callers must exclude "no object" entries beforehand.
pub fn match_cost_matrix(
    preds: &[Prediction],
    gts: &[GroundTruth],
    cfg: &LossConfig,
) -> Result<Vec<Vec<f64>>> {
    if preds.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    debug_assert!(
        gts.iter().all(|g| g.label == GtLabel::Foreground),
        "no-object rows must be excluded before matching"
    );
    let mut cost = Vec::with_capacity(gts.len());
    for gt in gts {
        let mut row = Vec::with_capacity(preds.len());
        for pred in preds {
            let focal = cfg.lambda_focal_match * focal_loss(pred.class_prob, true, cfg);
            row.push(focal + circle_loss(&gt.circle, &pred.circle, cfg)?);
        }
        cost.push(row);
    }
    Ok(cost)
}

/// Hungarian solver state for a rectangular cost matrix (`rows <= cols`),
/// restricted to a subset of rows/columns of the full matrix.
fn hungarian_value(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> (f64, Vec<usize>) {
    let n = rows.len();
    let m = cols.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    // Shortest augmenting path formulation with potentials; 1-indexed with a
    // virtual column 0.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[rows[i0 - 1]][cols[j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    let mut total = 0.0;
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
            total += cost[rows[p[j] - 1]][cols[j - 1]];
        }
    }
    (total, row_to_col)
}

/// Optimal assignment minimizing the total cost, with deterministic
/// tie-break: among equal-cost optima the lexicographically smallest pairing
/// by `(row, col)` is returned.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let rows = cost.len();
    if rows == 0 {
        return Ok(Assignment { pairs: Vec::new() });
    }
    let cols = cost[0].len();
    if rows > cols {
        return Err(Error::ShapeError { context: "hungarian cost matrix", expected: rows, got: cols });
    }
    for (i, row) in cost.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::ShapeError { context: "hungarian cost matrix", expected: cols, got: row.len() });
        }
        for (j, c) in row.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::NonFiniteCost { row: i, col: j });
            }
        }
    }

    let all_rows: Vec<usize> = (0..rows).collect();
    let all_cols: Vec<usize> = (0..cols).collect();
    let (optimum, _) = hungarian_value(cost, &all_rows, &all_cols);
    let eps = TIE_EPS * (1.0 + optimum.abs());

    // Fix rows in order, choosing the smallest column that still allows the
    // remaining rows to reach the optimum.
    let mut used = vec![false; cols];
    let mut pairs = Vec::with_capacity(rows);
    let mut prefix = 0.0;
    for i in 0..rows {
        let tail_rows: Vec<usize> = (i + 1..rows).collect();
        let mut chosen = None;
        for j in 0..cols {
            if used[j] {
                continue;
            }
            let tail_cols: Vec<usize> =
                (0..cols).filter(|&c| !used[c] && c != j).collect();
            let (tail, _) = hungarian_value(cost, &tail_rows, &tail_cols);
            if prefix + cost[i][j] + tail <= optimum + eps {
                chosen = Some(j);
                break;
            }
        }
        let j = chosen.expect("an optimal column always exists");
        used[j] = true;
        prefix += cost[i][j];
        pairs.push((i, j));
    }
    Ok(Assignment { pairs })
}

/// Filters foreground ground truths, builds the matching cost and solves it.
/// Pair indices refer to the original `gts` slice.
pub fn match_sets(
    preds: &[Prediction],
    gts: &[GroundTruth],
    cfg: &LossConfig,
) -> Result<Assignment> {
    let fg: Vec<usize> =
        (0..gts.len()).filter(|&i| gts[i].label == GtLabel::Foreground).collect();
    let fg_gts: Vec<GroundTruth> = fg.iter().map(|&i| gts[i].clone()).collect();
    if fg_gts.is_empty() {
        return Ok(Assignment { pairs: Vec::new() });
    }
    let cost = match_cost_matrix(preds, &fg_gts, cfg)?;
    let asn = hungarian(&cost)?;
    Ok(Assignment { pairs: asn.pairs.into_iter().map(|(row, col)| (fg[row], col)).collect() })
}

/// Per-term decomposition of the training loss.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub classification: f64,
    pub circle: f64,
    pub segmentation: f64,
}

/// Total training loss: focal classification over all predictions (matched
/// as positives, unmatched as negatives), circle loss over matched pairs and
/// segmentation loss over matched pairs where both masks are present.
pub fn total_loss(
    preds: &[Prediction],
    gts: &[GroundTruth],
    assignment: &Assignment,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let n_fg = gts.iter().filter(|g| g.label == GtLabel::Foreground).count();
    let expected_pairs = n_fg.min(preds.len());
    if assignment.pairs.len() != expected_pairs {
        return Err(Error::InvalidAssignment {
            reason: format!("expected {} pairs, got {}", expected_pairs, assignment.pairs.len()),
        });
    }
    let mut matched_pred = vec![false; preds.len()];
    let mut matched_gt = vec![false; gts.len()];
    for &(gi, pi) in &assignment.pairs {
        if gi >= gts.len() || pi >= preds.len() {
            return Err(Error::InvalidAssignment { reason: format!("pair ({gi}, {pi}) out of range") });
        }
        if gts[gi].label != GtLabel::Foreground {
            return Err(Error::InvalidAssignment { reason: format!("ground truth {gi} is not foreground") });
        }
        if matched_gt[gi] || matched_pred[pi] {
            return Err(Error::InvalidAssignment { reason: "assignment is not injective".into() });
        }
        matched_gt[gi] = true;
        matched_pred[pi] = true;
    }

    let mut classification = 0.0;
    for (pi, pred) in preds.iter().enumerate() {
        classification +=
            cfg.lambda_focal_loss * focal_loss(pred.class_prob, matched_pred[pi], cfg);
    }
    let mut circle = 0.0;
    let mut segmentation = 0.0;
    for &(gi, pi) in &assignment.pairs {
        circle += circle_loss(&gts[gi].circle, &preds[pi].circle, cfg)?;
        if let (Some(gm), Some(pm)) = (&gts[gi].mask, &preds[pi].mask) {
            segmentation += segloss::seg_loss(gm, pm, cfg);
        }
    }
    Ok(LossBreakdown {
        total: classification + circle + segmentation,
        classification,
        circle,
        segmentation,
    })
}
