//! Independent verification oracles: Monte Carlo area estimation,
//! exhaustive assignment enumeration and finite-difference gradients.
//!
//! These routines deliberately avoid the closed-form implementations they
//! are used to verify; they depend only on the domain types. The enclosing
//! circle needed by [`mc_gciou`] is recomputed locally from its definition.

use crate::error::{Error, Result};
use crate::geom::Circle;
use crate::matching::Assignment;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 mixing step; used to derive independent per-trial seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn bounding_box(a: &Circle, b: &Circle) -> (f64, f64, f64, f64) {
    let x0 = (a.x - a.r).min(b.x - b.r);
    let x1 = (a.x + a.r).max(b.x + b.r);
    let y0 = (a.y - a.r).min(b.y - b.r);
    let y1 = (a.y + a.r).max(b.y + b.r);
    (x0, x1, y0, y1)
}

fn inside(c: &Circle, x: f64, y: f64) -> bool {
    let dx = x - c.x;
    let dy = y - c.y;
    dx * dx + dy * dy <= c.r * c.r
}

/// Monte Carlo estimate of the intersection area of two circles.
///
/// Samples uniformly over the bounding box of the pair and returns
/// `(estimate, standard_error)`. Requires `n >= 1000`.
pub fn mc_intersection_area(a: &Circle, b: &Circle, n: u64, seed: u64) -> Result<(f64, f64)> {
    a.validate()?;
    b.validate()?;
    debug_assert!(n >= 1_000, "mc_intersection_area needs n >= 1e3");
    let (x0, x1, y0, y1) = bounding_box(a, b);
    let box_area = (x1 - x0) * (y1 - y0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..n {
        let x = rng.gen_range(x0..x1);
        let y = rng.gen_range(y0..y1);
        if inside(a, x, y) && inside(b, x, y) {
            hits += 1;
        }
    }
    let p = hits as f64 / n as f64;
    let stderr = box_area * (p * (1.0 - p) / n as f64).sqrt();
    Ok((box_area * p, stderr))
}

/// Monte Carlo gCIoU: intersection and union estimated from one sample pass,
/// combined with the exact enclosing-circle area (recomputed here from its
/// definition, not taken from the geometry module).
///
/// Returns `(estimate, standard_error)` where the standard error propagates
/// the binomial errors of the two hit counters.
pub fn mc_gciou(a: &Circle, b: &Circle, n: u64, seed: u64) -> Result<(f64, f64)> {
    a.validate()?;
    b.validate()?;
    debug_assert!(n >= 1_000, "mc_gciou needs n >= 1e3");
    let (x0, x1, y0, y1) = bounding_box(a, b);
    let box_area = (x1 - x0) * (y1 - y0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut hits_i, mut hits_u) = (0u64, 0u64);
    for _ in 0..n {
        let x = rng.gen_range(x0..x1);
        let y = rng.gen_range(y0..y1);
        let ia = inside(a, x, y);
        let ib = inside(b, x, y);
        if ia && ib {
            hits_i += 1;
        }
        if ia || ib {
            hits_u += 1;
        }
    }
    let nf = n as f64;
    let inter = box_area * hits_i as f64 / nf;
    let union = box_area * hits_u as f64 / nf;
    let se_i = box_area * ((hits_i as f64 / nf) * (1.0 - hits_i as f64 / nf) / nf).sqrt();
    let se_u = box_area * ((hits_u as f64 / nf) * (1.0 - hits_u as f64 / nf) / nf).sqrt();

    // Smallest circle containing both inputs, from the definition.
    let d = (a.x - b.x).hypot(a.y - b.y);
    let enc_r = if d + a.r.min(b.r) <= a.r.max(b.r) { a.r.max(b.r) } else { (d + a.r + b.r) / 2.0 };
    let enc_area = std::f64::consts::PI * enc_r * enc_r;

    let estimate = inter / union - (enc_area - union) / enc_area;
    // d(g)/d(inter) = 1/union ; d(g)/d(union) = -inter/union^2 + 1/enc_area
    let gi = 1.0 / union;
    let gu = -inter / (union * union) + 1.0 / enc_area;
    let stderr = ((gi * se_i).powi(2) + (gu * se_u).powi(2)).sqrt();
    Ok((estimate, stderr))
}

/// Maximum row count accepted by the exhaustive assignment oracle.
pub const BRUTE_FORCE_MAX_ROWS: usize = 8;

/// Exhaustive-permutation optimal assignment with lexicographic tie-break:
/// among equal-cost optima the pairing whose `(row, col)` sequence is
/// lexicographically smallest wins.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> Result<Assignment> {
    let rows = cost.len();
    if rows > BRUTE_FORCE_MAX_ROWS {
        return Err(Error::TooLarge { limit: BRUTE_FORCE_MAX_ROWS, got: rows });
    }
    if rows == 0 {
        return Ok(Assignment { pairs: Vec::new() });
    }
    let cols = cost[0].len();
    if rows > cols {
        return Err(Error::ShapeError { context: "assignment cost matrix", expected: rows, got: cols });
    }
    for (i, row) in cost.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::ShapeError { context: "assignment cost matrix", expected: cols, got: row.len() });
        }
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteCost { row: i, col: j });
            }
        }
    }

    let mut best_cost = f64::INFINITY;
    let mut best: Vec<usize> = Vec::new();
    let mut current = vec![usize::MAX; rows];
    let mut used = vec![false; cols];

    // Columns are tried in ascending order per row, so the first optimum
    // found is the lexicographically smallest one.
    fn recurse(
        cost: &[Vec<f64>],
        row: usize,
        acc: f64,
        current: &mut Vec<usize>,
        used: &mut Vec<bool>,
        best_cost: &mut f64,
        best: &mut Vec<usize>,
    ) {
        if row == cost.len() {
            if acc < *best_cost {
                *best_cost = acc;
                *best = current.clone();
            }
            return;
        }
        for col in 0..used.len() {
            if !used[col] {
                used[col] = true;
                current[row] = col;
                recurse(cost, row + 1, acc + cost[row][col], current, used, best_cost, best);
                used[col] = false;
            }
        }
    }
    recurse(cost, 0, 0.0, &mut current, &mut used, &mut best_cost, &mut best);

    Ok(Assignment { pairs: best.into_iter().enumerate().collect() })
}

/// Central finite differences: `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_grad<F: Fn(&[f64]) -> f64>(f: &F, point: &[f64], h: f64) -> Result<Vec<f64>> {
    assert!(h > 0.0, "finite difference step must be positive");
    let mut grad = Vec::with_capacity(point.len());
    let mut p = point.to_vec();
    for i in 0..point.len() {
        p[i] = point[i] + h;
        let hi = f(&p);
        p[i] = point[i] - h;
        let lo = f(&p);
        p[i] = point[i];
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::NonFiniteFunction);
        }
        grad.push((hi - lo) / (2.0 * h));
    }
    Ok(grad)
}
