//! `check` subcommand: runs the oracle suites and reports one margin per
//! check. A check passes when its measured value stays at or below the
//! limit.

use circledet_core::attention::{
    self, CdaInit, CircleQuery, DeformableParams, FeatureGrid,
};
use circledet_core::error::Result;
use circledet_core::geom::{self, Circle};
use circledet_core::linalg::Matrix;
use circledet_core::matching::{self, GroundTruth, GtLabel, LossConfig, Prediction};
use circledet_core::oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Geom,
    Match,
    Attn,
    All,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub checks: Vec<CheckResult>,
}

impl CheckReport {
    fn push(&mut self, name: &str, measured: f64, limit: f64) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            measured,
            limit,
            pass: measured <= limit && measured.is_finite(),
        });
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn random_circle(rng: &mut ChaCha8Rng) -> Circle {
    Circle::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.2..2.5))
}

fn geom_suite(report: &mut CheckReport, seed: u64, trials: usize, sabotage: bool) -> Result<()> {
    // closed-form areas against the Monte Carlo oracle, 4 sigma bands
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_z = 0.0f64;
    for t in 0..trials {
        let a = random_circle(&mut rng);
        let b = random_circle(&mut rng);
        let mut exact = geom::intersection_area(&a, &b)?;
        if sabotage {
            // deliberate fault injection: flips the sign of the closed form
            exact = -exact;
        }
        let (est, se) = oracle::mc_intersection_area(&a, &b, 200_000, oracle::splitmix64(seed ^ t as u64))?;
        let z = if se == 0.0 {
            if (exact - est).abs() == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            (exact - est).abs() / (4.0 * se)
        };
        worst_z = worst_z.max(z);
    }
    report.push("geom/intersection_vs_mc", worst_z, 1.0);

    let mut worst_z = 0.0f64;
    for t in 0..trials {
        let a = random_circle(&mut rng);
        let b = random_circle(&mut rng);
        let exact = geom::gciou(&a, &b)?;
        let (est, se) =
            oracle::mc_gciou(&a, &b, 200_000, oracle::splitmix64(seed ^ (1000 + t) as u64))?;
        let z = if se == 0.0 {
            if (exact - est).abs() < 1e-12 { 0.0 } else { f64::INFINITY }
        } else {
            (exact - est).abs() / (4.0 * se)
        };
        worst_z = worst_z.max(z);
    }
    report.push("geom/gciou_vs_mc", worst_z, 1.0);

    // analytic gradient against central finite differences
    let mut worst_rel = 0.0f64;
    let mut checked = 0;
    while checked < trials * 5 {
        let a = random_circle(&mut rng);
        let b = random_circle(&mut rng);
        let g = match geom::grad_gciou(&a, &b) {
            Ok(g) => g,
            Err(_) => continue,
        };
        let f = |p: &[f64]| geom::gciou(&Circle::new(p[0], p[1], p[2]), &b).unwrap_or(f64::NAN);
        let fd = oracle::finite_diff_grad(&f, &[a.x, a.y, a.r], 1e-6)?;
        let num: f64 = g.iter().zip(&fd).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let den = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        worst_rel = worst_rel.max(num / den);
        checked += 1;
    }
    report.push("geom/grad_vs_finite_diff", worst_rel, 1e-5);

    // symmetry, translation and scale invariance
    let mut worst_sym = 0.0f64;
    let mut worst_shift = 0.0f64;
    let mut worst_scale = 0.0f64;
    let mut bound_violations = 0usize;
    for _ in 0..trials * 50 {
        let a = random_circle(&mut rng);
        let b = random_circle(&mut rng);
        let c = geom::ciou(&a, &b)?;
        let g = geom::gciou(&a, &b)?;
        worst_sym = worst_sym.max((c - geom::ciou(&b, &a)?).abs());
        worst_sym = worst_sym.max((g - geom::gciou(&b, &a)?).abs());
        let (tx, ty) = (rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
        let shift = |c: &Circle| Circle::new(c.x + tx, c.y + ty, c.r);
        worst_shift = worst_shift.max((g - geom::gciou(&shift(&a), &shift(&b))?).abs());
        let s = rng.gen_range(0.2..5.0);
        let scale = |c: &Circle| Circle::new(c.x * s, c.y * s, c.r * s);
        worst_scale = worst_scale.max((g - geom::gciou(&scale(&a), &scale(&b))?).abs());
        if !(0.0..=1.0).contains(&c) || g <= -1.0 || g > 1.0 + 1e-15 || g > c + 1e-15 {
            bound_violations += 1;
        }
    }
    report.push("geom/symmetry", worst_sym, 1e-12);
    report.push("geom/translation_invariance", worst_shift, 1e-12);
    report.push("geom/scale_invariance", worst_scale, 1e-9);
    report.push("geom/bounds_and_penalty_sign", bound_violations as f64, 0.0);

    // gCIoU keeps decreasing where cIoU is flat
    let a = Circle::new(0.0, 0.0, 1.0);
    let mut monotone_violations = 0usize;
    let mut prev = f64::INFINITY;
    let mut d = 2.0;
    while d <= 10.0 {
        let g = geom::gciou(&a, &Circle::new(d, 0.0, 1.0))?;
        if g >= prev || geom::ciou(&a, &Circle::new(d, 0.0, 1.0))? != 0.0 {
            monotone_violations += 1;
        }
        prev = g;
        d += 0.01;
    }
    report.push("geom/gciou_monotone_when_disjoint", monotone_violations as f64, 0.0);
    Ok(())
}

fn match_suite(report: &mut CheckReport, seed: u64, trials: usize) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_7463);
    let mut mismatches = 0usize;
    for t in 0..trials * 10 {
        let rows = rng.gen_range(1..=7);
        let cols = rng.gen_range(rows..=7);
        let cost: Vec<Vec<f64>> = if t % 2 == 0 {
            (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(0.0..1.0)).collect()).collect()
        } else {
            // duplicated-cost tie cases
            (0..rows)
                .map(|_| (0..cols).map(|_| [0.5, 1.0, 1.5, 2.0][rng.gen_range(0..4)]).collect())
                .collect()
        };
        if matching::hungarian(&cost)? != oracle::brute_force_assignment(&cost)? {
            mismatches += 1;
        }
    }
    report.push("match/hungarian_vs_brute_force", mismatches as f64, 0.0);

    let cfg = LossConfig::default();
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let preds: Vec<Prediction> = (0..8)
            .map(|_| Prediction {
                circle: Circle::new(
                    rng.gen_range(0.1..0.9),
                    rng.gen_range(0.1..0.9),
                    rng.gen_range(0.02..0.3),
                ),
                class_prob: rng.gen_range(0.05..0.95),
                mask: None,
            })
            .collect();
        let gts: Vec<GroundTruth> = (0..5)
            .map(|_| GroundTruth {
                circle: Circle::new(
                    rng.gen_range(0.1..0.9),
                    rng.gen_range(0.1..0.9),
                    rng.gen_range(0.02..0.3),
                ),
                label: GtLabel::Foreground,
                mask: None,
            })
            .collect();
        let cost = matching::match_cost_matrix(&preds, &gts, &cfg)?;
        for (i, row) in cost.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                let expected = cfg.lambda_focal_match
                    * matching::focal_loss(preds[j].class_prob, true, &cfg)
                    + matching::circle_loss(&gts[i].circle, &preds[j].circle, &cfg)?;
                worst = worst.max((c - expected).abs());
            }
        }
        // total loss equals the sum of independently recomputed components
        let asn = matching::match_sets(&preds, &gts, &cfg)?;
        let loss = matching::total_loss(&preds, &gts, &asn, &cfg)?;
        let matched: Vec<usize> = asn.pairs.iter().map(|&(_, p)| p).collect();
        let mut cls = 0.0;
        for (pi, p) in preds.iter().enumerate() {
            cls += cfg.lambda_focal_loss
                * matching::focal_loss(p.class_prob, matched.contains(&pi), &cfg);
        }
        let mut circ = 0.0;
        for &(gi, pi) in &asn.pairs {
            circ += matching::circle_loss(&gts[gi].circle, &preds[pi].circle, &cfg)?;
        }
        worst = worst.max((loss.total - (cls + circ)).abs());
    }
    report.push("match/loss_recomposition", worst, 1e-12);
    Ok(())
}

/// Grid with values exactly representable at low f32 precision so linear
/// combinations with dyadic coefficients stay exact.
fn dyadic_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> FeatureGrid {
    let data: Vec<f32> = (0..h * w * d).map(|_| rng.gen_range(-32i32..32) as f32 / 16.0).collect();
    FeatureGrid::new(h, w, d, data).expect("dyadic grid")
}

fn attn_suite(report: &mut CheckReport, seed: u64, trials: usize) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6174_746e);
    let d_model = 8usize;

    // modulated attention: exact linearity in r_ref / r
    let mut worst = 0.0f64;
    for _ in 0..trials * 20 {
        let anchor = Circle::new(
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.05..0.4),
        );
        let q = CircleQuery { z: vec![0.0; d_model], anchor };
        let key = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let r_ref: f64 = rng.gen_range(0.05..0.95);
        let base = attention::modulated_attention(key, &q, r_ref, 20.0)?;
        let doubled = attention::modulated_attention(key, &q, 2.0 * r_ref, 20.0)?;
        if doubled != 2.0 * base {
            worst = worst.max((doubled - 2.0 * base).abs());
        }
        let s: f64 = rng.gen_range(0.1..3.0);
        let scaled = attention::modulated_attention(key, &q, s * r_ref, 20.0)?;
        let rel = (scaled - s * base).abs() / base.abs().max(1e-300);
        worst = worst.max(rel);
    }
    report.push("attn/modulated_linear_in_ratio", worst, 1e-12);

    // deformable attention: linearity in F and center reduction at zero offsets
    let mut worst_lin = 0.0f64;
    let mut worst_center = 0.0f64;
    for t in 0..trials {
        let g1 = dyadic_grid(&mut rng, 8, 8, d_model);
        let g2 = dyadic_grid(&mut rng, 8, 8, d_model);
        let (a, b) = (0.5f64, 0.25f64);
        let mixed_data: Vec<f32> = g1
            .data()
            .iter()
            .zip(g2.data())
            .map(|(x, y)| (a as f32) * x + (b as f32) * y)
            .collect();
        let mixed = FeatureGrid::new(8, 8, d_model, mixed_data).expect("mixed grid");
        let heads = 2;
        let d_head = d_model / heads;
        let logits: Vec<Vec<f64>> =
            (0..heads).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let params = DeformableParams {
            value_proj: (0..heads)
                .map(|_| Matrix::seeded_uniform(d_head, d_model, &mut rng))
                .collect(),
            output_proj: (0..heads)
                .map(|_| Matrix::seeded_uniform(d_model, d_head, &mut rng))
                .collect(),
            attn: DeformableParams::attn_from_logits(&logits),
            offsets: attention::cda_reference_init(CdaInit::Random, heads, 3, seed ^ t as u64),
        };
        let anchor = Circle::new(
            rng.gen_range(0.2..0.8),
            rng.gen_range(0.2..0.8),
            rng.gen_range(0.05..0.3),
        );
        let q = CircleQuery { z: vec![0.0; d_model], anchor };
        let r_ref = rng.gen_range(0.1..0.9);
        let o1 = attention::circle_deformable_attention(&q, &params, r_ref, &g1)?;
        let o2 = attention::circle_deformable_attention(&q, &params, r_ref, &g2)?;
        let om = attention::circle_deformable_attention(&q, &params, r_ref, &mixed)?;
        for c in 0..d_model {
            worst_lin = worst_lin.max((om[c] - (a * o1[c] + b * o2[c])).abs());
        }

        let mut centered = params.clone();
        for row in centered.offsets.iter_mut() {
            for o in row.iter_mut() {
                o.dr = 0.0;
            }
        }
        let got = attention::circle_deformable_attention(&q, &centered, r_ref, &g1)?;
        let center = attention::bilinear_sample(&g1, anchor.x * 8.0 - 0.5, anchor.y * 8.0 - 0.5);
        let mut expected = vec![0.0; d_model];
        for head in 0..heads {
            let v = centered.value_proj[head].matvec(&center)?;
            let o = centered.output_proj[head].matvec(&v)?;
            for (e, x) in expected.iter_mut().zip(&o) {
                *e += x;
            }
        }
        for c in 0..d_model {
            worst_center = worst_center.max((got[c] - expected[c]).abs());
        }
    }
    report.push("attn/cda_linear_in_features", worst_lin, 1e-9);
    report.push("attn/cda_center_reduction", worst_center, 1e-9);

    // every deformable sample point stays inside the r_ref-scaled anchor circle
    let mut violations = 0usize;
    for _ in 0..trials * 1000 {
        let anchor = Circle::new(
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.01..0.45),
        );
        let r_ref: f64 = rng.gen_range(0.01..1.0);
        let (h, w) = (rng.gen_range(4..96), rng.gen_range(4..96));
        let mode = if rng.gen_bool(0.5) { CdaInit::Random } else { CdaInit::Sunflower };
        let offsets = attention::cda_reference_init(mode, 2, 4, rng.gen());
        let cx = anchor.x * w as f64 - 0.5;
        let cy = anchor.y * h as f64 - 0.5;
        let limit = r_ref * anchor.r * h.min(w) as f64;
        for row in attention::cda_sample_points(&anchor, &offsets, r_ref, h, w) {
            for (x, y) in row {
                if (x - cx).hypot(y - cy) > limit + 1e-9 {
                    violations += 1;
                }
            }
        }
    }
    report.push("attn/sample_locus_in_anchor", violations as f64, 0.0);

    // attention rows produced from logits are normalized
    let mut worst_row = 0.0f64;
    for _ in 0..trials * 10 {
        let logits: Vec<Vec<f64>> =
            (0..4).map(|_| (0..6).map(|_| rng.gen_range(-8.0..8.0)).collect()).collect();
        for row in DeformableParams::attn_from_logits(&logits) {
            worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    report.push("attn/softmax_rows_normalized", worst_row, 1e-9);

    // refinement: zero-delta identity and range preservation
    let mut worst_ident = 0.0f64;
    let mut range_violations = 0usize;
    for _ in 0..trials * 1000 {
        let anchor = Circle::new(
            rng.gen_range(0.01..0.99),
            rng.gen_range(0.01..0.99),
            rng.gen_range(0.01..0.99),
        );
        let same = attention::refine_anchor(&anchor, [0.0; 3])?;
        worst_ident = worst_ident
            .max((same.x - anchor.x).abs())
            .max((same.y - anchor.y).abs())
            .max((same.r - anchor.r).abs());
        let delta = [
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
        ];
        let moved = attention::refine_anchor(&anchor, delta)?;
        for v in [moved.x, moved.y, moved.r] {
            if !(v > 0.0 && v < 1.0) {
                range_violations += 1;
            }
        }
    }
    report.push("attn/refine_zero_delta_identity", worst_ident, 1e-9);
    report.push("attn/refine_stays_in_unit_cube", range_violations as f64, 0.0);

    // sunflower layout covers the disk with a near-zero centroid
    let layout = attention::cda_reference_init(CdaInit::Sunflower, 8, 4, 0);
    let (mut cx, mut cy, mut n) = (0.0, 0.0, 0usize);
    for row in &layout {
        for o in row {
            cx += o.dr * o.dtheta.cos();
            cy += o.dr * o.dtheta.sin();
            n += 1;
        }
    }
    report.push(
        "attn/cda_c_centroid_near_origin",
        (cx / n as f64).hypot(cy / n as f64),
        0.1,
    );
    Ok(())
}

/// Runs the requested suites. `trials` scales the sample counts; `sabotage`
/// injects a sign flip into the first geometry check so the harness can
/// prove it detects faults.
pub fn run_checks(suite: Suite, seed: u64, trials: usize, sabotage: bool) -> Result<CheckReport> {
    let mut report = CheckReport::default();
    let trials = trials.max(1);
    if matches!(suite, Suite::Geom | Suite::All) {
        geom_suite(&mut report, seed, trials, sabotage)?;
    }
    if matches!(suite, Suite::Match | Suite::All) {
        match_suite(&mut report, seed, trials)?;
    }
    if matches!(suite, Suite::Attn | Suite::All) {
        attn_suite(&mut report, seed, trials)?;
    }
    Ok(report)
}
