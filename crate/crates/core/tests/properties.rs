//! Property tests over the geometry, refinement and format invariants.

use circledet_core::attention::{self, FeatureGrid};
use circledet_core::geom::{self, Circle};
use circledet_core::synthgen;
use proptest::prelude::*;

fn arb_circle() -> impl Strategy<Value = Circle> {
    (-5.0..5.0f64, -5.0..5.0f64, 0.05..3.0f64).prop_map(|(x, y, r)| Circle::new(x, y, r))
}

proptest! {
    #[test]
    fn iou_symmetry_and_bounds(a in arb_circle(), b in arb_circle()) {
        let cab = geom::ciou(&a, &b).unwrap();
        let cba = geom::ciou(&b, &a).unwrap();
        prop_assert!((cab - cba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&cab));
        let gab = geom::gciou(&a, &b).unwrap();
        let gba = geom::gciou(&b, &a).unwrap();
        prop_assert!((gab - gba).abs() < 1e-12);
        prop_assert!(gab > -1.0 && gab <= 1.0 + 1e-15);
        // the enclosing-circle penalty only ever subtracts
        prop_assert!(gab <= cab + 1e-15);
    }

    #[test]
    fn iou_translation_invariance(
        a in arb_circle(),
        b in arb_circle(),
        tx in -10.0..10.0f64,
        ty in -10.0..10.0f64,
    ) {
        let shift = |c: &Circle| Circle::new(c.x + tx, c.y + ty, c.r);
        let g = geom::gciou(&a, &b).unwrap();
        let gs = geom::gciou(&shift(&a), &shift(&b)).unwrap();
        prop_assert!((g - gs).abs() < 1e-12);
    }

    #[test]
    fn enclosing_circle_contains_both(a in arb_circle(), b in arb_circle()) {
        let e = geom::enclosing_circle(&a, &b).unwrap();
        prop_assert!(e.center_distance(&a) + a.r <= e.r + 1e-9);
        prop_assert!(e.center_distance(&b) + b.r <= e.r + 1e-9);
    }

    #[test]
    fn refined_anchor_stays_normalized(
        x in 1e-4..0.9999f64,
        y in 1e-4..0.9999f64,
        r in 1e-4..0.9999f64,
        dx in -20.0..20.0f64,
        dy in -20.0..20.0f64,
        dr in -20.0..20.0f64,
    ) {
        let out = attention::refine_anchor(&Circle::new(x, y, r), [dx, dy, dr]).unwrap();
        for v in [out.x, out.y, out.r] {
            prop_assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn inverse_sigmoid_round_trip(t in 0.001..0.999f64) {
        let back = attention::sigmoid(attention::inverse_sigmoid(t));
        prop_assert!((back - t).abs() < 1e-12);
    }

    #[test]
    fn fgrid_round_trip(
        h in 1usize..6,
        w in 1usize..6,
        d in 1usize..5,
        seed in any::<u32>(),
    ) {
        // deterministic pseudo-random payload from the seed
        let mut state = seed as u64 | 1;
        let data: Vec<f32> = (0..h * w * d)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) as i32 % 1000) as f32 / 64.0
            })
            .collect();
        let grid = FeatureGrid::new(h, w, d, data).unwrap();
        let bytes = synthgen::fgrid_to_bytes(&grid);
        prop_assert_eq!(synthgen::fgrid_from_bytes(&bytes).unwrap(), grid);
    }
}
