//! Closed-form circle geometry: areas, circle IoU, smallest enclosing circle,
//! generalized circle IoU and their analytic gradients.
//!
//! All inputs are circles with strictly positive, finite radius. The pairwise
//! operations classify the configuration (containment / disjoint / lens) with
//! a 1e-12 slack; the slack only selects the closed form, the returned values
//! stay continuous across the branch boundaries.

use crate::error::{Error, Result};

/// Classification slack for containment/tangency boundaries.
const GEOM_EPS: f64 = 1e-12;

/// Margin within which a gradient request is treated as sitting on a
/// non-differentiable configuration.
const SINGULAR_EPS: f64 = 1e-9;

/// A circle with center `(x, y)` and radius `r`.
///
/// Coordinates are unitless; the same type carries normalized `[0, 1]`
/// anchors and pixel-space detections.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Circle {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

impl Circle {
    pub fn new(x: f64, y: f64, r: f64) -> Self {
        Circle { x, y, r }
    }

    /// Checks the geometry invariants: finite fields and `r > 0`.
    pub fn validate(&self) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite() && self.r.is_finite()) {
            return Err(Error::InvalidCircle {
                x: self.x,
                y: self.y,
                r: self.r,
                reason: "non-finite field",
            });
        }
        if self.r <= 0.0 {
            return Err(Error::InvalidCircle {
                x: self.x,
                y: self.y,
                r: self.r,
                reason: "radius must be positive",
            });
        }
        Ok(())
    }

    /// Distance between the centers of `self` and `other`.
    pub fn center_distance(&self, other: &Circle) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Area of a circle, `pi * r^2`.
pub fn circle_area(c: &Circle) -> Result<f64> {
    c.validate()?;
    Ok(std::f64::consts::PI * c.r * c.r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PairCase {
    /// One circle contains the other (`d <= |ra - rb|`).
    Containment,
    /// No overlap (`d >= ra + rb`).
    Disjoint,
    /// Proper lens overlap.
    Lens,
}

fn classify(d: f64, ra: f64, rb: f64) -> PairCase {
    if d <= (ra - rb).abs() + GEOM_EPS {
        PairCase::Containment
    } else if d + GEOM_EPS >= ra + rb {
        PairCase::Disjoint
    } else {
        PairCase::Lens
    }
}

fn lens_area(d: f64, ra: f64, rb: f64) -> f64 {
    let u1 = ((d * d + ra * ra - rb * rb) / (2.0 * d * ra)).clamp(-1.0, 1.0);
    let u2 = ((d * d + rb * rb - ra * ra) / (2.0 * d * rb)).clamp(-1.0, 1.0);
    let p = ((ra + rb) * (ra + rb) - d * d) * (d * d - (ra - rb) * (ra - rb));
    ra * ra * u1.acos() + rb * rb * u2.acos() - 0.5 * p.max(0.0).sqrt()
}

/// Intersection area of two circles via the two-circle closed form.
pub fn intersection_area(a: &Circle, b: &Circle) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let d = a.center_distance(b);
    Ok(match classify(d, a.r, b.r) {
        PairCase::Containment => {
            let rmin = a.r.min(b.r);
            std::f64::consts::PI * rmin * rmin
        }
        PairCase::Disjoint => 0.0,
        PairCase::Lens => lens_area(d, a.r, b.r),
    })
}

/// Circle IoU: `intersection / union`, in `[0, 1]`.
pub fn ciou(a: &Circle, b: &Circle) -> Result<f64> {
    let i = intersection_area(a, b)?;
    let union = std::f64::consts::PI * (a.r * a.r + b.r * b.r) - i;
    Ok((i / union).clamp(0.0, 1.0))
}

/// Smallest circle containing both input circles.
pub fn enclosing_circle(a: &Circle, b: &Circle) -> Result<Circle> {
    a.validate()?;
    b.validate()?;
    let d = a.center_distance(b);
    let (rmin, rmax) = if a.r <= b.r { (a.r, b.r) } else { (b.r, a.r) };
    if d + rmin <= rmax + GEOM_EPS {
        // One circle already contains the other; ties return `a`.
        return Ok(if b.r > a.r { *b } else { *a });
    }
    let radius = (d + a.r + b.r) / 2.0;
    // Midpoint of the two extreme boundary points along the center line.
    let t = (radius - a.r) / d;
    Ok(Circle::new(
        a.x + (b.x - a.x) * t,
        a.y + (b.y - a.y) * t,
        radius,
    ))
}

/// Generalized circle IoU: cIoU minus the fraction of the smallest enclosing
/// circle not covered by the union. Range `(-1, 1]`; provides gradient signal
/// for disjoint circles where cIoU is flat at zero.
pub fn gciou(a: &Circle, b: &Circle) -> Result<f64> {
    let i = intersection_area(a, b)?;
    let union = std::f64::consts::PI * (a.r * a.r + b.r * b.r) - i;
    let enc = enclosing_circle(a, b)?;
    let enc_area = std::f64::consts::PI * enc.r * enc.r;
    let iou = (i / union).clamp(0.0, 1.0);
    Ok(iou - (enc_area - union).max(0.0) / enc_area)
}

/// Per-case partial derivatives of the pair quantities w.r.t. `d` and `ra`.
struct PairDerivs {
    i: f64,
    di_dd: f64,
    di_dra: f64,
    union: f64,
    du_dd: f64,
    du_dra: f64,
    enc: f64,
    denc_dd: f64,
    denc_dra: f64,
}

fn pair_derivs(d: f64, ra: f64, rb: f64) -> Result<PairDerivs> {
    use std::f64::consts::PI;
    if (d - (ra + rb)).abs() <= SINGULAR_EPS {
        return Err(Error::NonDifferentiablePoint { detail: "externally tangent circles" });
    }
    if (d - (ra - rb).abs()).abs() <= SINGULAR_EPS {
        return Err(Error::NonDifferentiablePoint { detail: "internal tangency boundary" });
    }
    let (i, di_dd, di_dra) = match classify(d, ra, rb) {
        PairCase::Containment => {
            if ra < rb {
                (PI * ra * ra, 0.0, 2.0 * PI * ra)
            } else {
                (PI * rb * rb, 0.0, 0.0)
            }
        }
        PairCase::Disjoint => (0.0, 0.0, 0.0),
        PairCase::Lens => {
            let u1 = (d * d + ra * ra - rb * rb) / (2.0 * d * ra);
            let u2 = (d * d + rb * rb - ra * ra) / (2.0 * d * rb);
            let s1 = (1.0 - u1 * u1).max(f64::MIN_POSITIVE).sqrt();
            let s2 = (1.0 - u2 * u2).max(f64::MIN_POSITIVE).sqrt();
            let p = ((ra + rb) * (ra + rb) - d * d) * (d * d - (ra - rb) * (ra - rb));
            let sqrt_p = p.max(f64::MIN_POSITIVE).sqrt();

            let du1_dd = (d * d - ra * ra + rb * rb) / (2.0 * d * d * ra);
            let du2_dd = (d * d - rb * rb + ra * ra) / (2.0 * d * d * rb);
            let du1_dra = (ra * ra + rb * rb - d * d) / (2.0 * d * ra * ra);
            let du2_dra = -ra / (d * rb);
            let dp_dd = 4.0 * d * (ra * ra + rb * rb - d * d);
            let dp_dra = 2.0
                * ((ra + rb) * (d * d - (ra - rb) * (ra - rb))
                    - (ra - rb) * ((ra + rb) * (ra + rb) - d * d));

            let i = lens_area(d, ra, rb);
            let di_dd = -ra * ra * du1_dd / s1 - rb * rb * du2_dd / s2 - dp_dd / (4.0 * sqrt_p);
            let di_dra = 2.0 * ra * u1.clamp(-1.0, 1.0).acos() - ra * ra * du1_dra / s1
                - rb * rb * du2_dra / s2
                - dp_dra / (4.0 * sqrt_p);
            (i, di_dd, di_dra)
        }
    };

    let union = PI * (ra * ra + rb * rb) - i;
    let du_dd = -di_dd;
    let du_dra = 2.0 * PI * ra - di_dra;

    let (rmin, rmax) = if ra <= rb { (ra, rb) } else { (rb, ra) };
    let (enc, denc_dd, denc_dra) = if d + rmin <= rmax + GEOM_EPS {
        let denc_dra = if ra > rb { 2.0 * PI * ra } else { 0.0 };
        (PI * rmax * rmax, 0.0, denc_dra)
    } else {
        let radius = (d + ra + rb) / 2.0;
        // d(pi R^2)/dR = 2 pi R, dR/dd = dR/dra = 1/2.
        (PI * radius * radius, PI * radius, PI * radius)
    };

    Ok(PairDerivs { i, di_dd, di_dra, union, du_dd, du_dra, enc, denc_dd, denc_dra })
}

fn chain_to_params(a: &Circle, b: &Circle, df_dd: f64, df_dra: f64) -> [f64; 3] {
    if df_dd == 0.0 {
        return [0.0, 0.0, df_dra];
    }
    let d = a.center_distance(b);
    [df_dd * (a.x - b.x) / d, df_dd * (a.y - b.y) / d, df_dra]
}

/// Analytic gradient of `ciou(a, b)` w.r.t. `(a.x, a.y, a.r)`.
pub fn grad_ciou(a: &Circle, b: &Circle) -> Result<[f64; 3]> {
    a.validate()?;
    b.validate()?;
    let p = pair_derivs(a.center_distance(b), a.r, b.r)?;
    let dciou_dd = (p.di_dd * p.union - p.i * p.du_dd) / (p.union * p.union);
    let dciou_dra = (p.di_dra * p.union - p.i * p.du_dra) / (p.union * p.union);
    Ok(chain_to_params(a, b, dciou_dd, dciou_dra))
}

/// Analytic gradient of `gciou(a, b)` w.r.t. `(a.x, a.y, a.r)`.
///
/// Errors with [`Error::NonDifferentiablePoint`] within `1e-9` of the
/// singular configurations (tangency, containment boundary, identical
/// circles); callers may fall back to finite differences.
pub fn grad_gciou(a: &Circle, b: &Circle) -> Result<[f64; 3]> {
    a.validate()?;
    b.validate()?;
    let p = pair_derivs(a.center_distance(b), a.r, b.r)?;
    let usq = p.union * p.union;
    let esq = p.enc * p.enc;
    // gciou = I/U - (E - U)/E = I/U - 1 + U/E
    let dg_dd = (p.di_dd * p.union - p.i * p.du_dd) / usq
        + (p.du_dd * p.enc - p.union * p.denc_dd) / esq;
    let dg_dra = (p.di_dra * p.union - p.i * p.du_dra) / usq
        + (p.du_dra * p.enc - p.union * p.denc_dra) / esq;
    Ok(chain_to_params(a, b, dg_dd, dg_dra))
}
