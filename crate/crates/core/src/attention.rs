//! Circle-query decoder mechanics: sinusoidal positional encodings, query
//! composition, circle-modulated attention, deformable circle cross
//! attention and sigmoid-space anchor refinement.
//!
//! Conventions used throughout:
//! - anchors are normalized to `(0, 1)` in x, y and r;
//! - a feature grid pixel `(ix, iy)` has normalized position
//!   `((ix + 0.5) / W, (iy + 0.5) / H)`;
//! - radii are denormalized with `min(H, W)` so circles stay isotropic on
//!   non-square grids;
//! - normalized coordinates map to continuous grid indices as `u * W - 0.5`.

use crate::error::{Error, Result};
use crate::geom::Circle;
use crate::linalg::{Matrix, Mlp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Positional-encoding temperature used when no override is given.
pub const DEFAULT_PE_TEMPERATURE: f64 = 20.0;

/// Clamp bound for [`inverse_sigmoid`].
const LOGIT_EPS: f64 = 1e-5;

/// An H x W x D grid of image features, row-major and channel-last.
///
/// Values are stored as f32 to match the on-disk tensor format bit-exactly;
/// all arithmetic on samples is done in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    h: usize,
    w: usize,
    d: usize,
    data: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(h: usize, w: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if h == 0 || w == 0 || d == 0 {
            return Err(Error::ShapeError { context: "feature grid dims", expected: 1, got: 0 });
        }
        if data.len() != h * w * d {
            return Err(Error::ShapeError {
                context: "feature grid payload",
                expected: h * w * d,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeError { context: "feature grid non-finite value", expected: 0, got: 0 });
        }
        Ok(FeatureGrid { h, w, d, data })
    }

    pub fn constant(h: usize, w: usize, value: &[f32]) -> Result<Self> {
        let d = value.len();
        let mut data = Vec::with_capacity(h * w * d);
        for _ in 0..h * w {
            data.extend_from_slice(value);
        }
        FeatureGrid::new(h, w, d, data)
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Feature vector stored at integer grid cell `(iy, ix)`.
    pub fn feature(&self, iy: usize, ix: usize) -> &[f32] {
        let base = (iy * self.w + ix) * self.d;
        &self.data[base..base + self.d]
    }
}

/// A decoder query: content vector plus a normalized anchor circle.
#[derive(Clone, Debug, PartialEq)]
pub struct CircleQuery {
    pub z: Vec<f64>,
    pub anchor: Circle,
}

fn validate_anchor(anchor: &Circle) -> Result<()> {
    let ok = |v: f64| v.is_finite() && v > 0.0 && v < 1.0;
    if ok(anchor.x) && ok(anchor.y) && ok(anchor.r) {
        Ok(())
    } else {
        Err(Error::InvalidCircle {
            x: anchor.x,
            y: anchor.y,
            r: anchor.r,
            reason: "anchor must lie in the open unit cube",
        })
    }
}

/// Validates a circle fed to the positional encodings: finite fields in the
/// closed `[0, 1]` range (boundary values, including `r = 0`, are legal here).
fn validate_pe_circle(c: &Circle) -> Result<()> {
    let ok = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
    if ok(c.x) && ok(c.y) && ok(c.r) {
        Ok(())
    } else {
        Err(Error::InvalidCircle {
            x: c.x,
            y: c.y,
            r: c.r,
            reason: "encoded circle must lie in [0, 1]^3",
        })
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-odds with the input clamped to `[1e-5, 1 - 1e-5]`; inverse of
/// [`sigmoid`] on the clamped domain.
pub fn inverse_sigmoid(t: f64) -> f64 {
    let t = t.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
    (t / (1.0 - t)).ln()
}

/// Interleaved sinusoidal encoding of a scalar:
/// `[sin(2 pi t / w_0), cos(2 pi t / w_0), sin(2 pi t / w_1), ...]` with
/// `w_j = temperature^(j / half_dim)`.
pub fn sinusoidal_pe(t: f64, half_dim: usize, temperature: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * half_dim);
    for j in 0..half_dim {
        let omega = temperature.powf(j as f64 / half_dim as f64);
        let phase = t * std::f64::consts::TAU / omega;
        out.push(phase.sin());
        out.push(phase.cos());
    }
    out
}

/// Sinusoidal encoding truncated to an exact output dimension. For odd
/// `dim` the trailing cosine of the last pair is dropped.
pub fn pe_scalar(t: f64, dim: usize, temperature: f64) -> Vec<f64> {
    let mut v = sinusoidal_pe(t, dim.div_ceil(2), temperature);
    v.truncate(dim);
    v
}

/// Encodes a circle as `Concat(PE(x), PE(y), PE(r))`, each scalar taking
/// `D/2` dimensions, for a total of `3D/2`.
pub fn pe_circle(c: &Circle, d_model: usize, temperature: f64) -> Result<Vec<f64>> {
    validate_pe_circle(c)?;
    if !d_model.is_multiple_of(2) {
        return Err(Error::ShapeError { context: "pe_circle model dim must be even", expected: 2, got: d_model % 2 });
    }
    let mut out = Vec::with_capacity(3 * d_model / 2);
    out.extend(pe_scalar(c.x, d_model / 2, temperature));
    out.extend(pe_scalar(c.y, d_model / 2, temperature));
    out.extend(pe_scalar(c.r, d_model / 2, temperature));
    Ok(out)
}

/// Positional encoding of an `(x, y)` position: two `D/2` encodings, `D` in
/// total.
pub fn pe_position(x: f64, y: f64, d_model: usize, temperature: f64) -> Result<Vec<f64>> {
    if !d_model.is_multiple_of(2) {
        return Err(Error::ShapeError { context: "pe_position model dim must be even", expected: 2, got: d_model % 2 });
    }
    let mut out = Vec::with_capacity(d_model);
    out.extend(pe_scalar(x, d_model / 2, temperature));
    out.extend(pe_scalar(y, d_model / 2, temperature));
    Ok(out)
}

/// Positional query `P = MLP(PE(C))`; the MLP maps `3D/2 -> D`.
pub fn positional_query(c: &Circle, mlp: &Mlp, temperature: f64) -> Result<Vec<f64>> {
    let d_model = mlp.output_dim();
    if mlp.input_dim() != 3 * d_model / 2 {
        return Err(Error::ShapeError {
            context: "positional query mlp input",
            expected: 3 * d_model / 2,
            got: mlp.input_dim(),
        });
    }
    mlp.forward(&pe_circle(c, d_model, temperature)?)
}

/// Self-attention inputs: `Q = K = Z + P`, `V = Z`.
pub fn self_attn_inputs(
    q: &CircleQuery,
    pe_mlp: &Mlp,
    temperature: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let p = positional_query(&q.anchor, pe_mlp, temperature)?;
    if p.len() != q.z.len() {
        return Err(Error::ShapeError { context: "self attention dims", expected: q.z.len(), got: p.len() });
    }
    let qk: Vec<f64> = q.z.iter().zip(&p).map(|(z, p)| z + p).collect();
    Ok((qk.clone(), qk, q.z.clone()))
}

/// Cross-attention query: `Concat(Z, PE(x, y) * MLP_csq(Z))`, length `2D`.
pub fn cross_attn_query(q: &CircleQuery, csq_mlp: &Mlp, temperature: f64) -> Result<Vec<f64>> {
    let d_model = q.z.len();
    if csq_mlp.input_dim() != d_model || csq_mlp.output_dim() != d_model {
        return Err(Error::ShapeError {
            context: "csq mlp dims",
            expected: d_model,
            got: csq_mlp.output_dim(),
        });
    }
    let pe = pe_position(q.anchor.x, q.anchor.y, d_model, temperature)?;
    let scale = csq_mlp.forward(&q.z)?;
    let mut out = Vec::with_capacity(2 * d_model);
    out.extend_from_slice(&q.z);
    out.extend(pe.iter().zip(&scale).map(|(p, s)| p * s));
    Ok(out)
}

/// Cross-attention key for the pixel at normalized position `(x, y)`:
/// `Concat(F_xy, PE(x, y))`, length `2D`. The value is the feature itself.
pub fn cross_attn_key(
    feature: &[f64],
    x: f64,
    y: f64,
    temperature: f64,
) -> Result<Vec<f64>> {
    let d_model = feature.len();
    let pe = pe_position(x, y, d_model, temperature)?;
    let mut out = Vec::with_capacity(2 * d_model);
    out.extend_from_slice(feature);
    out.extend(pe);
    Ok(out)
}

/// Circle-modulated positional attention score between a key pixel at
/// normalized `(x, y)` and the query anchor center, both axis dot products
/// scaled by `r_ref / r` and the whole score by `1/sqrt(D)`.
pub fn modulated_attention(
    key_pos: (f64, f64),
    q: &CircleQuery,
    r_ref: f64,
    temperature: f64,
) -> Result<f64> {
    q.anchor.validate()?;
    let d_model = q.z.len();
    if !d_model.is_multiple_of(2) {
        return Err(Error::ShapeError { context: "modulated attention dim", expected: 2, got: d_model % 2 });
    }
    let half = d_model / 2;
    let kx = pe_scalar(key_pos.0, half, temperature);
    let ky = pe_scalar(key_pos.1, half, temperature);
    let rx = pe_scalar(q.anchor.x, half, temperature);
    let ry = pe_scalar(q.anchor.y, half, temperature);
    let dot_x: f64 = kx.iter().zip(&rx).map(|(a, b)| a * b).sum();
    let dot_y: f64 = ky.iter().zip(&ry).map(|(a, b)| a * b).sum();
    // single multiplication by the ratio keeps the r_ref/r scaling exact
    let ratio = r_ref / q.anchor.r;
    Ok((dot_x + dot_y) * ratio / (d_model as f64).sqrt())
}

/// Content-conditioned reference radius: `sigmoid(MLP(x, y, r))`.
pub fn reference_radius(c: &Circle, mlp: &Mlp) -> Result<f64> {
    if mlp.input_dim() != 3 || mlp.output_dim() != 1 {
        return Err(Error::ShapeError { context: "reference radius mlp", expected: 3, got: mlp.input_dim() });
    }
    Ok(sigmoid(mlp.forward(&[c.x, c.y, c.r])?[0]))
}

/// Polar sampling offset: radius fraction in `[0, 1]` and angle in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarOffset {
    pub dr: f64,
    pub dtheta: f64,
}

/// Reference-point initialization modes for deformable circle attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CdaInit {
    /// Seeded uniform sampling of the unit disk (`dr = sqrt(u)`,
    /// `dtheta = 2 pi v`).
    Random,
    /// Deterministic sunflower layout: point `k` of `M*K` at
    /// `dr = sqrt((k + 0.5) / (M*K))`, `dtheta = k *` golden angle,
    /// partitioned sequentially into heads.
    Sunflower,
}

/// Initial `M x K` polar offsets, all inside the closed unit disk.
pub fn cda_reference_init(mode: CdaInit, m: usize, k: usize, seed: u64) -> Vec<Vec<PolarOffset>> {
    assert!(m >= 1 && k >= 1, "need at least one head and one point");
    match mode {
        CdaInit::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..m)
                .map(|_| {
                    (0..k)
                        .map(|_| PolarOffset {
                            dr: rng.gen_range(0.0..1.0f64).sqrt(),
                            dtheta: rng.gen_range(0.0..std::f64::consts::TAU),
                        })
                        .collect()
                })
                .collect()
        }
        CdaInit::Sunflower => {
            let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
            let total = (m * k) as f64;
            (0..m)
                .map(|head| {
                    (0..k)
                        .map(|p| {
                            let idx = head * k + p;
                            PolarOffset {
                                dr: ((idx as f64 + 0.5) / total).sqrt(),
                                dtheta: (idx as f64 * golden).rem_euclid(std::f64::consts::TAU),
                            }
                        })
                        .collect()
                })
                .collect()
        }
    }
}

/// Bilinear interpolation of the grid at continuous index coordinates
/// `(x, y)` in `[0, W-1] x [0, H-1]`; out-of-range coordinates clamp to the
/// border. Integer coordinates return the stored feature exactly.
pub fn bilinear_sample(grid: &FeatureGrid, x: f64, y: f64) -> Vec<f64> {
    let x = x.clamp(0.0, (grid.w - 1) as f64);
    let y = y.clamp(0.0, (grid.h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(grid.w - 1);
    let y1 = (y0 + 1).min(grid.h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let f00 = grid.feature(y0, x0);
    let f01 = grid.feature(y0, x1);
    let f10 = grid.feature(y1, x0);
    let f11 = grid.feature(y1, x1);
    (0..grid.d)
        .map(|c| {
            f00[c] as f64 * (1.0 - fy) * (1.0 - fx)
                + f01[c] as f64 * (1.0 - fy) * fx
                + f10[c] as f64 * fy * (1.0 - fx)
                + f11[c] as f64 * fy * fx
        })
        .collect()
}

/// Per-query deformable attention parameters: per-head value and output
/// projections, normalized attention weights and polar sampling offsets.
#[derive(Clone, Debug)]
pub struct DeformableParams {
    /// Per head: `(D/M) x D` matrix projecting a sampled feature down.
    pub value_proj: Vec<Matrix>,
    /// Per head: `D x (D/M)` matrix projecting the head output back up.
    pub output_proj: Vec<Matrix>,
    /// `M x K` attention weights, each row summing to 1.
    pub attn: Vec<Vec<f64>>,
    /// `M x K` polar offsets.
    pub offsets: Vec<Vec<PolarOffset>>,
}

impl DeformableParams {
    pub fn heads(&self) -> usize {
        self.value_proj.len()
    }

    /// Softmax over each head's point logits.
    pub fn attn_from_logits(logits: &[Vec<f64>]) -> Vec<Vec<f64>> {
        logits
            .iter()
            .map(|row| {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
                let sum: f64 = exps.iter().sum();
                exps.into_iter().map(|e| e / sum).collect()
            })
            .collect()
    }

    fn validate(&self, d_model: usize) -> Result<()> {
        let m = self.value_proj.len();
        if m == 0 || !d_model.is_multiple_of(m) {
            return Err(Error::ShapeError { context: "deformable heads must divide D", expected: d_model, got: m });
        }
        let d_head = d_model / m;
        if self.output_proj.len() != m || self.attn.len() != m || self.offsets.len() != m {
            return Err(Error::ShapeError { context: "deformable per-head arrays", expected: m, got: self.output_proj.len() });
        }
        for (head, (vp, op)) in self.value_proj.iter().zip(&self.output_proj).enumerate() {
            if vp.rows() != d_head || vp.cols() != d_model {
                return Err(Error::ShapeError { context: "value projection shape", expected: d_head * d_model, got: vp.rows() * vp.cols() });
            }
            if op.rows() != d_model || op.cols() != d_head {
                return Err(Error::ShapeError { context: "output projection shape", expected: d_model * d_head, got: op.rows() * op.cols() });
            }
            let sum: f64 = self.attn[head].iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::NonNormalizedAttention { head, sum });
            }
            if self.attn[head].len() != self.offsets[head].len() {
                return Err(Error::ShapeError { context: "attention/offset point counts", expected: self.offsets[head].len(), got: self.attn[head].len() });
            }
        }
        Ok(())
    }
}

/// Continuous grid-index sampling locations for every `(head, point)` pair:
/// the anchor center plus the polar offset scaled by `r_ref` and the anchor
/// radius in pixels (`r * min(H, W)`).
pub fn cda_sample_points(
    anchor: &Circle,
    offsets: &[Vec<PolarOffset>],
    r_ref: f64,
    h: usize,
    w: usize,
) -> Vec<Vec<(f64, f64)>> {
    let cx = anchor.x * w as f64 - 0.5;
    let cy = anchor.y * h as f64 - 0.5;
    let scale = r_ref * anchor.r * h.min(w) as f64;
    offsets
        .iter()
        .map(|row| {
            row.iter()
                .map(|o| {
                    (cx + o.dr * scale * o.dtheta.cos(), cy + o.dr * scale * o.dtheta.sin())
                })
                .collect()
        })
        .collect()
}

/// Deformable circle cross attention: per head, the attention-weighted sum
/// of value-projected bilinear samples around the anchor, followed by the
/// head output projection. Output length equals the grid depth.
pub fn circle_deformable_attention(
    q: &CircleQuery,
    params: &DeformableParams,
    r_ref: f64,
    grid: &FeatureGrid,
) -> Result<Vec<f64>> {
    q.anchor.validate()?;
    let d_model = grid.d;
    if q.z.len() != d_model {
        return Err(Error::ShapeError { context: "query content dim vs grid depth", expected: d_model, got: q.z.len() });
    }
    params.validate(d_model)?;
    let points = cda_sample_points(&q.anchor, &params.offsets, r_ref, grid.h, grid.w);
    let mut out = vec![0.0; d_model];
    for head in 0..params.heads() {
        let d_head = d_model / params.heads();
        let mut acc = vec![0.0; d_head];
        for (k, &(x, y)) in points[head].iter().enumerate() {
            let sample = bilinear_sample(grid, x, y);
            let projected = params.value_proj[head].matvec(&sample)?;
            let w = params.attn[head][k];
            for (a, p) in acc.iter_mut().zip(&projected) {
                *a += w * p;
            }
        }
        let lifted = params.output_proj[head].matvec(&acc)?;
        for (o, l) in out.iter_mut().zip(&lifted) {
            *o += l;
        }
    }
    Ok(out)
}

/// Refines an anchor by adding deltas in log-odds space:
/// `sigmoid(inverse_sigmoid(coord) + delta)` per coordinate. The output
/// always stays inside the open unit cube.
pub fn refine_anchor(anchor: &Circle, delta: [f64; 3]) -> Result<Circle> {
    validate_anchor(anchor)?;
    Ok(Circle::new(
        sigmoid(inverse_sigmoid(anchor.x) + delta[0]),
        sigmoid(inverse_sigmoid(anchor.y) + delta[1]),
        sigmoid(inverse_sigmoid(anchor.r) + delta[2]),
    ))
}

/// Attention flavor used by the decoder cross-attention stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionVariant {
    /// Dense attention over all grid pixels with the circle-modulated
    /// positional term added to the content logits.
    Dense,
    /// Deformable circle cross attention.
    Deformable,
}

/// Weights of one decoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    /// `3D/2 -> D`, shared positional-query MLP.
    pub pe_mlp: Mlp,
    /// `D -> D`, content-conditioned scaling of the positional query half.
    pub csq_mlp: Mlp,
    /// `3 -> 1`, reference radius head (before sigmoid).
    pub rref_mlp: Mlp,
    /// `D -> D` feed-forward block.
    pub ffn: Mlp,
    /// `D -> 3` anchor delta head.
    pub delta_head: Mlp,
    /// Per head `(D/M) x D` value projections.
    pub value_proj: Vec<Matrix>,
    /// Per head `D x (D/M)` output projections.
    pub output_proj: Vec<Matrix>,
    /// `(M*K) x D` map from content to per-point attention logits.
    pub attn_head: Matrix,
    /// `M x K` base polar offsets for this layer.
    pub offsets: Vec<Vec<PolarOffset>>,
}

/// Full decoder weight bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderWeights {
    pub d_model: usize,
    pub heads: usize,
    pub points: usize,
    pub temperature: f64,
    pub layers: Vec<LayerWeights>,
    /// `D -> 1` detection score head applied to the final content vectors.
    pub score_head: Mlp,
}

impl DecoderWeights {
    /// Seeded bundle; every parameter is f32-exact so a serialized bundle
    /// reloads bit-identically.
    pub fn seeded(
        d_model: usize,
        n_layers: usize,
        heads: usize,
        points: usize,
        init: CdaInit,
        seed: u64,
    ) -> Result<Self> {
        if !d_model.is_multiple_of(2) || heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::ShapeError { context: "decoder dims (D even, M | D)", expected: d_model, got: heads });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_head = d_model / heads;
        let layers = (0..n_layers)
            .map(|layer_idx| {
                let offsets_f64 = cda_reference_init(
                    init,
                    heads,
                    points,
                    seed ^ (layer_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                );
                // quantize offsets so the on-disk f32 form is lossless
                let offsets = offsets_f64
                    .into_iter()
                    .map(|row| {
                        row.into_iter()
                            .map(|o| PolarOffset {
                                dr: o.dr as f32 as f64,
                                dtheta: o.dtheta as f32 as f64,
                            })
                            .collect()
                    })
                    .collect();
                LayerWeights {
                    pe_mlp: Mlp::seeded(&[3 * d_model / 2, d_model, d_model], &mut rng),
                    csq_mlp: Mlp::seeded(&[d_model, d_model, d_model], &mut rng),
                    rref_mlp: Mlp::seeded(&[3, d_model, 1], &mut rng),
                    ffn: Mlp::seeded(&[d_model, d_model, d_model], &mut rng),
                    delta_head: Mlp::seeded(&[d_model, d_model, 3], &mut rng),
                    value_proj: (0..heads)
                        .map(|_| Matrix::seeded_uniform(d_head, d_model, &mut rng))
                        .collect(),
                    output_proj: (0..heads)
                        .map(|_| Matrix::seeded_uniform(d_model, d_head, &mut rng))
                        .collect(),
                    attn_head: Matrix::seeded_uniform(heads * points, d_model, &mut rng),
                    offsets,
                }
            })
            .collect();
        Ok(DecoderWeights {
            d_model,
            heads,
            points,
            temperature: DEFAULT_PE_TEMPERATURE,
            layers,
            score_head: Mlp::seeded(&[d_model, 1], &mut rng),
        })
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax self-attention among the queries with `Q = K = Z + P`, `V = Z`;
/// returns the content vectors after the residual update.
pub fn self_attention(
    queries: &[CircleQuery],
    pe_mlp: &Mlp,
    temperature: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut qk = Vec::with_capacity(queries.len());
    for q in queries {
        let (qv, _, _) = self_attn_inputs(q, pe_mlp, temperature)?;
        qk.push(qv);
    }
    let d_model = queries.first().map(|q| q.z.len()).unwrap_or(0);
    let scale = 1.0 / (d_model.max(1) as f64).sqrt();
    let mut out = Vec::with_capacity(queries.len());
    for i in 0..queries.len() {
        let logits: Vec<f64> =
            qk.iter().map(|k| qk[i].iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale).collect();
        let attn = softmax(&logits);
        let mut z = queries[i].z.clone();
        for (j, w) in attn.iter().enumerate() {
            for (zi, vj) in z.iter_mut().zip(&queries[j].z) {
                *zi += w * vj;
            }
        }
        out.push(z);
    }
    Ok(out)
}

/// Dense cross attention over all grid pixels. The logit of pixel `(x, y)`
/// is the `2D`-dim content dot product scaled by `1/sqrt(2D)` plus the
/// circle-modulated positional score; values are the raw pixel features.
/// Returns the attention output per query (no residual applied).
pub fn dense_cross_attention(
    queries: &[CircleQuery],
    grid: &FeatureGrid,
    csq_mlp: &Mlp,
    rref_mlp: &Mlp,
    temperature: f64,
) -> Result<Vec<Vec<f64>>> {
    let d_model = grid.d;
    let scale = 1.0 / (2.0 * d_model as f64).sqrt();
    let mut keys = Vec::with_capacity(grid.h * grid.w);
    let mut positions = Vec::with_capacity(grid.h * grid.w);
    for iy in 0..grid.h {
        for ix in 0..grid.w {
            let x = (ix as f64 + 0.5) / grid.w as f64;
            let y = (iy as f64 + 0.5) / grid.h as f64;
            let feature: Vec<f64> = grid.feature(iy, ix).iter().map(|&v| v as f64).collect();
            keys.push(cross_attn_key(&feature, x, y, temperature)?);
            positions.push((x, y));
        }
    }
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        if q.z.len() != d_model {
            return Err(Error::ShapeError { context: "query content dim vs grid depth", expected: d_model, got: q.z.len() });
        }
        let qv = cross_attn_query(q, csq_mlp, temperature)?;
        let r_ref = reference_radius(&q.anchor, rref_mlp)?;
        let mut logits = Vec::with_capacity(keys.len());
        for (key, &pos) in keys.iter().zip(&positions) {
            let content: f64 = qv.iter().zip(key).map(|(a, b)| a * b).sum();
            logits.push(content * scale + modulated_attention(pos, q, r_ref, temperature)?);
        }
        let attn = softmax(&logits);
        let mut o = vec![0.0; d_model];
        for (pix, w) in attn.iter().enumerate() {
            let f = grid.feature(pix / grid.w, pix % grid.w);
            for (oc, &fc) in o.iter_mut().zip(f) {
                *oc += w * fc as f64;
            }
        }
        out.push(o);
    }
    Ok(out)
}

/// Deformable cross attention for every query, with per-query attention
/// logits produced by the layer's `attn_head` from the content vector.
/// Returns the attention output per query (no residual applied).
pub fn deformable_cross_attention(
    queries: &[CircleQuery],
    grid: &FeatureGrid,
    layer: &LayerWeights,
) -> Result<Vec<Vec<f64>>> {
    let heads = layer.value_proj.len();
    let points = layer.offsets.first().map(|r| r.len()).unwrap_or(0);
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        let logits = layer.attn_head.matvec(&q.z)?;
        let per_head: Vec<Vec<f64>> =
            (0..heads).map(|m| logits[m * points..(m + 1) * points].to_vec()).collect();
        let params = DeformableParams {
            value_proj: layer.value_proj.clone(),
            output_proj: layer.output_proj.clone(),
            attn: DeformableParams::attn_from_logits(&per_head),
            offsets: layer.offsets.clone(),
        };
        let r_ref = reference_radius(&q.anchor, &layer.rref_mlp)?;
        out.push(circle_deformable_attention(q, &params, r_ref, grid)?);
    }
    Ok(out)
}

/// Output of one decoder layer.
#[derive(Clone, Debug)]
pub struct LayerOutput {
    pub queries: Vec<CircleQuery>,
    pub deltas: Vec<[f64; 3]>,
}

/// One decoder layer: self attention, cross attention (dense or
/// deformable), feed-forward, then sigmoid-space anchor refinement. Residual
/// connections follow each attention and feed-forward stage.
pub fn decoder_layer_forward(
    queries: &[CircleQuery],
    grid: &FeatureGrid,
    layer: &LayerWeights,
    variant: AttentionVariant,
    temperature: f64,
) -> Result<LayerOutput> {
    let zs = self_attention(queries, &layer.pe_mlp, temperature)?;
    let mid: Vec<CircleQuery> = zs
        .into_iter()
        .zip(queries)
        .map(|(z, q)| CircleQuery { z, anchor: q.anchor })
        .collect();
    let cross = match variant {
        AttentionVariant::Dense => {
            dense_cross_attention(&mid, grid, &layer.csq_mlp, &layer.rref_mlp, temperature)?
        }
        AttentionVariant::Deformable => deformable_cross_attention(&mid, grid, layer)?,
    };
    let mut out_queries = Vec::with_capacity(queries.len());
    let mut deltas = Vec::with_capacity(queries.len());
    for (mut q, c) in mid.into_iter().zip(cross) {
        for (z, c) in q.z.iter_mut().zip(&c) {
            *z += c;
        }
        let ff = layer.ffn.forward(&q.z)?;
        for (z, f) in q.z.iter_mut().zip(&ff) {
            *z += f;
        }
        let d3 = layer.delta_head.forward(&q.z)?;
        let delta = [d3[0], d3[1], d3[2]];
        q.anchor = refine_anchor(&q.anchor, delta)?;
        deltas.push(delta);
        out_queries.push(q);
    }
    Ok(LayerOutput { queries: out_queries, deltas })
}

/// Full forward pass through every decoder layer. Records the anchors after
/// each layer (index 0 holds the initial anchors).
pub struct ForwardTrace {
    pub layer_anchors: Vec<Vec<Circle>>,
    pub queries: Vec<CircleQuery>,
}

pub fn decoder_forward(
    queries: &[CircleQuery],
    grid: &FeatureGrid,
    weights: &DecoderWeights,
    variant: AttentionVariant,
) -> Result<ForwardTrace> {
    let mut current = queries.to_vec();
    let mut layer_anchors = vec![current.iter().map(|q| q.anchor).collect::<Vec<_>>()];
    for layer in &weights.layers {
        let out = decoder_layer_forward(&current, grid, layer, variant, weights.temperature)?;
        current = out.queries;
        layer_anchors.push(current.iter().map(|q| q.anchor).collect());
    }
    Ok(ForwardTrace { layer_anchors, queries: current })
}

/// Uniform grid of initial anchors with a fixed radius: `count` centers on
/// the smallest square lattice holding them.
pub fn grid_anchors(count: usize, radius: f64) -> Vec<Circle> {
    let side = (count as f64).sqrt().ceil() as usize;
    (0..count)
        .map(|i| {
            let row = i / side;
            let col = i % side;
            Circle::new(
                (col as f64 + 0.5) / side as f64,
                (row as f64 + 0.5) / side as f64,
                radius,
            )
        })
        .collect()
}
