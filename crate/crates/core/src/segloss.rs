//! Mask head output form, segmentation losses and circle-region ground-truth
//! extraction.

use crate::error::{Error, Result};
use crate::geom::Circle;
use crate::linalg::Mlp;
use crate::matching::LossConfig;

/// Side length of a mask patch.
pub const MASK_SIZE: usize = 28;

/// Smoothing constant of the dice loss.
const DICE_SMOOTHING: f64 = 1.0;

/// Probability clamp applied before logarithms in the BCE loss.
const PROB_EPS: f64 = 1e-6;

/// A fixed 28x28 grid of values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPatch {
    data: Vec<f64>,
}

impl MaskPatch {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.len() != MASK_SIZE * MASK_SIZE {
            return Err(Error::ShapeError {
                context: "mask patch",
                expected: MASK_SIZE * MASK_SIZE,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::ShapeError {
                context: "mask patch values outside [0, 1]",
                expected: 0,
                got: 0,
            });
        }
        Ok(MaskPatch { data })
    }

    /// Builds a patch from a function of `(row, col)`.
    pub fn from_fn<F: FnMut(usize, usize) -> f64>(mut f: F) -> Result<Self> {
        let mut data = Vec::with_capacity(MASK_SIZE * MASK_SIZE);
        for i in 0..MASK_SIZE {
            for j in 0..MASK_SIZE {
                data.push(f(i, j));
            }
        }
        MaskPatch::new(data)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * MASK_SIZE + col]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// A full-image binary mask, row-major, one byte per pixel (0 or 1).
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(h: usize, w: usize) -> Self {
        BinaryMask { h, w, data: vec![0; h * w] }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.w + col]
    }

    pub fn count_positive(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// Mask head: `sigmoid(FFN2(FFN1(f) + f))` reshaped to 28x28.
pub fn mask_head(f: &[f64], ffn1: &Mlp, ffn2: &Mlp) -> Result<MaskPatch> {
    let d = f.len();
    if ffn1.input_dim() != d || ffn1.output_dim() != d {
        return Err(Error::ShapeError { context: "mask head ffn1", expected: d, got: ffn1.output_dim() });
    }
    if ffn2.input_dim() != d || ffn2.output_dim() != MASK_SIZE * MASK_SIZE {
        return Err(Error::ShapeError {
            context: "mask head ffn2",
            expected: MASK_SIZE * MASK_SIZE,
            got: ffn2.output_dim(),
        });
    }
    let hidden = ffn1.forward(f)?;
    let residual: Vec<f64> = hidden.iter().zip(f).map(|(a, b)| a + b).collect();
    let logits = ffn2.forward(&residual)?;
    MaskPatch::new(logits.iter().map(|&v| crate::attention::sigmoid(v)).collect())
}

/// Dice loss with smoothing constant 1: `1 - (2 sum(m*mh) + 1) / (sum m + sum mh + 1)`.
pub fn dice_loss(m: &MaskPatch, mhat: &MaskPatch) -> f64 {
    let inter: f64 = m.data.iter().zip(&mhat.data).map(|(a, b)| a * b).sum();
    let sums: f64 = m.data.iter().sum::<f64>() + mhat.data.iter().sum::<f64>();
    1.0 - (2.0 * inter + DICE_SMOOTHING) / (sums + DICE_SMOOTHING)
}

/// Mean binary cross entropy over the patch, with the prediction clamped to
/// `[1e-6, 1 - 1e-6]`.
pub fn bce_loss(m: &MaskPatch, mhat: &MaskPatch) -> f64 {
    let total: f64 = m
        .data
        .iter()
        .zip(&mhat.data)
        .map(|(&t, &p)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    total / (MASK_SIZE * MASK_SIZE) as f64
}

/// Weighted segmentation loss: `lambda_dice * dice + lambda_bce * bce`.
pub fn seg_loss(m: &MaskPatch, mhat: &MaskPatch, cfg: &LossConfig) -> f64 {
    cfg.lambda_dice * dice_loss(m, mhat) + cfg.lambda_bce * bce_loss(m, mhat)
}

fn bilinear_mask(mask: &BinaryMask, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (mask.w - 1) as f64);
    let y = y.clamp(0.0, (mask.h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(mask.w - 1);
    let y1 = (y0 + 1).min(mask.h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v00 = mask.get(y0, x0) as f64;
    let v01 = mask.get(y0, x1) as f64;
    let v10 = mask.get(y1, x0) as f64;
    let v11 = mask.get(y1, x1) as f64;
    v00 * (1.0 - fy) * (1.0 - fx) + v01 * (1.0 - fy) * fx + v10 * fy * (1.0 - fx) + v11 * fy * fx
}

/// Extracts the RoI-aligned ground-truth patch for a circle: the bounding
/// square of the circle (side `2r`, radius denormalized by `min(H, W)`) is
/// resampled onto 28x28, one bilinear sample at each bin center.
///
/// The circle is in normalized coordinates; pixel centers sit at half-integer
/// image coordinates, so image coordinate `u` maps to grid index `u - 0.5`.
pub fn circle_roi_crop(full_mask: &BinaryMask, c: &Circle) -> Result<MaskPatch> {
    c.validate()?;
    let (h, w) = (full_mask.h as f64, full_mask.w as f64);
    let cx = c.x * w;
    let cy = c.y * h;
    let rp = c.r * h.min(w);
    if cx + rp <= 0.0 || cx - rp >= w || cy + rp <= 0.0 || cy - rp >= h {
        return Err(Error::EmptyRegion);
    }
    let step = 2.0 * rp / MASK_SIZE as f64;
    MaskPatch::from_fn(|i, j| {
        let u = cx - rp + (j as f64 + 0.5) * step;
        let v = cy - rp + (i as f64 + 0.5) * step;
        bilinear_mask(full_mask, u - 0.5, v - 0.5)
    })
}
