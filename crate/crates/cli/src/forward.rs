//! `forward` subcommand: runs the circle-query decoder over a feature grid
//! with seeded weights, recording per-layer anchors and the final scored
//! detections.

use circledet_core::attention::{
    self, AttentionVariant, CdaInit, CircleQuery, DecoderWeights,
};
use circledet_core::error::{Error, Result};
use circledet_core::geom::Circle;
use circledet_core::synthgen::{self, PredictionFile, PredictionRecord};
use std::path::Path;

#[derive(Clone, Copy, Debug)]
pub struct ForwardOpts {
    pub layers: usize,
    pub variant: AttentionVariant,
    pub init: CdaInit,
    pub seed: u64,
    pub heads: usize,
    pub points: usize,
    pub queries: usize,
    pub image_id: u64,
}

impl Default for ForwardOpts {
    fn default() -> Self {
        ForwardOpts {
            layers: 6,
            variant: AttentionVariant::Deformable,
            init: CdaInit::Sunflower,
            seed: 0,
            heads: 8,
            points: 4,
            queries: 16,
            image_id: 0,
        }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ForwardReport {
    pub variant: String,
    pub layer_anchors: Vec<Vec<Circle>>,
    pub detections: Vec<PredictionRecord>,
}

/// Loads the weight bundle from `path`, or creates a seeded bundle matching
/// the grid depth and saves it there when the file does not exist yet.
pub fn load_or_init_weights(
    path: &Path,
    d_model: usize,
    opts: &ForwardOpts,
) -> Result<DecoderWeights> {
    if path.exists() {
        synthgen::load_weights(path)
    } else {
        let weights = DecoderWeights::seeded(
            d_model,
            opts.layers,
            opts.heads,
            opts.points,
            opts.init,
            opts.seed,
        )?;
        synthgen::save_weights(path, &weights)?;
        Ok(weights)
    }
}

pub fn run_forward(weights_path: &Path, scene: &Path, out: &Path, opts: &ForwardOpts) -> Result<ForwardReport> {
    let grid = synthgen::read_fgrid_file(scene)?;
    let weights = load_or_init_weights(weights_path, grid.d(), opts)?;
    if weights.d_model != grid.d() {
        return Err(Error::ShapeError {
            context: "weight bundle model dim vs grid depth",
            expected: grid.d(),
            got: weights.d_model,
        });
    }
    if weights.layers.len() != opts.layers {
        return Err(Error::ShapeError {
            context: "weight bundle layer count vs --layers",
            expected: opts.layers,
            got: weights.layers.len(),
        });
    }
    let queries: Vec<CircleQuery> = attention::grid_anchors(opts.queries, 0.1)
        .into_iter()
        .map(|anchor| CircleQuery { z: vec![0.0; grid.d()], anchor })
        .collect();
    let trace = attention::decoder_forward(&queries, &grid, &weights, opts.variant)?;

    let (h, w) = (grid.h() as f64, grid.w() as f64);
    let detections: Vec<PredictionRecord> = trace
        .queries
        .iter()
        .map(|q| {
            let score = attention::sigmoid(
                weights.score_head.forward(&q.z).map(|v| v[0]).unwrap_or(0.0),
            );
            PredictionRecord {
                image_id: opts.image_id,
                x: q.anchor.x * w,
                y: q.anchor.y * h,
                r: q.anchor.r * h.min(w),
                score,
            }
        })
        .collect();

    let report = ForwardReport {
        variant: match opts.variant {
            AttentionVariant::Dense => "dense".to_string(),
            AttentionVariant::Deformable => "deformable".to_string(),
        },
        layer_anchors: trace.layer_anchors,
        detections: detections.clone(),
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serialization");
    text.push('\n');
    synthgen::write_file_atomic(out, text.as_bytes())?;
    // also emit the detections in the prediction-file schema next to the report
    let pred_path = out.with_extension("predictions.json");
    synthgen::write_file_atomic(
        &pred_path,
        synthgen::prediction_to_json(&PredictionFile { predictions: detections }).as_bytes(),
    )?;
    Ok(report)
}
