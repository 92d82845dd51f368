//! `gen` subcommand: materializes a synthetic dataset directory.
//!
//! Layout written under `--out`:
//! - `annotations.json` — image table plus all circle annotations;
//! - `config.json` — the resolved generation config;
//! - `scene_NNNN.fgrid` — the feature grid of each scene;
//! - `masks_NNNN.fgrc` — per-circle rasterized masks (`mask/MMM`, H x W x 1).

use circledet_core::attention::FeatureGrid;
use circledet_core::error::{Error, Result};
use circledet_core::synthgen::{
    self, AnnotationFile, AnnotationRecord, GenConfig, ImageInfo,
};
use std::path::Path;

/// Summary of a generated dataset.
#[derive(Clone, Debug, serde::Serialize)]
pub struct GenSummary {
    pub scenes: u32,
    pub total_circles: usize,
}

pub fn load_config(path: &Path) -> Result<GenConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: GenConfig = serde_json::from_str(&text).map_err(|e| Error::Format {
        offset: 0,
        reason: format!("config parse error: {e}"),
    })?;
    cfg.validate().map_err(|e| Error::Format { offset: 0, reason: e.to_string() })?;
    Ok(cfg)
}

pub fn run_gen(cfg: &GenConfig, out_dir: &Path) -> Result<GenSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let mut annotations = AnnotationFile::default();
    let mut total_circles = 0usize;
    for scene_idx in 0..cfg.scenes {
        let scene_cfg = GenConfig {
            seed: synthgen::scene_seed(cfg.seed, scene_idx as u64),
            scenes: 1,
            ..*cfg
        };
        let (scene, grid) = synthgen::generate_scene(&scene_cfg, scene_idx as u64)?;
        annotations.images.push(ImageInfo { id: scene.image_id, h: scene.h, w: scene.w });
        for c in &scene.circles {
            annotations.annotations.push(AnnotationRecord {
                image_id: scene.image_id,
                x: c.x,
                y: c.y,
                r: c.r,
            });
        }
        total_circles += scene.circles.len();

        synthgen::write_fgrid_file(&out_dir.join(format!("scene_{scene_idx:04}.fgrid")), &grid)?;
        let mask_entries: Vec<(String, FeatureGrid)> = scene
            .masks
            .iter()
            .enumerate()
            .map(|(mi, m)| {
                let data: Vec<f32> = m.data.iter().map(|&v| v as f32).collect();
                let grid = FeatureGrid::new(m.h, m.w, 1, data).expect("mask tensor");
                (format!("mask/{mi:03}"), grid)
            })
            .collect();
        synthgen::write_fgrc_file(
            &out_dir.join(format!("masks_{scene_idx:04}.fgrc")),
            &mask_entries,
        )?;
    }

    synthgen::write_file_atomic(
        &out_dir.join("annotations.json"),
        synthgen::annotation_to_json(&annotations).as_bytes(),
    )?;
    let mut cfg_text = serde_json::to_string_pretty(cfg).expect("config serialization");
    cfg_text.push('\n');
    synthgen::write_file_atomic(&out_dir.join("config.json"), cfg_text.as_bytes())?;

    Ok(GenSummary { scenes: cfg.scenes, total_circles })
}
