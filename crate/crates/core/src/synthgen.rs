//! Deterministic synthetic scene generation and the bit-exact file formats
//! for feature grids, annotations and predictions.
//!
//! # FGRID binary format
//!
//! A single tensor record: magic bytes `FGRD`, then three little-endian
//! `u32` values `H`, `W`, `D`, then `H*W*D` little-endian IEEE-754 `f32`
//! values, row-major and channel-last.
//!
//! # FGRC container
//!
//! Named tensors: magic `FGRC`, a little-endian `u32` entry count, then for
//! each entry a little-endian `u16` name length, the UTF-8 name, and an
//! embedded FGRID record.
//!
//! Malformed input yields [`Error::Format`] carrying the byte offset at
//! which reading failed; truncated files report the truncation point.

use crate::attention::{DecoderWeights, FeatureGrid, LayerWeights, PolarOffset};
use crate::error::{Error, Result};
use crate::geom::{self, Circle};
use crate::linalg::{Matrix, Mlp, MlpLayer};
use crate::oracle::splitmix64;
use crate::segloss::BinaryMask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

/// Per-circle placement attempts before generation gives up.
const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Scene generation parameters. `h`/`w` are the image dimensions in pixels,
/// radii are in pixels, `max_overlap_ciou` bounds every pairwise cIoU, and
/// `depth`/`scenes` control the rendered feature grid and dataset size.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub h: u32,
    pub w: u32,
    pub n_min: u32,
    pub n_max: u32,
    pub r_min: f64,
    pub r_max: f64,
    pub max_overlap_ciou: f64,
    pub seed: u64,
    pub depth: u32,
    pub scenes: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            h: 64,
            w: 64,
            n_min: 5,
            n_max: 5,
            r_min: 4.0,
            r_max: 8.0,
            max_overlap_ciou: 0.1,
            seed: 0,
            depth: 8,
            scenes: 1,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_min <= self.r_max) {
            return Err(Error::InvalidCircle {
                x: 0.0,
                y: 0.0,
                r: self.r_min,
                reason: "need 0 < r_min <= r_max",
            });
        }
        if !(0.0..1.0).contains(&self.max_overlap_ciou) {
            return Err(Error::InvalidAssignment {
                reason: "max_overlap_ciou must lie in [0, 1)".into(),
            });
        }
        if self.n_min > self.n_max {
            return Err(Error::InvalidAssignment { reason: "n_min must be <= n_max".into() });
        }
        if self.depth == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::ShapeError { context: "gen config dims", expected: 1, got: 0 });
        }
        Ok(())
    }
}

/// Ground truth of one synthetic scene: circles in pixel units and the
/// rasterized binary mask of each circle.
#[derive(Clone, Debug)]
pub struct SceneTruth {
    pub image_id: u64,
    pub h: u32,
    pub w: u32,
    pub circles: Vec<Circle>,
    pub masks: Vec<BinaryMask>,
}

/// Rasterizes a disk: pixel `(i, j)` is positive iff its center
/// `(j + 0.5, i + 0.5)` lies strictly inside the circle.
pub fn rasterize_disk(c: &Circle, h: u32, w: u32) -> BinaryMask {
    let mut mask = BinaryMask::zeros(h as usize, w as usize);
    for i in 0..h as usize {
        for j in 0..w as usize {
            let dx = (j as f64 + 0.5) - c.x;
            let dy = (i as f64 + 0.5) - c.y;
            if dx * dx + dy * dy < c.r * c.r {
                mask.data[i * w as usize + j] = 1;
            }
        }
    }
    mask
}

fn box_blur(h: usize, w: usize, data: &mut [f32]) {
    let src = data.to_vec();
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0f64;
            let mut count = 0u32;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let y = i as i64 + di;
                    let x = j as i64 + dj;
                    if y >= 0 && y < h as i64 && x >= 0 && x < w as i64 {
                        acc += src[(y as usize) * w + x as usize] as f64;
                        count += 1;
                    }
                }
            }
            data[i * w + j] = (acc / count as f64) as f32;
        }
    }
}

/// Generates one scene by seeded rejection sampling: circles stay fully
/// inside the image with at least one pixel of margin and every pairwise
/// cIoU is at most `max_overlap_ciou`. The feature grid stores the disk
/// indicator sum in channel 0 and smoothed seeded noise in the rest.
pub fn generate_scene(cfg: &GenConfig, image_id: u64) -> Result<(SceneTruth, FeatureGrid)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = if cfg.n_min == cfg.n_max {
        cfg.n_min
    } else {
        rng.gen_range(cfg.n_min..=cfg.n_max)
    };
    let (h, w) = (cfg.h as f64, cfg.w as f64);
    let mut circles: Vec<Circle> = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let r = rng.gen_range(cfg.r_min..=cfg.r_max);
            if r + 1.0 >= w - 1.0 - r || r + 1.0 >= h - 1.0 - r {
                continue;
            }
            let x = rng.gen_range(r + 1.0..w - 1.0 - r);
            let y = rng.gen_range(r + 1.0..h - 1.0 - r);
            let candidate = Circle::new(x, y, r);
            let ok = circles
                .iter()
                .all(|c| geom::ciou(c, &candidate).unwrap_or(1.0) <= cfg.max_overlap_ciou);
            if ok {
                circles.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InfeasibleConfig { attempts: MAX_PLACEMENT_ATTEMPTS });
        }
    }
    let masks: Vec<BinaryMask> = circles.iter().map(|c| rasterize_disk(c, cfg.h, cfg.w)).collect();

    let (hu, wu, du) = (cfg.h as usize, cfg.w as usize, cfg.depth as usize);
    let mut data = vec![0.0f32; hu * wu * du];
    for mask in &masks {
        for i in 0..hu {
            for j in 0..wu {
                data[(i * wu + j) * du] += mask.get(i, j) as f32;
            }
        }
    }
    for c in 1..du {
        let mut channel: Vec<f32> = (0..hu * wu).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        box_blur(hu, wu, &mut channel);
        box_blur(hu, wu, &mut channel);
        for (pix, v) in channel.into_iter().enumerate() {
            data[pix * du + c] = v;
        }
    }
    let grid = FeatureGrid::new(hu, wu, du, data)?;
    Ok((SceneTruth { image_id, h: cfg.h, w: cfg.w, circles, masks }, grid))
}

/// Derives the per-scene seed of scene `index` from the base config seed.
pub fn scene_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ index.wrapping_mul(0xA076_1D64_78BD_642F))
}

// ---------------------------------------------------------------------------
// JSON schemas
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub h: u32,
    pub w: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AnnotationRecord {
    pub image_id: u64,
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PredictionRecord {
    pub image_id: u64,
    pub x: f64,
    pub y: f64,
    pub r: f64,
    pub score: f64,
}

/// Ground-truth annotation file: image table plus circle annotations in
/// pixel units. Unknown JSON fields are ignored on read.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AnnotationFile {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<AnnotationRecord>,
}

/// Scored predictions in pixel units.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PredictionFile {
    pub predictions: Vec<PredictionRecord>,
}

/// Byte offset of a 1-based (line, column) position inside `text`.
fn line_col_to_offset(text: &str, line: usize, column: usize) -> u64 {
    let mut offset = 0usize;
    for (idx, l) in text.split('\n').enumerate() {
        if idx + 1 == line {
            return (offset + column.saturating_sub(1)) as u64;
        }
        offset += l.len() + 1;
    }
    text.len() as u64
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Format {
        offset: line_col_to_offset(text, e.line(), e.column()),
        reason: e.to_string(),
    })
}

pub fn annotation_to_json(file: &AnnotationFile) -> String {
    let mut s = serde_json::to_string_pretty(file).expect("annotation serialization");
    s.push('\n');
    s
}

pub fn annotation_from_json(text: &str) -> Result<AnnotationFile> {
    parse_json(text)
}

pub fn prediction_to_json(file: &PredictionFile) -> String {
    let mut s = serde_json::to_string_pretty(file).expect("prediction serialization");
    s.push('\n');
    s
}

pub fn prediction_from_json(text: &str) -> Result<PredictionFile> {
    parse_json(text)
}

// ---------------------------------------------------------------------------
// FGRID / FGRC binary formats
// ---------------------------------------------------------------------------

const FGRID_MAGIC: &[u8; 4] = b"FGRD";
const FGRC_MAGIC: &[u8; 4] = b"FGRC";

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.buf.len() as u64,
                reason: format!("unexpected end of file while reading {what}"),
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16_le(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn fgrid_to_bytes(grid: &FeatureGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * grid.data().len());
    out.extend_from_slice(FGRID_MAGIC);
    out.extend_from_slice(&(grid.h() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.w() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.d() as u32).to_le_bytes());
    for v in grid.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn fgrid_from_reader(r: &mut ByteReader<'_>) -> Result<FeatureGrid> {
    let magic_at = r.pos as u64;
    let magic = r.take(4, "FGRID magic")?;
    if magic != FGRID_MAGIC {
        return Err(Error::Format { offset: magic_at, reason: "bad FGRID magic".into() });
    }
    let h = r.u32_le("FGRID height")? as usize;
    let w = r.u32_le("FGRID width")? as usize;
    let d = r.u32_le("FGRID depth")? as usize;
    let count = h
        .checked_mul(w)
        .and_then(|hw| hw.checked_mul(d))
        .ok_or_else(|| Error::Format { offset: magic_at + 4, reason: "dimension overflow".into() })?;
    let payload_at = r.pos as u64;
    let bytes = r.take(4 * count, "FGRID payload")?;
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::Format {
                offset: payload_at + 4 * i as u64,
                reason: "non-finite tensor value".into(),
            });
        }
        data.push(v);
    }
    FeatureGrid::new(h, w, d, data).map_err(|e| Error::Format {
        offset: magic_at,
        reason: format!("invalid tensor dims: {e}"),
    })
}

pub fn fgrid_from_bytes(bytes: &[u8]) -> Result<FeatureGrid> {
    let mut r = ByteReader::new(bytes);
    let grid = fgrid_from_reader(&mut r)?;
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            reason: "trailing bytes after FGRID record".into(),
        });
    }
    Ok(grid)
}

pub fn fgrc_to_bytes(entries: &[(String, FeatureGrid)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FGRC_MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, grid) in entries {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.extend_from_slice(&fgrid_to_bytes(grid));
    }
    out
}

pub fn fgrc_from_bytes(bytes: &[u8]) -> Result<Vec<(String, FeatureGrid)>> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4, "FGRC magic")?;
    if magic != FGRC_MAGIC {
        return Err(Error::Format { offset: 0, reason: "bad FGRC magic".into() });
    }
    let count = r.u32_le("FGRC entry count")?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u16_le("entry name length")? as usize;
        let name_at = r.pos as u64;
        let name_bytes = r.take(name_len, "entry name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::Format { offset: name_at, reason: "entry name is not UTF-8".into() })?
            .to_string();
        let grid = fgrid_from_reader(&mut r)?;
        entries.push((name, grid));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            reason: "trailing bytes after FGRC container".into(),
        });
    }
    Ok(entries)
}

/// Atomically writes `bytes` to `path` (write to a temp file, then rename).
pub fn write_file_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp.partial");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_fgrid_file(path: &Path) -> Result<FeatureGrid> {
    fgrid_from_bytes(&std::fs::read(path)?)
}

pub fn write_fgrid_file(path: &Path, grid: &FeatureGrid) -> Result<()> {
    write_file_atomic(path, &fgrid_to_bytes(grid))
}

pub fn read_fgrc_file(path: &Path) -> Result<Vec<(String, FeatureGrid)>> {
    fgrc_from_bytes(&std::fs::read(path)?)
}

pub fn write_fgrc_file(path: &Path, entries: &[(String, FeatureGrid)]) -> Result<()> {
    write_file_atomic(path, &fgrc_to_bytes(entries))
}

// ---------------------------------------------------------------------------
// Decoder weight bundles in FGRC containers
// ---------------------------------------------------------------------------

fn matrix_tensor(m: &Matrix) -> FeatureGrid {
    let data: Vec<f32> = m.data().iter().map(|&v| v as f32).collect();
    FeatureGrid::new(m.rows(), m.cols(), 1, data).expect("matrix tensor")
}

fn vector_tensor(v: &[f64]) -> FeatureGrid {
    FeatureGrid::new(1, v.len(), 1, v.iter().map(|&x| x as f32).collect()).expect("vector tensor")
}

fn tensor_matrix(grid: &FeatureGrid) -> Result<Matrix> {
    if grid.d() != 1 {
        return Err(Error::ShapeError { context: "weight tensor depth", expected: 1, got: grid.d() });
    }
    Matrix::from_vec(grid.h(), grid.w(), grid.data().iter().map(|&v| v as f64).collect())
}

fn push_mlp(entries: &mut Vec<(String, FeatureGrid)>, prefix: &str, mlp: &Mlp) {
    for (i, layer) in mlp.layers().iter().enumerate() {
        entries.push((format!("{prefix}.w{i}"), matrix_tensor(&layer.weight)));
        entries.push((format!("{prefix}.b{i}"), vector_tensor(&layer.bias)));
    }
}

struct WeightMap {
    entries: std::collections::BTreeMap<String, FeatureGrid>,
}

impl WeightMap {
    fn get(&self, key: &str) -> Result<&FeatureGrid> {
        self.entries.get(key).ok_or_else(|| Error::Format {
            offset: 0,
            reason: format!("missing weight tensor {key}"),
        })
    }

    fn mlp(&self, prefix: &str) -> Result<Mlp> {
        let mut layers = Vec::new();
        let mut i = 0;
        while let Some(w) = self.entries.get(&format!("{prefix}.w{i}")) {
            let bias = self.get(&format!("{prefix}.b{i}"))?;
            layers.push(MlpLayer {
                weight: tensor_matrix(w)?,
                bias: bias.data().iter().map(|&v| v as f64).collect(),
            });
            i += 1;
        }
        Mlp::new(layers)
    }
}

/// Serializes a decoder weight bundle into an FGRC container.
///
/// Keys: `meta` (a 1x5x1 tensor `[d_model, n_layers, heads, points,
/// temperature]`), per layer `layerNN.{pe_mlp,csq_mlp,rref_mlp,ffn,
/// delta_head}.w{i}/b{i}`, `layerNN.deform.value_projMM`,
/// `layerNN.deform.output_projMM`, `layerNN.deform.attn_head`,
/// `layerNN.deform.offsets` (an `M x K x 2` tensor of `(dr, dtheta)`), and
/// `score_head.w0/b0`.
pub fn weights_to_entries(w: &DecoderWeights) -> Vec<(String, FeatureGrid)> {
    let mut entries = Vec::new();
    let meta = vec![
        w.d_model as f32,
        w.layers.len() as f32,
        w.heads as f32,
        w.points as f32,
        w.temperature as f32,
    ];
    entries.push(("meta".to_string(), FeatureGrid::new(1, 5, 1, meta).expect("meta tensor")));
    for (li, layer) in w.layers.iter().enumerate() {
        let p = format!("layer{li:02}");
        push_mlp(&mut entries, &format!("{p}.pe_mlp"), &layer.pe_mlp);
        push_mlp(&mut entries, &format!("{p}.csq_mlp"), &layer.csq_mlp);
        push_mlp(&mut entries, &format!("{p}.rref_mlp"), &layer.rref_mlp);
        push_mlp(&mut entries, &format!("{p}.ffn"), &layer.ffn);
        push_mlp(&mut entries, &format!("{p}.delta_head"), &layer.delta_head);
        for (m, vp) in layer.value_proj.iter().enumerate() {
            entries.push((format!("{p}.deform.value_proj{m:02}"), matrix_tensor(vp)));
        }
        for (m, op) in layer.output_proj.iter().enumerate() {
            entries.push((format!("{p}.deform.output_proj{m:02}"), matrix_tensor(op)));
        }
        entries.push((format!("{p}.deform.attn_head"), matrix_tensor(&layer.attn_head)));
        let mut off = Vec::with_capacity(w.heads * w.points * 2);
        for row in &layer.offsets {
            for o in row {
                off.push(o.dr as f32);
                off.push(o.dtheta as f32);
            }
        }
        entries.push((
            format!("{p}.deform.offsets"),
            FeatureGrid::new(w.heads, w.points, 2, off).expect("offset tensor"),
        ));
    }
    push_mlp(&mut entries, "score_head", &w.score_head);
    entries
}

pub fn weights_from_entries(entries: Vec<(String, FeatureGrid)>) -> Result<DecoderWeights> {
    let map = WeightMap { entries: entries.into_iter().collect() };
    let meta = map.get("meta")?;
    if meta.data().len() != 5 {
        return Err(Error::Format { offset: 0, reason: "meta tensor must hold 5 values".into() });
    }
    let d_model = meta.data()[0] as usize;
    let n_layers = meta.data()[1] as usize;
    let heads = meta.data()[2] as usize;
    let points = meta.data()[3] as usize;
    let temperature = meta.data()[4] as f64;
    let mut layers = Vec::with_capacity(n_layers);
    for li in 0..n_layers {
        let p = format!("layer{li:02}");
        let off_grid = map.get(&format!("{p}.deform.offsets"))?;
        if off_grid.h() != heads || off_grid.w() != points || off_grid.d() != 2 {
            return Err(Error::Format { offset: 0, reason: format!("bad offset tensor shape in {p}") });
        }
        let offsets: Vec<Vec<PolarOffset>> = (0..heads)
            .map(|m| {
                (0..points)
                    .map(|k| {
                        let f = off_grid.feature(m, k);
                        PolarOffset { dr: f[0] as f64, dtheta: f[1] as f64 }
                    })
                    .collect()
            })
            .collect();
        layers.push(LayerWeights {
            pe_mlp: map.mlp(&format!("{p}.pe_mlp"))?,
            csq_mlp: map.mlp(&format!("{p}.csq_mlp"))?,
            rref_mlp: map.mlp(&format!("{p}.rref_mlp"))?,
            ffn: map.mlp(&format!("{p}.ffn"))?,
            delta_head: map.mlp(&format!("{p}.delta_head"))?,
            value_proj: (0..heads)
                .map(|m| tensor_matrix(map.get(&format!("{p}.deform.value_proj{m:02}"))?))
                .collect::<Result<_>>()?,
            output_proj: (0..heads)
                .map(|m| tensor_matrix(map.get(&format!("{p}.deform.output_proj{m:02}"))?))
                .collect::<Result<_>>()?,
            attn_head: tensor_matrix(map.get(&format!("{p}.deform.attn_head"))?)?,
            offsets,
        });
    }
    Ok(DecoderWeights {
        d_model,
        heads,
        points,
        temperature,
        layers,
        score_head: map.mlp("score_head")?,
    })
}

pub fn save_weights(path: &Path, weights: &DecoderWeights) -> Result<()> {
    write_fgrc_file(path, &weights_to_entries(weights))
}

pub fn load_weights(path: &Path) -> Result<DecoderWeights> {
    weights_from_entries(read_fgrc_file(path)?)
}
