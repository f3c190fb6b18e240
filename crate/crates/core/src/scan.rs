//! Serpentine scan planning over a sample region, and tile stitching.
//!
//! A node is the sample-plane position (µm) of a tile's top-left corner.
//! The usable tile is the square inscribed in the circular field of view.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{confusion, metrics, MetricsReport};
use crate::image::{write_atomic, BinaryMask, GrayImage};
use crate::pipeline::{detect, PipelineConfig, RunReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    /// Serpentine order, `(x, y)` in µm.
    pub nodes: Vec<(f64, f64)>,
    pub step: f64,
    pub dwell: f64,
    pub fov_diameter: f64,
    /// `(width, height)` in µm.
    pub region: (f64, f64),
    pub cols: usize,
    pub rows: usize,
}

impl ScanPlan {
    pub fn overlap(&self) -> f64 {
        self.fov_diameter - self.step
    }

    pub fn total_dwell(&self) -> f64 {
        self.nodes.len() as f64 * self.dwell
    }

    /// Side of the square inscribed in the field of view.
    pub fn tile_side(&self) -> f64 {
        self.fov_diameter / std::f64::consts::SQRT_2
    }
}

fn axis_count(extent: f64, step: f64) -> usize {
    // tolerate 2000/500 landing a hair under 4
    ((extent / step) + 1e-9).floor() as usize + 1
}

pub fn plan_s_path(region: (f64, f64), step: f64, fov_diameter: f64, dwell: f64) -> Result<ScanPlan> {
    let (w, h) = region;
    if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
        return Err(Error::invalid("region", "width and height must be positive"));
    }
    if !(step > 0.0) {
        return Err(Error::invalid("step", "must be > 0"));
    }
    if !(dwell >= 0.0) {
        return Err(Error::invalid("dwell", "must be >= 0"));
    }
    if !(fov_diameter > step) {
        return Err(Error::NoRedundancy { fov: fov_diameter, step });
    }
    let (cols, rows) = (axis_count(w, step), axis_count(h, step));
    let mut nodes = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        let y = r as f64 * step;
        for i in 0..cols {
            let c = if r % 2 == 0 { i } else { cols - 1 - i };
            nodes.push((c as f64 * step, y));
        }
    }
    Ok(ScanPlan {
        nodes,
        step,
        dwell,
        fov_diameter,
        region,
        cols,
        rows,
    })
}

/// Perturbs every node uniformly within `±amplitude` µm per axis.
pub fn jitter_nodes(plan: &ScanPlan, amplitude: f64, seed: u64) -> ScanPlan {
    if amplitude <= 0.0 {
        return plan.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = plan
        .nodes
        .iter()
        .map(|&(x, y)| (x + rng.gen_range(-amplitude..=amplitude), y + rng.gen_range(-amplitude..=amplitude)))
        .collect();
    ScanPlan { nodes, ..plan.clone() }
}

#[derive(Serialize)]
struct PlanRow {
    node: usize,
    x_um: f64,
    y_um: f64,
    dwell_s: f64,
}

pub fn plan_csv(plan: &ScanPlan) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for (i, &(x, y)) in plan.nodes.iter().enumerate() {
        wtr.serialize(PlanRow {
            node: i,
            x_um: x,
            y_um: y,
            dwell_s: plan.dwell,
        })?;
    }
    wtr.into_inner().map_err(|e| Error::Config(e.to_string()))
}

pub fn write_plan(plan: &ScanPlan, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &plan_csv(plan)?)
}

/// Pixel offset of a node.
pub fn node_offset(node: (f64, f64), pixel_pitch: f64) -> (usize, usize) {
    let px = |v: f64| (v / pixel_pitch).round().max(0.0) as usize;
    (px(node.1), px(node.0))
}

/// Tile size in pixels for a plan at the given pitch.
pub fn tile_pixels(plan: &ScanPlan, pixel_pitch: f64) -> usize {
    (plan.tile_side() / pixel_pitch).floor() as usize
}

fn check_tiles(dims: impl Iterator<Item = (usize, usize)>, plan: &ScanPlan, count: usize, pixel_pitch: f64) -> Result<(usize, usize)> {
    if !(pixel_pitch > 0.0) {
        return Err(Error::invalid("pixel_pitch", "must be > 0"));
    }
    if count != plan.nodes.len() {
        return Err(Error::invalid("tiles", format!("{count} tiles for {} nodes", plan.nodes.len())));
    }
    let mut size = None;
    for d in dims {
        match size {
            None => size = Some(d),
            Some(s) if s != d => return Err(Error::dims(s, d)),
            _ => {}
        }
    }
    size.ok_or_else(|| Error::invalid("tiles", "no tiles"))
}

fn mosaic_dims(plan: &ScanPlan, tile: (usize, usize), pixel_pitch: f64) -> (usize, usize) {
    plan.nodes.iter().fold((0, 0), |(h, w), &n| {
        let (y, x) = node_offset(n, pixel_pitch);
        (h.max(y + tile.0), w.max(x + tile.1))
    })
}

/// Places `tiles[i]` at `plan.nodes[i]`; overlaps are averaged, uncovered pixels are 0.
pub fn stitch(tiles: &[GrayImage], plan: &ScanPlan, pixel_pitch: f64) -> Result<GrayImage> {
    let tile = check_tiles(tiles.iter().map(GrayImage::dims), plan, tiles.len(), pixel_pitch)?;
    let (h, w) = mosaic_dims(plan, tile, pixel_pitch);
    let mut sum = vec![0.0; h * w];
    let mut count = vec![0u32; h * w];
    for (t, &node) in tiles.iter().zip(&plan.nodes) {
        let (oy, ox) = node_offset(node, pixel_pitch);
        for y in 0..tile.0 {
            for x in 0..tile.1 {
                let i = (oy + y) * w + ox + x;
                sum[i] += t.get(y, x);
                count[i] += 1;
            }
        }
    }
    let data = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    GrayImage::new(h, w, data)
}

/// OR-blend of per-tile masks; `None` tiles contribute nothing.
pub fn stitch_masks(tiles: &[Option<BinaryMask>], plan: &ScanPlan, pixel_pitch: f64) -> Result<BinaryMask> {
    let tile = check_tiles(tiles.iter().flatten().map(BinaryMask::dims), plan, tiles.len(), pixel_pitch)?;
    let (h, w) = mosaic_dims(plan, tile, pixel_pitch);
    let mut out = BinaryMask::zeros(h, w);
    for (t, &node) in tiles.iter().zip(&plan.nodes) {
        let Some(t) = t else { continue };
        let (oy, ox) = node_offset(node, pixel_pitch);
        for y in 0..tile.0 {
            for x in 0..tile.1 {
                if t.get(y, x) {
                    out.set(oy + y, ox + x, true);
                }
            }
        }
    }
    Ok(out)
}

/// Cuts the tile of every node out of a mosaic; parts beyond it are 0.
pub fn cut_tiles(mosaic: &GrayImage, plan: &ScanPlan, pixel_pitch: f64) -> Vec<GrayImage> {
    let side = tile_pixels(plan, pixel_pitch);
    plan.nodes
        .iter()
        .map(|&n| {
            let (y, x) = node_offset(n, pixel_pitch);
            mosaic.crop(y, x, side, side)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct TileReport {
    pub index: usize,
    pub node: (f64, f64),
    pub report: Option<RunReport>,
    pub error: Option<String>,
    pub metrics: Option<MetricsReport>,
}

#[derive(Clone, Debug)]
pub struct RegionDetection {
    pub defect_mask: BinaryMask,
    pub broken_mask: BinaryMask,
    pub block_mask: BinaryMask,
    pub tiles: Vec<TileReport>,
}

impl RegionDetection {
    pub fn failed_tiles(&self) -> usize {
        self.tiles.iter().filter(|t| t.error.is_some()).count()
    }
}

/// Runs detection on every tile and OR-stitches the masks. A failing tile
/// is reported and left out of the mosaic.
pub fn detect_over_region(
    tiles: &[GrayImage],
    plan: &ScanPlan,
    pixel_pitch: f64,
    cfg: &PipelineConfig,
    gt: Option<&[BinaryMask]>,
) -> Result<RegionDetection> {
    check_tiles(tiles.iter().map(GrayImage::dims), plan, tiles.len(), pixel_pitch)?;
    if let Some(g) = gt {
        if g.len() != tiles.len() {
            return Err(Error::invalid("gt", "one ground-truth mask per tile required"));
        }
    }
    let results: Vec<_> = tiles
        .par_iter()
        .enumerate()
        .map(|(i, t)| detect(t, cfg).map_err(|e| e.to_string()).map(|d| (i, d)))
        .collect();

    let mut reports = Vec::with_capacity(tiles.len());
    let (mut defect, mut broken, mut block) = (Vec::new(), Vec::new(), Vec::new());
    for (i, r) in results.into_iter().enumerate() {
        let node = plan.nodes[i];
        match r {
            Ok((_, d)) => {
                let m = match gt {
                    Some(g) => Some(metrics(confusion(&d.segmentation.defect_mask, &g[i])?, 1.0)),
                    None => None,
                };
                reports.push(TileReport {
                    index: i,
                    node,
                    report: Some(RunReport::new(format!("tile_{i:03}"), &d)),
                    error: None,
                    metrics: m,
                });
                defect.push(Some(d.segmentation.defect_mask));
                broken.push(Some(d.segmentation.broken_mask));
                block.push(Some(d.segmentation.block_mask));
            }
            Err(e) => {
                log::warn!("tile {i} failed: {e}");
                reports.push(TileReport {
                    index: i,
                    node,
                    report: None,
                    error: Some(e),
                    metrics: None,
                });
                defect.push(None);
                broken.push(None);
                block.push(None);
            }
        }
    }
    if defect.iter().all(Option::is_none) {
        return Err(Error::Config("every tile failed".into()));
    }
    Ok(RegionDetection {
        defect_mask: stitch_masks(&defect, plan, pixel_pitch)?,
        broken_mask: stitch_masks(&broken, plan, pixel_pitch)?,
        block_mask: stitch_masks(&block, plan, pixel_pitch)?,
        tiles: reports,
    })
}
