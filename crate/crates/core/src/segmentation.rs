//! Double-threshold segmentation of the sparse layer. Broken lines remove
//! metal and show up negative in `E`; block defects add material and show
//! up positive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, GrayImage};

#[derive(Clone, Debug)]
pub struct SegmentationResult {
    pub defect_mask: BinaryMask,
    pub broken_mask: BinaryMask,
    pub block_mask: BinaryMask,
    pub t1: f64,
    pub t2: f64,
}

/// Threshold selection for [`segment`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Thresholds {
    /// `mean ± k * std` of `E`, clamped to straddle zero.
    KSigma(f64),
    Fixed { t1: f64, t2: f64 },
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds::KSigma(3.0)
    }
}

pub fn auto_thresholds(e: &GrayImage, k: f64) -> Result<(f64, f64)> {
    if !(k > 0.0) {
        return Err(Error::invalid("k", "must be > 0"));
    }
    let n = e.len() as f64;
    let mean = e.mean();
    let var = e.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok((0.0, 0.0));
    }
    Ok(((mean - k * sd).min(0.0), (mean + k * sd).max(0.0)))
}

/// `broken = E <= t1`, `block = E > t2`.
pub fn double_threshold(e: &GrayImage, t1: f64, t2: f64) -> Result<SegmentationResult> {
    if !(t1 <= t2) {
        return Err(Error::invalid("t1", format!("t1 = {t1} exceeds t2 = {t2}")));
    }
    let (h, w) = e.dims();
    let broken_mask = BinaryMask::from_fn(h, w, |y, x| e.get(y, x) <= t1);
    let block_mask = BinaryMask::from_fn(h, w, |y, x| e.get(y, x) > t2);
    let defect_mask = broken_mask.or(&block_mask)?;
    Ok(SegmentationResult {
        defect_mask,
        broken_mask,
        block_mask,
        t1,
        t2,
    })
}

pub fn segment(e: &GrayImage, thresholds: Thresholds) -> Result<SegmentationResult> {
    let (t1, t2) = match thresholds {
        Thresholds::KSigma(k) => {
            let (t1, t2) = auto_thresholds(e, k)?;
            // `E <= 0` would flag every exact zero as broken; a clamped
            // lower threshold means "strictly negative" instead.
            (if t1 == 0.0 { -f64::from_bits(1) } else { t1 }, t2)
        }
        Thresholds::Fixed { t1, t2 } => (t1, t2),
    };
    double_threshold(e, t1, t2)
}
