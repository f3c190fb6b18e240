//! Block-defect prior: three centered square low-pass reconstructions fused by
//! a fixed linear combination, then binarized.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{binarize, otsu_threshold, BinaryMask, GrayImage, Polarity};

/// Complex 2-D spectrum with the zero-frequency bin at `(h/2, w/2)`.
#[derive(Clone, Debug)]
pub struct Spectrum {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, y: usize, x: usize) -> Complex64 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    /// Number of bins with a nonzero value.
    pub fn nonzero_bins(&self) -> usize {
        self.data.iter().filter(|c| c.norm_sqr() > 0.0).count()
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }
}

/// Coefficients of `P = k1*I3 + k2*(I1 + I2) - k3*(I2 - I1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            k1: 0.8,
            k2: 0.2,
            k3: 0.3,
        }
    }
}

/// Unnormalized forward 2-D DFT along rows then columns; inverse divides by h*w.
fn fft2_in_place(data: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = data[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            data[y * width + x] = column[y];
        }
    }
}

/// Swap quadrants so index 0 moves to `n/2` on each axis (or back, when `inverse`).
fn shift(data: &[Complex64], height: usize, width: usize, inverse: bool) -> Vec<Complex64> {
    let (sy, sx) = if inverse {
        (height - height / 2, width - width / 2)
    } else {
        (height / 2, width / 2)
    };
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for y in 0..height {
        let ty = (y + sy) % height;
        for x in 0..width {
            out[ty * width + (x + sx) % width] = data[y * width + x];
        }
    }
    out
}

pub fn fft2_centered(img: &GrayImage) -> Spectrum {
    let (h, w) = img.dims();
    let mut data: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut data, h, w, false);
    Spectrum {
        height: h,
        width: w,
        data: shift(&data, h, w, false),
    }
}

/// Inverse of [`fft2_centered`]. Returns the real part and the largest
/// discarded imaginary magnitude.
pub fn ifft2(spec: &Spectrum) -> (GrayImage, f64) {
    let (h, w) = spec.dims();
    let mut data = shift(&spec.data, h, w, true);
    fft2_in_place(&mut data, h, w, true);
    let norm = (h * w) as f64;
    let mut residue = 0.0f64;
    let real = data
        .iter()
        .map(|c| {
            residue = residue.max((c.im / norm).abs());
            c.re / norm
        })
        .collect();
    (GrayImage::from_raw(h, w, real), residue)
}

/// Index range `[c - side/2, c - side/2 + side)` kept along one axis.
pub fn lowpass_span(n: usize, side: usize) -> std::ops::Range<usize> {
    let start = n / 2 - side / 2;
    start..start + side
}

pub fn apply_square_lowpass(spec: &Spectrum, side: usize) -> Result<Spectrum> {
    let (h, w) = spec.dims();
    if side == 0 || side > h.min(w) {
        return Err(Error::invalid(
            "side",
            format!("{side} outside 1..={}", h.min(w)),
        ));
    }
    let rows = lowpass_span(h, side);
    let cols = lowpass_span(w, side);
    let mut out = Spectrum::zeros(h, w);
    for y in rows {
        for x in cols.clone() {
            out.data[y * w + x] = spec.data[y * w + x];
        }
    }
    Ok(out)
}

pub fn fuse(i1: &GrayImage, i2: &GrayImage, i3: &GrayImage, w: FusionWeights) -> Result<GrayImage> {
    i1.ensure_same_dims(i2.dims())?;
    i1.ensure_same_dims(i3.dims())?;
    let data = i1
        .data()
        .iter()
        .zip(i2.data())
        .zip(i3.data())
        .map(|((&a, &b), &c)| w.k1 * c + w.k2 * (a + b) - w.k3 * (b - a))
        .collect();
    Ok(GrayImage::from_raw(i1.height(), i1.width(), data))
}

/// Settings for [`block_defect_prior`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockPriorConfig {
    /// Square filter sides, strictly increasing; produce I1, I2, I3.
    pub sides: [usize; 3],
    pub weights: FusionWeights,
    /// Minimum gap between the mean fused value of the two Otsu classes.
    /// Below it the fusion map is treated as defect-free and the prior is empty.
    pub min_contrast: f64,
    /// Block defects are a minority of the image; a foreground covering more
    /// than this fraction means Otsu split the background instead, and the
    /// prior is empty.
    pub max_density: f64,
    /// Optional fixed threshold replacing Otsu.
    pub threshold: Option<f64>,
}

impl Default for BlockPriorConfig {
    fn default() -> Self {
        Self {
            sides: [10, 20, 40],
            weights: FusionWeights::default(),
            min_contrast: 0.05,
            max_density: 0.5,
            threshold: None,
        }
    }
}

/// Intermediate maps of the spectral prior, kept for debugging dumps.
#[derive(Clone, Debug)]
pub struct FusionMaps {
    pub filtered: [GrayImage; 3],
    pub fused: GrayImage,
    /// Largest imaginary residue over the three inverse transforms.
    pub imag_residue: f64,
}

pub fn fusion_maps(img: &GrayImage, cfg: &BlockPriorConfig) -> Result<FusionMaps> {
    let [s1, s2, s3] = cfg.sides;
    if !(s1 < s2 && s2 < s3) {
        return Err(Error::invalid("sides", format!("{:?} not strictly increasing", cfg.sides)));
    }
    let spec = fft2_centered(img);
    let mut residue = 0.0f64;
    let mut filtered = Vec::with_capacity(3);
    for side in cfg.sides {
        let (im, r) = ifft2(&apply_square_lowpass(&spec, side)?);
        residue = residue.max(r);
        filtered.push(im);
    }
    let fused = fuse(&filtered[0], &filtered[1], &filtered[2], cfg.weights)?;
    let filtered: [GrayImage; 3] = filtered.try_into().expect("three filters");
    Ok(FusionMaps {
        filtered,
        fused,
        imag_residue: residue,
    })
}

/// Binarized spectral-fusion map; set pixels mark suspected block defects.
pub fn block_defect_prior(img: &GrayImage, cfg: &BlockPriorConfig) -> Result<BinaryMask> {
    let maps = fusion_maps(img, cfg)?;
    binarize_fusion(&maps.fused, cfg)
}

pub(crate) fn binarize_fusion(fused: &GrayImage, cfg: &BlockPriorConfig) -> Result<BinaryMask> {
    let t = match cfg.threshold {
        Some(t) => t,
        None => otsu_threshold(fused)?,
    };
    let mask = binarize(fused, t, Polarity::Above);
    let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &m) in fused.data().iter().zip(mask.data()) {
        if m {
            fg += v;
            nf += 1;
        } else {
            bg += v;
            nb += 1;
        }
    }
    let too_dense = nf as f64 > cfg.max_density * fused.len() as f64;
    if nf == 0 || nb == 0 || too_dense || fg / (nf as f64) - bg / (nb as f64) < cfg.min_contrast {
        return Ok(BinaryMask::zeros(fused.height(), fused.width()));
    }
    Ok(mask)
}
