//! Pixel weights for the sparse penalty, built from the two binary priors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, GrayImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `w_min` on prior pixels, 1 elsewhere.
    #[default]
    TwoLevel,
    /// `1 - (1 - w_min) * boxblur(prior)`: weights fall off smoothly around priors.
    Graded,
}

/// Per-pixel weights in `[w_min, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    image: GrayImage,
    w_min: f64,
}

impl WeightMatrix {
    pub fn uniform(height: usize, width: usize) -> Self {
        Self {
            image: GrayImage::filled(height, width, 1.0),
            w_min: 1.0,
        }
    }

    /// Wraps arbitrary weights; every entry must lie in `(0, 1]`.
    pub fn from_image(image: GrayImage) -> Result<Self> {
        let w_min = image.min();
        if !(w_min > 0.0 && image.max() <= 1.0) {
            return Err(Error::invalid("weights", "entries must lie in (0, 1]"));
        }
        Ok(Self { image, w_min })
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.image.get(y, x)
    }

    pub fn data(&self) -> &[f64] {
        self.image.data()
    }

    /// Smallest weight present.
    pub fn w_min(&self) -> f64 {
        self.w_min
    }

    /// Weights as an image; already in `[0, 1]`, so it saves directly as a heatmap.
    pub fn as_image(&self) -> &GrayImage {
        &self.image
    }
}

fn check_w_min(w_min: f64) -> Result<()> {
    if !(w_min > 0.0 && w_min <= 1.0) {
        return Err(Error::invalid("w_min", format!("{w_min} not in (0, 1]")));
    }
    Ok(())
}

pub fn build_weight(block_prior: &BinaryMask, broken_prior: &BinaryMask, w_min: f64) -> Result<WeightMatrix> {
    check_w_min(w_min)?;
    let prior = block_prior.or(broken_prior)?;
    let (h, w) = prior.dims();
    let data = prior.data().iter().map(|&p| if p { w_min } else { 1.0 }).collect();
    let image = GrayImage::new(h, w, data)?;
    Ok(WeightMatrix {
        w_min: image.min(),
        image,
    })
}

/// Graded variant: the union prior is box-blurred with the given radius first.
pub fn build_weight_graded(
    block_prior: &BinaryMask,
    broken_prior: &BinaryMask,
    w_min: f64,
    radius: usize,
) -> Result<WeightMatrix> {
    check_w_min(w_min)?;
    let prior = block_prior.or(broken_prior)?;
    let blurred = box_blur(&prior.to_gray(), radius);
    let image = blurred.map(|b| (1.0 - (1.0 - w_min) * b).clamp(w_min, 1.0));
    Ok(WeightMatrix {
        w_min: image.min(),
        image,
    })
}

pub fn build_weight_with(
    block_prior: &BinaryMask,
    broken_prior: &BinaryMask,
    w_min: f64,
    mode: WeightMode,
    blur_radius: usize,
) -> Result<WeightMatrix> {
    match mode {
        WeightMode::TwoLevel => build_weight(block_prior, broken_prior, w_min),
        WeightMode::Graded => build_weight_graded(block_prior, broken_prior, w_min, blur_radius),
    }
}

/// Mean over the `(2r+1)^2` window, truncated at the border.
fn box_blur(img: &GrayImage, r: usize) -> GrayImage {
    let (h, w) = img.dims();
    let mut integral = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        for x in 0..w {
            integral[(y + 1) * (w + 1) + x + 1] =
                img.get(y, x) + integral[y * (w + 1) + x + 1] + integral[(y + 1) * (w + 1) + x] - integral[y * (w + 1) + x];
        }
    }
    GrayImage::from_fn(h, w, |y, x| {
        let (y0, x0) = (y.saturating_sub(r), x.saturating_sub(r));
        let (y1, x1) = ((y + r + 1).min(h), (x + r + 1).min(w));
        let s = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1] - integral[y1 * (w + 1) + x0]
            + integral[y0 * (w + 1) + x0];
        s / ((y1 - y0) * (x1 - x0)) as f64
    })
}
