//! Defect detection for periodic metallic-mesh images.
//!
//! An observed image `D` is split as `D = L + E + N`: a low-rank lattice
//! background `L`, a sparse defect layer `E` and dense noise `N`. The
//! sparsity penalty on `E` is weighted pixel-wise by two priors — a
//! spectral block-defect prior and a Hough broken-line prior — so that
//! plausible defect locations are penalized less.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub mod error;
pub mod evaluation;
pub mod hough;
pub mod image;
pub mod optics;
pub mod pipeline;
pub mod rpca;
pub mod scan;
pub mod segmentation;
pub mod spectral;
pub mod synth;
pub mod weights;

pub use error::{Error, Result};
pub use image::{BinaryMask, GrayImage, Polarity};

/// Lattice family of the mesh under inspection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshType {
    Square,
    Circular,
}

impl fmt::Display for MeshType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeshType::Square => "square",
            MeshType::Circular => "circular",
        })
    }
}

impl FromStr for MeshType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "square" => Ok(MeshType::Square),
            "circular" | "circle" => Ok(MeshType::Circular),
            other => Err(Error::invalid("mesh", format!("unknown mesh type `{other}`"))),
        }
    }
}
