//! End-to-end detection: priors → weights → decomposition → segmentation,
//! driven by a flat configuration that mirrors the config-file keys.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hough::{broken_line_maps, CircleParam, HoughConfig, LineParam};
use crate::image::{BinaryMask, GrayImage};
use crate::rpca::{solve, Decomposition, LowRankMode, SolverConfig};
use crate::segmentation::{segment, SegmentationResult, Thresholds};
use crate::spectral::{binarize_fusion, fusion_maps, BlockPriorConfig, FusionWeights};
use crate::synth::MeshSpec;
use crate::weights::{build_weight_with, WeightMatrix, WeightMode};
use crate::MeshType;

/// Every tunable of the detector. Solver weights left unset take the
/// mesh-specific defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mesh_type: MeshType,
    /// Treat dark pixels as metal.
    pub invert: bool,

    pub lambda: Option<f64>,
    pub beta: Option<f64>,
    pub rho: f64,
    pub lowrank_mode: LowRankMode,
    pub p: f64,
    pub tau: usize,
    pub maxstep: usize,
    pub epsilon: f64,
    pub intensity_scale: f64,

    pub w_min: f64,
    pub weight_mode: WeightMode,
    pub weight_blur_radius: usize,
    /// Skip both priors (uniform weights).
    pub no_priors: bool,

    pub lowpass_sides: [usize; 3],
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub fusion_min_contrast: f64,
    pub fusion_max_density: f64,
    pub fusion_threshold: Option<f64>,

    pub rho_resolution: f64,
    pub theta_resolution_deg: f64,
    pub vote_threshold: Option<u32>,
    pub radius_min: Option<usize>,
    pub radius_max: Option<usize>,
    pub dilate_radius: usize,
    pub min_support: f64,

    pub k_sigma: f64,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::for_mesh(MeshType::Square)
    }
}

impl PipelineConfig {
    pub fn for_mesh(mesh_type: MeshType) -> Self {
        let s = SolverConfig::for_mesh(mesh_type);
        let b = BlockPriorConfig::default();
        let h = HoughConfig::default();
        Self {
            mesh_type,
            invert: false,
            lambda: None,
            beta: None,
            rho: s.rho,
            lowrank_mode: s.lowrank_mode,
            p: s.p,
            tau: s.tau,
            maxstep: s.maxstep,
            epsilon: s.epsilon,
            intensity_scale: s.intensity_scale,
            w_min: 0.1,
            weight_mode: WeightMode::TwoLevel,
            weight_blur_radius: 2,
            no_priors: false,
            lowpass_sides: b.sides,
            k1: b.weights.k1,
            k2: b.weights.k2,
            k3: b.weights.k3,
            fusion_min_contrast: b.min_contrast,
            fusion_max_density: b.max_density,
            fusion_threshold: b.threshold,
            rho_resolution: h.rho_resolution,
            theta_resolution_deg: h.theta_resolution.to_degrees(),
            vote_threshold: h.vote_threshold,
            radius_min: None,
            radius_max: None,
            dilate_radius: h.dilate_radius,
            min_support: h.min_support,
            k_sigma: 3.0,
            t1: None,
            t2: None,
        }
    }

    /// Defaults matched to a synthetic mesh: its type and ring radius.
    pub fn for_mesh_spec(mesh: &MeshSpec) -> Self {
        let mut cfg = Self::for_mesh(mesh.mesh_type);
        if mesh.mesh_type == MeshType::Circular {
            let (lo, hi) = mesh.radius_range();
            cfg.radius_min = Some(lo);
            cfg.radius_max = Some(hi);
        }
        cfg
    }

    /// Parses a flat TOML table; unknown keys are rejected.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let table: toml::Table = s.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::from_table(table)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Builds from a key/value table over the square-mesh defaults.
    pub fn from_table(table: toml::Table) -> Result<Self> {
        Self::for_mesh(MeshType::Square).with_overrides(table)
    }

    /// Applies a key/value table on top of `self`. A `mesh_type` that differs
    /// from the current one resets the remaining defaults to that mesh first.
    pub fn with_overrides(&self, table: toml::Table) -> Result<Self> {
        let start = match table.get("mesh_type") {
            Some(v) => {
                let m: MeshType = v
                    .as_str()
                    .ok_or_else(|| Error::Config("mesh_type must be a string".into()))?
                    .parse()?;
                if m == self.mesh_type {
                    self.clone()
                } else {
                    Self::for_mesh(m)
                }
            }
            None => self.clone(),
        };
        let mut base = toml::Table::try_from(&start).map_err(|e| Error::Config(e.to_string()))?;
        for key in table.keys() {
            if !base.contains_key(key) && !Self::OPTIONAL_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
        }
        base.extend(table);
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Keys whose default is unset, and therefore absent from a serialized default.
    const OPTIONAL_KEYS: &'static [&'static str] = &[
        "lambda",
        "beta",
        "fusion_threshold",
        "vote_threshold",
        "radius_min",
        "radius_max",
        "t1",
        "t2",
    ];

    pub fn solver(&self) -> SolverConfig {
        let d = SolverConfig::for_mesh(self.mesh_type);
        SolverConfig {
            lambda: self.lambda.unwrap_or(d.lambda),
            beta: self.beta.unwrap_or(d.beta),
            rho: self.rho,
            lowrank_mode: self.lowrank_mode,
            p: self.p,
            tau: self.tau,
            maxstep: self.maxstep,
            epsilon: self.epsilon,
            intensity_scale: self.intensity_scale,
        }
    }

    pub fn block_prior(&self) -> BlockPriorConfig {
        BlockPriorConfig {
            sides: self.lowpass_sides,
            weights: FusionWeights {
                k1: self.k1,
                k2: self.k2,
                k3: self.k3,
            },
            min_contrast: self.fusion_min_contrast,
            max_density: self.fusion_max_density,
            threshold: self.fusion_threshold,
        }
    }

    pub fn hough(&self) -> HoughConfig {
        let radius_range = match (self.radius_min, self.radius_max) {
            (None, None) => None,
            (lo, hi) => Some((lo.unwrap_or(4), hi.unwrap_or(lo.unwrap_or(4).max(4)))),
        };
        HoughConfig {
            rho_resolution: self.rho_resolution,
            theta_resolution: self.theta_resolution_deg * PI / 180.0,
            vote_threshold: self.vote_threshold,
            radius_range,
            dilate_radius: self.dilate_radius,
            min_support: self.min_support,
        }
    }

    pub fn thresholds(&self) -> Result<Thresholds> {
        match (self.t1, self.t2) {
            (Some(t1), Some(t2)) => Ok(Thresholds::Fixed { t1, t2 }),
            (None, None) => Ok(Thresholds::KSigma(self.k_sigma)),
            _ => Err(Error::Config("t1 and t2 must be given together".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver().validate()?;
        self.hough().validate()?;
        self.thresholds()?;
        if !(self.w_min > 0.0 && self.w_min <= 1.0) {
            return Err(Error::invalid("w_min", "must lie in (0, 1]"));
        }
        if !(self.k_sigma > 0.0) {
            return Err(Error::invalid("k_sigma", "must be > 0"));
        }
        let [a, b, c] = self.lowpass_sides;
        if !(0 < a && a < b && b < c) {
            return Err(Error::invalid("lowpass_sides", "must be strictly increasing and > 0"));
        }
        Ok(())
    }

    /// Effective configuration with mesh defaults filled in, as pretty JSON.
    pub fn effective_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let s = self.solver();
        v["lambda"] = s.lambda.into();
        v["beta"] = s.beta.into();
        v
    }
}

#[derive(Clone, Debug)]
pub struct Priors {
    pub block: BinaryMask,
    pub broken: BinaryMask,
    pub lines: Vec<LineParam>,
    pub circles: Vec<CircleParam>,
}

pub fn compute_priors(img: &GrayImage, cfg: &PipelineConfig) -> Result<Priors> {
    let (h, w) = img.dims();
    if cfg.no_priors {
        return Ok(Priors {
            block: BinaryMask::zeros(h, w),
            broken: BinaryMask::zeros(h, w),
            lines: Vec::new(),
            circles: Vec::new(),
        });
    }
    let block_cfg = cfg.block_prior();
    let block = binarize_fusion(&fusion_maps(img, &block_cfg)?.fused, &block_cfg)?;
    let maps = broken_line_maps(img, cfg.mesh_type, &cfg.hough())?;
    Ok(Priors {
        block,
        broken: maps.prior,
        lines: maps.lines,
        circles: maps.circles,
    })
}

#[derive(Clone, Debug)]
pub struct Detection {
    pub priors: Priors,
    pub weights: WeightMatrix,
    pub decomposition: Decomposition,
    pub segmentation: SegmentationResult,
}

/// Runs the solver and segmentation given precomputed priors.
pub fn detect_with_priors(img: &GrayImage, priors: Priors, cfg: &PipelineConfig) -> Result<Detection> {
    let weights = build_weight_with(&priors.block, &priors.broken, cfg.w_min, cfg.weight_mode, cfg.weight_blur_radius)?;
    let decomposition = solve(img, &weights, &cfg.solver())?;
    let segmentation = segment(&decomposition.e, cfg.thresholds()?)?;
    Ok(Detection {
        priors,
        weights,
        decomposition,
        segmentation,
    })
}

pub fn prepare(img: &GrayImage, cfg: &PipelineConfig) -> GrayImage {
    if cfg.invert {
        img.inverted()
    } else {
        img.clone()
    }
}

pub fn detect(img: &GrayImage, cfg: &PipelineConfig) -> Result<Detection> {
    cfg.validate()?;
    let img = prepare(img, cfg);
    let priors = compute_priors(&img, cfg)?;
    detect_with_priors(&img, priors, cfg)
}

/// Machine-readable summary of one detection run.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub image: String,
    pub t1: f64,
    pub t2: f64,
    pub iterations: usize,
    pub termination: crate::rpca::Termination,
    pub residuals: Vec<f64>,
    pub block_prior_density: f64,
    pub broken_prior_density: f64,
    pub defect_pixels: usize,
    pub broken_pixels: usize,
    pub block_pixels: usize,
}

impl RunReport {
    pub fn new(image: impl Into<String>, d: &Detection) -> Self {
        Self {
            image: image.into(),
            t1: d.segmentation.t1,
            t2: d.segmentation.t2,
            iterations: d.decomposition.iterations(),
            termination: d.decomposition.termination,
            residuals: d.decomposition.trace.iter().map(|t| t.residual).collect(),
            block_prior_density: d.priors.block.density(),
            broken_prior_density: d.priors.broken.density(),
            defect_pixels: d.segmentation.defect_mask.count_ones(),
            broken_pixels: d.segmentation.broken_mask.count_ones(),
            block_pixels: d.segmentation.block_mask.count_ones(),
        }
    }
}
