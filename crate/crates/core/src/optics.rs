//! Magnification and sampling arithmetic of the 4f microscope attachment.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticsSpec {
    /// Focal lengths in mm.
    pub f_objective: f64,
    pub f_tube: f64,
    pub f_internal: f64,
    pub f_relay: f64,
    /// Sensor pixel size in µm.
    pub pixel_size: f64,
    /// Screen-to-sensor ratio; yields the digital magnification, which is
    /// informational only.
    pub screen_to_sensor_ratio: f64,
    /// Field-of-view diameter at the sample, µm. Taken as given, not derived.
    pub fov_diameter: f64,
}

impl Default for OpticsSpec {
    fn default() -> Self {
        Self {
            f_objective: 30.0,
            f_tube: 40.0,
            f_internal: 5.43,
            f_relay: 2.87,
            pixel_size: 0.8,
            screen_to_sensor_ratio: 18.0,
            fov_diameter: 800.0,
        }
    }
}

impl OpticsSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("f_objective", self.f_objective),
            ("f_tube", self.f_tube),
            ("f_internal", self.f_internal),
            ("f_relay", self.f_relay),
            ("pixel_size", self.pixel_size),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be finite and > 0"));
            }
        }
        Ok(())
    }

    /// Tube over objective focal length.
    pub fn stage1(&self) -> f64 {
        self.f_tube / self.f_objective
    }

    /// Phone lens over relay lens focal length.
    pub fn stage2(&self) -> f64 {
        self.f_internal / self.f_relay
    }
}

pub fn optical_magnification(spec: &OpticsSpec) -> f64 {
    spec.stage1() * spec.stage2()
}

/// Sample-plane µm per sensor pixel.
pub fn object_pixel_pitch(spec: &OpticsSpec) -> f64 {
    spec.pixel_size / optical_magnification(spec)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OpticsReport {
    pub optical_magnification: f64,
    pub digital_magnification: f64,
    pub pixel_pitch_um: f64,
    pub fov_diameter_um: f64,
    /// FOV diameter expressed in sensor pixels.
    pub fov_pixels: f64,
}

pub fn report(spec: &OpticsSpec) -> Result<OpticsReport> {
    spec.validate()?;
    let pitch = object_pixel_pitch(spec);
    Ok(OpticsReport {
        optical_magnification: optical_magnification(spec),
        digital_magnification: spec.screen_to_sensor_ratio,
        pixel_pitch_um: pitch,
        fov_diameter_um: spec.fov_diameter,
        fov_pixels: spec.fov_diameter / pitch,
    })
}

impl fmt::Display for OpticsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "optical magnification Mo = {:.2}x ({:.4})", self.optical_magnification, self.optical_magnification)?;
        writeln!(f, "digital magnification Md = {:.1}x", self.digital_magnification)?;
        writeln!(f, "sample pixel pitch      = {:.4} um/pixel", self.pixel_pitch_um)?;
        write!(f, "field of view           = {:.0} um ({:.0} pixels)", self.fov_diameter_um, self.fov_pixels)
    }
}
