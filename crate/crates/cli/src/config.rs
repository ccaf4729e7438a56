//! Run configuration file (TOML). Every key is optional; unknown keys are errors.

use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use nbell_core::ensemble::Quadrature;
use nbell_core::{
    BeamlineConfig, BeamlineParams, BellSettings, RateModel, SystematicPhase, VelocityDistribution,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub beamline: BeamlineSection,
    pub source: SourceSection,
    pub counting: CountingSection,
    pub bell: BellSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamlineSection {
    pub guide_field_t: f64,
    pub rf_frequency_hz: f64,
    pub coil_length_m: f64,
    pub flight_path_m: f64,
    pub return_path_m: f64,
    pub stage_travel_m: f64,
    pub flip_efficiency: f64,
    pub larmor_compensation: bool,
}

impl Default for BeamlineSection {
    fn default() -> Self {
        let p = BeamlineParams::default();
        Self {
            guide_field_t: p.guide_field,
            rf_frequency_hz: p.rf_frequency_hz,
            coil_length_m: p.coil_length,
            flight_path_m: p.flight_path,
            return_path_m: p.return_path,
            stage_travel_m: p.stage_travel,
            flip_efficiency: p.flip_efficiency,
            larmor_compensation: p.larmor_compensation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    pub wavelength_m: f64,
    /// FWHM of the momentum distribution over its mean. When absent, the
    /// spread is calibrated to the configured contrast.
    pub fractional_spread: Option<f64>,
    pub quadrature_nodes: usize,
    /// Switches to seeded Monte-Carlo averaging with this many samples.
    pub monte_carlo_samples: Option<usize>,
}

impl Default for SourceSection {
    fn default() -> Self {
        Self {
            wavelength_m: BeamlineParams::default().wavelength,
            fractional_spread: None,
            quadrature_nodes: 64,
            monte_carlo_samples: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountingSection {
    pub peak_counts: f64,
    /// Fringe contrast. When absent it is computed from `[source]`
    /// `fractional_spread`, or defaults to 0.838.
    pub contrast: Option<f64>,
    /// Bound of the per-setting α misalignment, degrees.
    pub systematic_max_deg: f64,
    pub background: f64,
    pub detector_efficiency: f64,
}

impl Default for CountingSection {
    fn default() -> Self {
        Self {
            peak_counts: 32_000.0,
            contrast: None,
            systematic_max_deg: 2.0,
            background: 0.0,
            detector_efficiency: 0.99,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BellSection {
    pub alpha1: f64,
    pub alpha2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for BellSection {
    fn default() -> Self {
        let s = BellSettings::canonical();
        Self {
            alpha1: s.alpha1,
            alpha2: s.alpha2,
            gamma1: s.gamma1,
            gamma2: s.gamma2,
            repetitions: 3,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

pub const DEFAULT_CONTRAST: f64 = 0.838;

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: Self =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.counting;
        ensure!(
            c.peak_counts > 0.0,
            "[counting] peak_counts must be positive"
        );
        ensure!(
            c.background >= 0.0,
            "[counting] background must be nonnegative"
        );
        ensure!(
            c.systematic_max_deg >= 0.0,
            "[counting] systematic_max_deg must be nonnegative"
        );
        ensure!(
            (0.0..=1.0).contains(&c.detector_efficiency),
            "[counting] detector_efficiency must lie in [0, 1]"
        );
        if let Some(contrast) = c.contrast {
            ensure!(
                (0.0..=1.0).contains(&contrast),
                "[counting] contrast must lie in [0, 1]"
            );
        }
        ensure!(
            self.bell.repetitions > 0,
            "[bell] repetitions must be at least 1"
        );
        ensure!(
            self.source.wavelength_m > 0.0,
            "[source] wavelength_m must be positive"
        );
        ensure!(
            self.source.quadrature_nodes > 0,
            "[source] quadrature_nodes must be positive"
        );
        Ok(())
    }

    pub fn beamline_params(&self) -> BeamlineParams {
        let b = &self.beamline;
        BeamlineParams {
            wavelength: self.source.wavelength_m,
            guide_field: b.guide_field_t,
            rf_frequency_hz: b.rf_frequency_hz,
            coil_length: b.coil_length_m,
            flight_path: b.flight_path_m,
            return_path: b.return_path_m,
            stage_travel: b.stage_travel_m,
            flip_efficiency: b.flip_efficiency,
            larmor_compensation: b.larmor_compensation,
        }
    }

    pub fn beamline(&self) -> Result<BeamlineConfig> {
        BeamlineConfig::from_params(&self.beamline_params()).context("building beamline")
    }

    pub fn quadrature(&self, seed: u64) -> Quadrature {
        match self.source.monte_carlo_samples {
            Some(samples) => Quadrature::MonteCarlo { samples, seed },
            None => Quadrature::GaussHermite {
                nodes: self.source.quadrature_nodes,
            },
        }
    }

    pub fn distribution(&self, spread: f64, seed: u64) -> Result<VelocityDistribution> {
        let dist = VelocityDistribution::gaussian(self.source.wavelength_m, spread)?;
        Ok(dist.with_quadrature(self.quadrature(seed)))
    }

    pub fn settings(&self) -> BellSettings {
        BellSettings {
            alpha1: self.bell.alpha1,
            alpha2: self.bell.alpha2,
            gamma1: self.bell.gamma1,
            gamma2: self.bell.gamma2,
        }
    }

    pub fn rate_model(&self, contrast: f64) -> RateModel {
        let c = &self.counting;
        RateModel {
            peak_counts: c.peak_counts,
            contrast,
            systematics: if c.systematic_max_deg == 0.0 {
                SystematicPhase::None
            } else {
                SystematicPhase::Uniform {
                    max_abs: c.systematic_max_deg.to_radians(),
                }
            },
            background: c.background,
        }
    }
}

/// Angle in radians, or in degrees with a `deg` suffix (`45deg`, `45 deg`).
pub fn parse_angle(text: &str) -> Result<f64, String> {
    let trimmed = text.trim();
    let (number, degrees) = match trimmed.strip_suffix("deg") {
        Some(rest) => (rest.trim_end(), true),
        None => (
            trimmed.strip_suffix("rad").unwrap_or(trimmed).trim_end(),
            false,
        ),
    };
    let value: f64 = number.parse().map_err(|_| {
        format!("`{text}` is not an angle (radians, or degrees with a `deg` suffix)")
    })?;
    if !value.is_finite() {
        return Err(format!("`{text}` is not finite"));
    }
    Ok(if degrees { value.to_radians() } else { value })
}
