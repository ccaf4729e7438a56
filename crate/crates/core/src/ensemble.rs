//! Velocity averaging over the monochromator passband.
//!
//! Every phase accumulated in flight scales as 1/v, so a spread of neutron
//! speeds smears the interference fringe. The average is taken either by
//! Gauss–Hermite quadrature (default) or by seeded Monte-Carlo sampling.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{fit_sinusoid, FitResult, ScanData};
use crate::beamline::{
    gamma_period_mm, run_beamline, wrap_phase, BeamlineConfig, NeutronKinematics,
};
use crate::error::{invalid, Error, Result};
use crate::quadrature::{gauss_hermite, pairwise_sum};

pub const MAX_FRACTIONAL_SPREAD: f64 = 0.2;
const CALIBRATION_TOLERANCE: f64 = 1e-3;
const SCAN_POINTS: usize = 61;

/// FWHM → standard deviation for a Gaussian.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * 2f64.ln()).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Quadrature {
    GaussHermite { nodes: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature::GaussHermite { nodes: 64 }
    }
}

/// Gaussian speed distribution around the mean wavelength's speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityDistribution {
    /// m.
    pub mean_wavelength: f64,
    /// FWHM of the momentum distribution divided by its mean.
    pub fractional_spread: f64,
    pub quadrature: Quadrature,
}

impl VelocityDistribution {
    pub fn gaussian(mean_wavelength: f64, fractional_spread: f64) -> Result<Self> {
        let dist = Self {
            mean_wavelength,
            fractional_spread,
            quadrature: Quadrature::default(),
        };
        dist.validate()?;
        Ok(dist)
    }

    pub fn monochromatic(mean_wavelength: f64) -> Self {
        Self {
            mean_wavelength,
            fractional_spread: 0.0,
            quadrature: Quadrature::default(),
        }
    }

    pub fn with_quadrature(self, quadrature: Quadrature) -> Self {
        Self { quadrature, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_wavelength > 0.0) {
            return Err(invalid("mean_wavelength", "must be positive"));
        }
        if !(0.0..MAX_FRACTIONAL_SPREAD).contains(&self.fractional_spread) {
            return Err(invalid(
                "fractional_spread",
                format!(
                    "must lie in [0, {MAX_FRACTIONAL_SPREAD}), got {}",
                    self.fractional_spread
                ),
            ));
        }
        match self.quadrature {
            Quadrature::GaussHermite { nodes: 0 } | Quadrature::MonteCarlo { samples: 0, .. } => {
                Err(invalid("quadrature", "needs at least one sample"))
            }
            _ => Ok(()),
        }
    }

    /// Speeds and normalised weights.
    pub fn samples(&self) -> Result<Vec<(f64, f64)>> {
        self.validate()?;
        let v0 = NeutronKinematics::from_wavelength(self.mean_wavelength)?.velocity();
        if self.fractional_spread == 0.0 {
            return Ok(vec![(v0, 1.0)]);
        }
        let sigma = fwhm_to_sigma(self.fractional_spread);
        let raw: Vec<(f64, f64)> = match self.quadrature {
            Quadrature::GaussHermite { nodes } => gauss_hermite(nodes)
                .into_iter()
                .map(|(x, w)| (v0 * (1.0 + 2f64.sqrt() * sigma * x), w))
                .collect(),
            Quadrature::MonteCarlo { samples, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let normal = Normal::new(v0, sigma * v0)
                    .map_err(|e| invalid("fractional_spread", e.to_string()))?;
                (0..samples)
                    .map(|_| (normal.sample(&mut rng), 1.0))
                    .collect()
            }
        };
        let kept: Vec<(f64, f64)> = raw.into_iter().filter(|(v, _)| *v > 0.0).collect();
        let total = pairwise_sum(&kept.iter().map(|s| s.1).collect::<Vec<_>>());
        if !(total > 0.0) {
            return Err(invalid(
                "fractional_spread",
                "no positive speeds in the distribution",
            ));
        }
        Ok(kept.into_iter().map(|(v, w)| (v, w / total)).collect())
    }
}

/// Velocity-averaged transmission at RF phase `phi_omega` and stage
/// displacement `delta_l` (m). The mean wavelength of `dist` overrides the
/// kinematics stored in `config`; the γ zero of `config` is kept.
pub fn average_intensity(
    config: &BeamlineConfig,
    dist: &VelocityDistribution,
    phi_omega: f64,
    delta_l: f64,
) -> Result<f64> {
    let staged = config.with_stage(delta_l).with_rf_phase(phi_omega);
    staged.validate()?;
    let samples = dist.samples()?;
    let terms: Vec<f64> = samples
        .par_iter()
        .map(|&(v, w)| {
            let k = NeutronKinematics::from_velocity(v)?;
            Ok(w * run_beamline(&staged.with_kinematics(k), phi_omega)?)
        })
        .collect::<Result<_>>()?;
    Ok(pairwise_sum(&terms).clamp(0.0, 1.0))
}

/// A velocity-averaged stage scan and its fitted fringe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub positions_mm: Vec<f64>,
    pub mean_intensity: Vec<f64>,
    pub effective_contrast: f64,
    /// Fitted fringe phase at the configured γ zero, rad.
    pub phase_offset: f64,
    pub fit: FitResult,
}

/// Scans the stage over ±0.75 fringe periods around γ = 0 at φ_ω = 0
/// (clipped to the stage travel) and fits the averaged intensity.
pub fn ensemble_scan(
    config: &BeamlineConfig,
    dist: &VelocityDistribution,
) -> Result<EnsembleResult> {
    let kinematics = NeutronKinematics::from_wavelength(dist.mean_wavelength)?;
    let period = gamma_period_mm(&config.with_kinematics(kinematics)) / 1000.0;
    let center = config.gamma_zero;
    let lo = (center - 0.75 * period).max(-config.stage_travel);
    let hi = (center + 0.75 * period).min(config.stage_travel);
    let displacements: Vec<f64> = (0..SCAN_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (SCAN_POINTS - 1) as f64)
        .collect();
    let mean_intensity = displacements
        .iter()
        .map(|&d| average_intensity(config, dist, 0.0, d))
        .collect::<Result<Vec<_>>>()?;
    let positions_mm: Vec<f64> = displacements.iter().map(|d| d * 1000.0).collect();
    let scan = ScanData::new(positions_mm.clone(), mean_intensity.clone(), 0.0)?;
    let fit = fit_sinusoid(&scan)?;
    let phase_offset = wrap_phase(2.0 * PI * (center * 1000.0 - fit.phase_zero) / fit.period);
    Ok(EnsembleResult {
        positions_mm,
        mean_intensity,
        effective_contrast: fit.contrast.clamp(0.0, 1.0),
        phase_offset,
        fit,
    })
}

/// Fringe contrast after velocity averaging.
pub fn effective_contrast(config: &BeamlineConfig, dist: &VelocityDistribution) -> Result<f64> {
    Ok(ensemble_scan(config, dist)?.effective_contrast)
}

/// Gaussian FWHM spread (Gauss–Hermite averaging at the config's mean
/// wavelength) whose effective contrast matches `target`.
pub fn calibrate_spread_to_contrast(config: &BeamlineConfig, target: f64) -> Result<f64> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(invalid(
            "target_contrast",
            format!("must lie in (0, 1], got {target}"),
        ));
    }
    let wavelength = config.kinematics.wavelength();
    let contrast_at = |spread: f64| -> Result<f64> {
        let dist = VelocityDistribution::gaussian(wavelength, spread)?;
        match effective_contrast(config, &dist) {
            Ok(c) => Ok(c),
            Err(Error::Fit(_)) => Ok(0.0),
            Err(e) => Err(e),
        }
    };
    let unreachable = || Error::Unreachable {
        target,
        max_spread: MAX_FRACTIONAL_SPREAD,
    };

    let c0 = contrast_at(0.0)?;
    if (c0 - target).abs() < CALIBRATION_TOLERANCE {
        return Ok(0.0);
    }
    if target > c0 {
        return Err(unreachable());
    }

    let ceiling = MAX_FRACTIONAL_SPREAD * (1.0 - 1e-9);
    let mut lo = 0.0;
    let mut hi = 0.01;
    while contrast_at(hi)? > target {
        lo = hi;
        if hi >= ceiling {
            return Err(unreachable());
        }
        hi = (2.0 * hi).min(ceiling);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if contrast_at(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-9 {
            break;
        }
    }
    let spread = 0.5 * (lo + hi);
    let achieved = contrast_at(spread)?;
    if (achieved - target).abs() >= CALIBRATION_TOLERANCE {
        return Err(unreachable());
    }
    Ok(spread)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamline::BeamlineParams;
    use crate::qstate::{chsh_value, BellSettings};

    fn canonical() -> BeamlineConfig {
        BeamlineConfig::canonical()
    }

    fn dist(spread: f64) -> VelocityDistribution {
        VelocityDistribution::gaussian(1.99e-10, spread).unwrap()
    }

    /// Velocity-dependent phase at the default geometry, rad·(m/s):
    /// energy phase over the first arm plus the Larmor winding over both arms.
    fn phase_times_velocity(config: &BeamlineConfig) -> f64 {
        let p = BeamlineParams::default();
        let omega_l =
            2.0 * crate::constants::NEUTRON_MOMENT * config.guide_field() / crate::constants::HBAR;
        let first_arm = p.flight_path + p.coil_length;
        2.0 * config.rf_frequency() * first_arm
            + omega_l * (first_arm + p.return_path + p.coil_length)
    }

    #[test]
    fn zero_spread_matches_single_velocity() {
        let config = canonical();
        for (phi, d) in [(0.0, 0.0), (0.3, 0.004), (1.2, -0.011)] {
            let single = run_beamline(&config.with_stage(d), phi).unwrap();
            let avg = average_intensity(&config, &dist(0.0), phi, d).unwrap();
            assert_eq!(single, avg);
        }
    }

    #[test]
    fn spread_lowers_the_fringe_maximum() {
        let config = canonical();
        let peak = average_intensity(&config, &dist(0.0), 0.0, config.gamma_zero).unwrap();
        let smeared = average_intensity(&config, &dist(0.01), 0.0, config.gamma_zero).unwrap();
        assert!((peak - 1.0).abs() < 1e-9);
        assert!(smeared < 1.0);
    }

    #[test]
    fn zero_spread_contrast_is_unity() {
        let c = effective_contrast(&canonical(), &dist(0.0)).unwrap();
        assert!((c - 1.0).abs() < 1e-6, "{c}");
    }

    #[test]
    fn contrast_is_monotone_in_spread() {
        let config = canonical();
        let c: Vec<f64> = [0.005, 0.01, 0.02]
            .iter()
            .map(|&s| effective_contrast(&config, &dist(s)).unwrap())
            .collect();
        assert!(c[0] > c[1] && c[1] > c[2], "{c:?}");
    }

    #[test]
    fn gaussian_phasor_oracle() {
        let config = canonical();
        let k = phase_times_velocity(&config);
        let v0 = config.kinematics.velocity();
        for spread in [0.003, 0.006] {
            let sigma_phi = k / v0 * fwhm_to_sigma(spread);
            let oracle = (-sigma_phi * sigma_phi / 2.0).exp();
            let c = effective_contrast(&config, &dist(spread)).unwrap();
            assert!(
                (c - oracle).abs() / oracle < 0.03,
                "spread {spread}: {c} vs {oracle}"
            );
        }
    }

    #[test]
    fn small_spread_loss_is_quadratic() {
        let params = BeamlineParams {
            flight_path: 0.25,
            return_path: 0.15,
            ..BeamlineParams::default()
        };
        let config = BeamlineConfig::from_params(&params).unwrap();
        let loss = |s: f64| 1.0 - effective_contrast(&config, &dist(s)).unwrap();
        let ratio = loss(0.01) / loss(0.005);
        assert!((ratio / 4.0 - 1.0).abs() < 0.10, "ratio {ratio}");
    }

    #[test]
    fn monte_carlo_is_deterministic_and_close_to_quadrature() {
        let config = canonical();
        let mc = dist(0.01).with_quadrature(Quadrature::MonteCarlo {
            samples: 4000,
            seed: 11,
        });
        let a = average_intensity(&config, &mc, 0.0, 0.002).unwrap();
        let b = average_intensity(&config, &mc, 0.0, 0.002).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let gh = average_intensity(&config, &dist(0.01), 0.0, 0.002).unwrap();
        assert!((a - gh).abs() < 0.02, "{a} vs {gh}");
    }

    #[test]
    fn calibration_round_trip() {
        let config = canonical();
        assert_eq!(calibrate_spread_to_contrast(&config, 1.0).unwrap(), 0.0);
        let s = calibrate_spread_to_contrast(&config, 0.838).unwrap();
        let c = effective_contrast(&config, &dist(s)).unwrap();
        assert!((c - 0.838).abs() < 1e-3, "{s} -> {c}");
        let s_half = calibrate_spread_to_contrast(&config, 0.5).unwrap();
        assert!(s_half > s);
        assert!(calibrate_spread_to_contrast(&config, 1.2).is_err());
        assert!(calibrate_spread_to_contrast(&config, 0.0).is_err());
    }

    #[test]
    fn fringe_chsh_scales_with_contrast() {
        let config = canonical();
        let d = dist(0.008);
        let scan = ensemble_scan(&config, &d).unwrap();
        // spin phase α is set by 2φ_ω; energy phase γ is analysed at −γ
        let intensity = |alpha: f64, gamma: f64| {
            let delta_l = config.displacement_for_phase(wrap_phase(-gamma));
            average_intensity(&config, &d, alpha / 2.0, delta_l).unwrap()
        };
        let e = BellSettings::canonical().pairs().map(|(a, g)| {
            let (pp, mm) = (intensity(a, g), intensity(a + PI, g + PI));
            let (pm, mp) = (intensity(a, g + PI), intensity(a + PI, g));
            (pp + mm - pm - mp) / (pp + mm + pm + mp)
        });
        let s = chsh_value(e[0], e[1], e[2], e[3]).unwrap();
        let want = scan.effective_contrast * 2.0 * 2f64.sqrt();
        assert!((s - want).abs() < 0.01, "{s} vs {want}");
        assert!(scan.effective_contrast < 1.0);
        assert!(scan.mean_intensity.iter().all(|i| (0.0..=1.0).contains(i)));
    }

    #[test]
    fn invalid_distributions_are_rejected() {
        assert!(VelocityDistribution::gaussian(1.99e-10, 0.2).is_err());
        assert!(VelocityDistribution::gaussian(1.99e-10, -0.01).is_err());
        assert!(VelocityDistribution::gaussian(0.0, 0.01).is_err());
        let bad = dist(0.01).with_quadrature(Quadrature::GaussHermite { nodes: 0 });
        assert!(bad.samples().is_err());
    }
}
