//! Count-rate simulation and the count-based correlation estimator.
//!
//! Each Bell correlation E(α, γ) is estimated from four count rates at
//! (α, γ), (α⊥, γ⊥), (α, γ⊥), (α⊥, γ), where ⊥ adds π. Counts are Poisson
//! around `N0·½(1 + C cos(α + δ_α + γ)) + background`, with δ_α a small
//! per-setting misalignment fixed for the whole run.

use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::qstate::{analyzer_phases, chsh_value, BellSettings};

pub const CONTRAST_CRITICAL: f64 = SQRT_2 / 2.0;
/// `2(√2 − 1)`.
pub const EFFICIENCY_CRITICAL: f64 = 2.0 * (SQRT_2 - 1.0);
pub const THRESHOLD_TOLERANCE: f64 = 5e-4;

const LABEL_TOLERANCE: f64 = 1e-9;

/// Per-setting spin-phase misalignment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SystematicPhase {
    None,
    /// Drawn once per run, uniformly in ±`max_abs` rad, for each of α1, α1⊥, α2, α2⊥.
    Uniform {
        max_abs: f64,
    },
    /// Offsets for α1, α1⊥, α2, α2⊥.
    Fixed {
        offsets: [f64; 4],
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    /// Counts per point at the fringe maximum of a perfect-contrast fringe.
    pub peak_counts: f64,
    pub contrast: f64,
    pub systematics: SystematicPhase,
    pub background: f64,
}

impl Default for RateModel {
    fn default() -> Self {
        Self {
            peak_counts: 32_000.0,
            contrast: 0.838,
            systematics: SystematicPhase::Uniform {
                max_abs: 2f64.to_radians(),
            },
            background: 0.0,
        }
    }
}

impl RateModel {
    pub fn ideal(peak_counts: f64, contrast: f64) -> Self {
        Self {
            peak_counts,
            contrast,
            systematics: SystematicPhase::None,
            background: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_counts > 0.0 && self.peak_counts.is_finite()) {
            return Err(invalid(
                "peak_counts",
                format!("must be positive, got {}", self.peak_counts),
            ));
        }
        if !(0.0..=1.0).contains(&self.contrast) {
            return Err(invalid(
                "contrast",
                format!("must lie in [0, 1], got {}", self.contrast),
            ));
        }
        if !(self.background >= 0.0) {
            return Err(invalid("background", "must be nonnegative"));
        }
        match self.systematics {
            SystematicPhase::Uniform { max_abs } if !(max_abs >= 0.0 && max_abs.is_finite()) => {
                Err(invalid(
                    "systematics",
                    "bound must be finite and nonnegative",
                ))
            }
            SystematicPhase::Fixed { offsets } if offsets.iter().any(|o| !o.is_finite()) => {
                Err(invalid("systematics", "offsets must be finite"))
            }
            _ => Ok(()),
        }
    }
}

/// Mean counts `N0·½(1 + C cos(α + γ)) + background`; any misalignment is
/// expected to be folded into `alpha` by the caller.
pub fn expected_counts(model: &RateModel, alpha: f64, gamma: f64) -> f64 {
    model.peak_counts * 0.5 * (1.0 + model.contrast * (alpha + gamma).cos()) + model.background
}

/// One Poisson draw; a zero mean gives zero.
pub fn sample_counts<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<f64> {
    if !(mean >= 0.0 && mean.is_finite()) {
        return Err(invalid(
            "mean",
            format!("must be finite and nonnegative, got {mean}"),
        ));
    }
    if mean == 0.0 {
        return Ok(0.0);
    }
    let poisson = Poisson::new(mean).map_err(|e| invalid("mean", e.to_string()))?;
    Ok(poisson.sample(rng))
}

pub fn sample_counts_seeded(mean: f64, seed: u64) -> Result<f64> {
    sample_counts(mean, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Independent Poisson draws for a list of means; point `i` uses stream `i`
/// of the seeded generator.
pub fn sample_scan(means: &[f64], seed: u64) -> Result<Vec<f64>> {
    means
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            sample_counts(m, &mut rng)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

/// Counts for one correlation, ordered (α,γ), (α⊥,γ⊥), (α,γ⊥), (α⊥,γ).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingQuad {
    pub alpha: f64,
    pub gamma: f64,
    pub counts: [f64; 4],
}

/// `E = (a + b − c − d)/T` with first-order Poisson error
/// `σ_E² = 4(a + b)(c + d)/T³`.
pub fn expectation_from_counts(quad: &SettingQuad) -> Result<Estimate> {
    if quad.counts.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
        return Err(invalid("counts", "must be finite and nonnegative"));
    }
    let [a, b, c, d] = quad.counts;
    let total = a + b + c + d;
    if total == 0.0 {
        return Err(Error::ZeroCounts);
    }
    let same = a + b;
    let crossed = c + d;
    Ok(Estimate {
        value: (same - crossed) / total,
        sigma: (4.0 * same * crossed / total.powi(3)).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// Mean counts, no sampling.
    Expected,
    Poisson,
}

/// A single counting measurement, in the CSV schema.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub alpha: f64,
    pub gamma: f64,
    pub repetition: usize,
    pub counts: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellRun {
    /// At (α1,γ1), (α2,γ1), (α1,γ2), (α2,γ2).
    pub quads: [SettingQuad; 4],
    pub correlations: [Estimate; 4],
    pub chsh: Estimate,
    pub repetitions: usize,
    /// Offsets applied to α1, α1⊥, α2, α2⊥.
    pub alpha_offsets: [f64; 4],
    pub records: Vec<CountRecord>,
}

impl BellRun {
    pub fn significance(&self) -> Result<f64> {
        violation_significance(self.chsh.value, self.chsh.sigma)
    }
}

fn draw_offsets(model: &RateModel, seed: u64) -> [f64; 4] {
    match model.systematics {
        SystematicPhase::None => [0.0; 4],
        SystematicPhase::Fixed { offsets } => offsets,
        SystematicPhase::Uniform { max_abs } => {
            if max_abs == 0.0 {
                return [0.0; 4];
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(0);
            std::array::from_fn(|_| rng.random_range(-max_abs..=max_abs))
        }
    }
}

/// Simulates all sixteen settings for each repetition and reduces them to
/// the four correlations and S.
///
/// Random draws are keyed by `(seed, stream)`: stream 0 holds the α offsets,
/// stream `16·rep + k + 1` the counts of setting `k`.
pub fn run_bell_experiment(
    model: &RateModel,
    settings: &BellSettings,
    repetitions: usize,
    seed: u64,
    mode: CountMode,
) -> Result<BellRun> {
    model.validate()?;
    if repetitions == 0 {
        return Err(invalid("repetitions", "must be at least 1"));
    }
    let offsets = draw_offsets(model, seed);
    let alphas = [
        settings.alpha1,
        settings.alpha1 + PI,
        settings.alpha2,
        settings.alpha2 + PI,
    ];
    let gammas = [
        settings.gamma1,
        settings.gamma1 + PI,
        settings.gamma2,
        settings.gamma2 + PI,
    ];

    let mut records = Vec::with_capacity(16 * repetitions);
    for rep in 0..repetitions {
        for (ia, &alpha) in alphas.iter().enumerate() {
            for (ig, &gamma) in gammas.iter().enumerate() {
                let (a, g) = analyzer_phases(alpha + offsets[ia], gamma);
                let mean = expected_counts(model, a, g);
                let counts = match mode {
                    CountMode::Expected => mean,
                    CountMode::Poisson => {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream((16 * rep + 4 * ia + ig + 1) as u64);
                        sample_counts(mean, &mut rng)?
                    }
                };
                records.push(CountRecord {
                    alpha,
                    gamma,
                    repetition: rep,
                    counts,
                });
            }
        }
    }
    let mut run = chsh_from_records(&records, settings)?;
    run.alpha_offsets = offsets;
    Ok(run)
}

fn same_angle(a: f64, b: f64) -> bool {
    let d = (a - b).rem_euclid(2.0 * PI);
    d < LABEL_TOLERANCE || 2.0 * PI - d < LABEL_TOLERANCE
}

/// Sums repeated measurements into the four quads of `settings`.
pub fn aggregate_records(
    records: &[CountRecord],
    settings: &BellSettings,
) -> Result<[SettingQuad; 4]> {
    let total = |alpha: f64, gamma: f64| -> Result<f64> {
        let mut found = false;
        let mut sum = 0.0;
        for r in records {
            if same_angle(r.alpha, alpha) && same_angle(r.gamma, gamma) {
                found = true;
                sum += r.counts;
            }
        }
        if found {
            Ok(sum)
        } else {
            Err(invalid(
                "counts",
                format!(
                    "incomplete quad: missing setting alpha={alpha:.6} rad, gamma={gamma:.6} rad"
                ),
            ))
        }
    };
    let pairs = settings.pairs();
    let mut quads = [SettingQuad {
        alpha: 0.0,
        gamma: 0.0,
        counts: [0.0; 4],
    }; 4];
    for (quad, (alpha, gamma)) in quads.iter_mut().zip(pairs) {
        *quad = SettingQuad {
            alpha,
            gamma,
            counts: [
                total(alpha, gamma)?,
                total(alpha + PI, gamma + PI)?,
                total(alpha, gamma + PI)?,
                total(alpha + PI, gamma)?,
            ],
        };
    }
    Ok(quads)
}

/// Reduces raw records to correlations and S; σ_S is the quadrature sum.
pub fn chsh_from_records(records: &[CountRecord], settings: &BellSettings) -> Result<BellRun> {
    let quads = aggregate_records(records, settings)?;
    let correlations = [
        expectation_from_counts(&quads[0])?,
        expectation_from_counts(&quads[1])?,
        expectation_from_counts(&quads[2])?,
        expectation_from_counts(&quads[3])?,
    ];
    let [e11, e21, e12, e22] = correlations.map(|e| e.value);
    let chsh = Estimate {
        value: chsh_value(e11, e21, e12, e22)?,
        sigma: combine_sigmas(&correlations.map(|e| e.sigma)),
    };
    let repetitions = records.iter().map(|r| r.repetition + 1).max().unwrap_or(0);
    Ok(BellRun {
        quads,
        correlations,
        chsh,
        repetitions,
        alpha_offsets: [0.0; 4],
        records: records.to_vec(),
    })
}

/// `√(Σ σ_i²)`.
pub fn combine_sigmas(sigmas: &[f64]) -> f64 {
    sigmas.iter().map(|s| s * s).sum::<f64>().sqrt()
}

/// `(S − 2)/σ_S`.
pub fn violation_significance(s: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma_S", format!("must be positive, got {sigma}")));
    }
    Ok((s - 2.0) / sigma)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdStatus {
    Above,
    AtThreshold,
    Below,
}

impl ThresholdStatus {
    fn classify(margin: f64) -> Self {
        if margin.abs() <= THRESHOLD_TOLERANCE {
            ThresholdStatus::AtThreshold
        } else if margin > 0.0 {
            ThresholdStatus::Above
        } else {
            ThresholdStatus::Below
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub contrast: f64,
    pub contrast_critical: f64,
    pub contrast_margin: f64,
    pub contrast_status: ThresholdStatus,
    pub efficiency: f64,
    pub efficiency_critical: f64,
    pub efficiency_margin: f64,
    pub efficiency_status: ThresholdStatus,
}

impl ThresholdReport {
    pub fn both_above(&self) -> bool {
        self.contrast_status == ThresholdStatus::Above
            && self.efficiency_status == ThresholdStatus::Above
    }
}

/// Compares contrast with √2/2 and detector efficiency with 2(√2 − 1).
pub fn thresholds_report(contrast: f64, detector_efficiency: f64) -> ThresholdReport {
    let contrast_margin = contrast - CONTRAST_CRITICAL;
    let efficiency_margin = detector_efficiency - EFFICIENCY_CRITICAL;
    ThresholdReport {
        contrast,
        contrast_critical: CONTRAST_CRITICAL,
        contrast_margin,
        contrast_status: ThresholdStatus::classify(contrast_margin),
        efficiency: detector_efficiency,
        efficiency_critical: EFFICIENCY_CRITICAL,
        efficiency_margin,
        efficiency_status: ThresholdStatus::classify(efficiency_margin),
    }
}
