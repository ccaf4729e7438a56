//! Interferogram reduction for translation-stage scans.
//!
//! A scan records counts against stage position. The model is
//! `y = A + B·cos(2π(x − x0)/P)` and is fitted by Poisson-weighted
//! Levenberg–Marquardt, seeded from a least-squares periodogram so the
//! period does not alias onto a harmonic.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const MIN_POINTS: usize = 8;
const MAX_ITERATIONS: usize = 200;
const RELATIVE_STEP_TOLERANCE: f64 = 1e-10;

/// A stage scan: positions in mm (strictly increasing) and counts.
///
/// Counts are kept as `f64` so noiseless model intensities can be fitted
/// with the same routine as sampled integer counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanData {
    pub positions: Vec<f64>,
    pub counts: Vec<f64>,
    /// Spin phase α used while scanning, rad.
    pub alpha: f64,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

impl ScanData {
    pub fn new(positions: Vec<f64>, counts: Vec<f64>, alpha: f64) -> Result<Self> {
        let scan = Self {
            positions,
            counts,
            alpha,
            seed: None,
            config_hash: None,
        };
        scan.validate()?;
        Ok(scan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.len() != self.counts.len() {
            return Err(invalid(
                "scan",
                format!(
                    "{} positions but {} counts",
                    self.positions.len(),
                    self.counts.len()
                ),
            ));
        }
        if self.positions.len() < MIN_POINTS {
            return Err(invalid(
                "scan",
                format!(
                    "need at least {MIN_POINTS} points, got {}",
                    self.positions.len()
                ),
            ));
        }
        if self.positions.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("scan", "positions must be strictly increasing"));
        }
        if self.counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(invalid("scan", "counts must be finite and nonnegative"));
        }
        Ok(())
    }

    fn span(&self) -> f64 {
        self.positions[self.positions.len() - 1] - self.positions[0]
    }
}

/// Fitted fringe. Parameter order everywhere is `[A, B, P, x0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub offset: f64,
    pub amplitude: f64,
    /// mm.
    pub period: f64,
    /// Stage position of a fringe maximum, mm.
    pub phase_zero: f64,
    pub contrast: f64,
    pub contrast_sigma: f64,
    pub covariance: [[f64; 4]; 4],
    pub chi_square_per_dof: f64,
    pub iterations: usize,
}

impl FitResult {
    /// One-sigma uncertainties of `[A, B, P, x0]`.
    pub fn sigmas(&self) -> [f64; 4] {
        std::array::from_fn(|i| self.covariance[i][i].sqrt())
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        model(
            &[self.offset, self.amplitude, self.period, self.phase_zero],
            x,
        )
    }

    fn check(&self) -> Result<()> {
        if !(self.period > 0.0 && self.period.is_finite() && self.phase_zero.is_finite()) {
            return Err(invalid("fit", "period must be positive and finite"));
        }
        Ok(())
    }
}

fn model(p: &[f64; 4], x: f64) -> f64 {
    p[0] + p[1] * (2.0 * PI * (x - p[3]) / p[2]).cos()
}

fn gradient(p: &[f64; 4], x: f64) -> Vector4<f64> {
    let theta = 2.0 * PI * (x - p[3]) / p[2];
    let (s, c) = theta.sin_cos();
    Vector4::new(1.0, c, p[1] * s * theta / p[2], p[1] * s * 2.0 * PI / p[2])
}

struct Problem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    w: Vec<f64>,
}

impl Problem<'_> {
    fn chi_square(&self, p: &[f64; 4]) -> f64 {
        self.x
            .iter()
            .zip(self.y)
            .zip(&self.w)
            .map(|((&x, &y), &w)| w * (y - model(p, x)).powi(2))
            .sum()
    }

    fn normal_equations(&self, p: &[f64; 4]) -> (Matrix4<f64>, Vector4<f64>) {
        let mut normal = Matrix4::zeros();
        let mut rhs = Vector4::zeros();
        for ((&x, &y), &w) in self.x.iter().zip(self.y).zip(&self.w) {
            let g = gradient(p, x);
            normal += w * g * g.transpose();
            rhs += w * (y - model(p, x)) * g;
        }
        (normal, rhs)
    }
}

/// Best single-frequency linear fit `a + c·cos(2πfx) + s·sin(2πfx)` over a
/// frequency grid; returns `[A, B, P, x0]`.
fn periodogram_guess(problem: &Problem, span: f64) -> Option<[f64; 4]> {
    let n = problem.x.len();
    let f_min = 0.5 / span;
    let f_max = (n as f64 - 1.0) / (2.0 * span);
    let linear_fit = |f: f64| -> Option<(f64, [f64; 3])> {
        let mut normal = Matrix3::zeros();
        let mut rhs = Vector3::zeros();
        for ((&x, &y), &w) in problem.x.iter().zip(problem.y).zip(&problem.w) {
            let (s, c) = (2.0 * PI * f * x).sin_cos();
            let b = Vector3::new(1.0, c, s);
            normal += w * b * b.transpose();
            rhs += w * y * b;
        }
        let coef = normal.lu().solve(&rhs)?;
        let resid: f64 = problem
            .x
            .iter()
            .zip(problem.y)
            .zip(&problem.w)
            .map(|((&x, &y), &w)| {
                let (s, c) = (2.0 * PI * f * x).sin_cos();
                w * (y - coef[0] - coef[1] * c - coef[2] * s).powi(2)
            })
            .sum();
        Some((resid, [coef[0], coef[1], coef[2]]))
    };

    let steps = 4000;
    let mut best: Option<(f64, f64)> = None;
    for k in 0..=steps {
        let f = f_min + (f_max - f_min) * k as f64 / steps as f64;
        if let Some((r, _)) = linear_fit(f) {
            if !matches!(best, Some((br, _)) if r >= br) {
                best = Some((r, f));
            }
        }
    }
    let (_, mut f) = best?;

    // golden-section refinement within one grid cell
    let cell = (f_max - f_min) / steps as f64;
    let (mut lo, mut hi) = ((f - cell).max(f_min * 0.5), f + cell);
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let resid = |f: f64| linear_fit(f).map_or(f64::INFINITY, |r| r.0);
    for _ in 0..80 {
        let a = hi - golden * (hi - lo);
        let b = lo + golden * (hi - lo);
        if resid(a) < resid(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    f = 0.5 * (lo + hi);

    let (_, [a, c, s]) = linear_fit(f)?;
    let amplitude = c.hypot(s);
    let x0 = s.atan2(c) / (2.0 * PI * f);
    Some([a, amplitude, 1.0 / f, x0])
}

/// Poisson-weighted least squares of `y = A + B cos(2π(x − x0)/P)`.
///
/// Weights are `1/max(y, 1)`. Uncertainties come from the inverse normal
/// matrix at the optimum. The returned amplitude is nonnegative and
/// `phase_zero` lies in `[x_first, x_first + P)`.
pub fn fit_sinusoid(scan: &ScanData) -> Result<FitResult> {
    scan.validate()?;
    let x = &scan.positions;
    let y = &scan.counts;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let variance = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
    if !(variance > 1e-24 * mean.abs().max(1.0).powi(2)) {
        return Err(Error::Fit("zero amplitude / unidentifiable period".into()));
    }
    let problem = Problem {
        x,
        y,
        w: y.iter().map(|&c| 1.0 / c.max(1.0)).collect(),
    };

    let mut p = periodogram_guess(&problem, scan.span())
        .ok_or_else(|| Error::Fit("could not initialise the period".into()))?;
    let mut chi2 = problem.chi_square(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (normal, rhs) = problem.normal_equations(&p);
        let mut damped = normal;
        for i in 0..4 {
            damped[(i, i)] += lambda * normal[(i, i)].max(1e-300);
        }
        let Some(step) = damped.lu().solve(&rhs) else {
            lambda *= 10.0;
            continue;
        };
        let trial = [
            p[0] + step[0],
            p[1] + step[1],
            p[2] + step[2],
            p[3] + step[3],
        ];
        let scales = [
            p[0].abs().max(p[1].abs()),
            p[1].abs().max(p[0].abs()),
            p[2].abs(),
            p[2].abs(),
        ];
        let small =
            (0..4).all(|i| step[i].abs() <= RELATIVE_STEP_TOLERANCE * scales[i].max(1e-300));
        let trial_chi2 = problem.chi_square(&trial);
        if trial.iter().all(|v| v.is_finite()) && trial[2] != 0.0 && trial_chi2 <= chi2 {
            p = trial;
            chi2 = trial_chi2;
            lambda = (lambda / 10.0).max(1e-12);
            if small {
                converged = true;
                break;
            }
        } else {
            if small || lambda > 1e16 {
                converged = true;
                break;
            }
            lambda *= 10.0;
        }
    }
    if !converged {
        return Err(Error::Fit(format!(
            "no convergence after {MAX_ITERATIONS} iterations"
        )));
    }

    // canonical sign conventions
    if p[2] < 0.0 {
        p[2] = -p[2];
    }
    if p[1] < 0.0 {
        p[1] = -p[1];
        p[3] += p[2] / 2.0;
    }
    let first = x[0];
    p[3] = first + (p[3] - first).rem_euclid(p[2]);

    if scan.span() < p[2] {
        return Err(Error::Fit(format!(
            "insufficient span: {:.4} mm covers less than one period ({:.4} mm)",
            scan.span(),
            p[2]
        )));
    }
    if p[1] == 0.0 {
        return Err(Error::Fit("zero amplitude / unidentifiable period".into()));
    }

    let (normal, _) = problem.normal_equations(&p);
    let cov = normal
        .try_inverse()
        .ok_or_else(|| Error::Fit("singular normal matrix".into()))?;
    let covariance: [[f64; 4]; 4] = std::array::from_fn(|r| std::array::from_fn(|c| cov[(r, c)]));

    let contrast = p[1] / p[0];
    let grad = Vector4::new(-p[1] / (p[0] * p[0]), 1.0 / p[0], 0.0, 0.0);
    let contrast_sigma = (grad.transpose() * cov * grad)[(0, 0)].max(0.0).sqrt();
    let dof = (x.len() - 4) as f64;

    Ok(FitResult {
        offset: p[0],
        amplitude: p[1],
        period: p[2],
        phase_zero: p[3],
        contrast,
        contrast_sigma,
        covariance,
        chi_square_per_dof: chi2 / dof,
        iterations,
    })
}

/// Energy phase at a stage displacement: `2π(d − x0)/P`.
pub fn mm_to_gamma(displacement: f64, fit: &FitResult) -> Result<f64> {
    fit.check()?;
    Ok(2.0 * PI * (displacement - fit.phase_zero) / fit.period)
}

/// Stage displacements (mm) realising each energy phase; inverse of [`mm_to_gamma`].
pub fn positions_for_bell_angles(fit: &FitResult, gammas: &[f64]) -> Result<Vec<f64>> {
    fit.check()?;
    Ok(gammas
        .iter()
        .map(|g| fit.phase_zero + fit.period * g / (2.0 * PI))
        .collect())
}
