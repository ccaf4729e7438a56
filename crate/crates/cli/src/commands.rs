use std::f64::consts::{PI, SQRT_2};
use std::path::Path;

use anyhow::{ensure, Context, Result};
use nbell_core::counting::CountRecord;
use nbell_core::ensemble::ensemble_scan;
use nbell_core::{
    average_intensity, calibrate_spread_to_contrast, chsh_from_records, effective_contrast,
    fit_sinusoid, positions_for_bell_angles, run_bell_experiment, sample_scan, thresholds_report,
    violation_significance, BeamlineConfig, BellRun, BellSettings, CountMode, FitResult, ScanData,
    SystematicPhase, ThresholdReport, ThresholdStatus,
};
use serde::Serialize;

use crate::config::{RunConfig, DEFAULT_CONTRAST};
use crate::output::{self, Marker, ScanRow};

/// Exit code when S − 2 does not exceed three standard deviations.
pub const NO_VIOLATION: u8 = 2;

pub struct ScanOptions {
    pub alpha: f64,
    pub start_mm: f64,
    pub end_mm: f64,
    pub points: usize,
}

fn target_contrast(cfg: &RunConfig) -> f64 {
    cfg.counting.contrast.unwrap_or(DEFAULT_CONTRAST)
}

/// Contrast for the counting model: explicit, from the configured spread, or the default.
fn resolve_contrast(cfg: &RunConfig, beamline: &BeamlineConfig, seed: u64) -> Result<f64> {
    if let Some(c) = cfg.counting.contrast {
        return Ok(c);
    }
    match cfg.source.fractional_spread {
        Some(spread) => {
            let dist = cfg.distribution(spread, seed)?;
            effective_contrast(beamline, &dist)
                .context("computing contrast from [source] fractional_spread")
        }
        None => Ok(DEFAULT_CONTRAST),
    }
}

fn resolve_spread(cfg: &RunConfig, beamline: &BeamlineConfig) -> Result<f64> {
    match cfg.source.fractional_spread {
        Some(s) => Ok(s),
        None => calibrate_spread_to_contrast(beamline, target_contrast(cfg))
            .context("calibrating the momentum spread to the configured contrast"),
    }
}

#[derive(Serialize)]
struct ScanSummary {
    alpha_rad: f64,
    fractional_spread: f64,
    seed: u64,
    noise: &'static str,
    fit: FitResult,
    bell_positions_mm: Vec<f64>,
}

pub fn scan(
    cfg: &RunConfig,
    opts: &ScanOptions,
    seed: u64,
    out: &Path,
    no_noise: bool,
) -> Result<()> {
    ensure!(
        opts.points >= 8,
        "scan needs at least 8 points, got {}",
        opts.points
    );
    ensure!(opts.end_mm > opts.start_mm, "scan range must be increasing");
    let beamline = cfg.beamline()?;
    let travel_mm = beamline.stage_travel * 1000.0;
    ensure!(
        opts.start_mm >= -travel_mm && opts.end_mm <= travel_mm,
        "scan range [{}, {}] mm exceeds the stage travel ±{travel_mm} mm",
        opts.start_mm,
        opts.end_mm
    );
    let spread = resolve_spread(cfg, &beamline)?;
    let dist = cfg.distribution(spread, seed)?;

    let positions: Vec<f64> = (0..opts.points)
        .map(|i| {
            opts.start_mm + (opts.end_mm - opts.start_mm) * i as f64 / (opts.points - 1) as f64
        })
        .collect();
    let expected = positions
        .iter()
        .map(|&x| {
            let intensity = average_intensity(&beamline, &dist, opts.alpha / 2.0, x / 1000.0)?;
            Ok(cfg.counting.peak_counts * intensity + cfg.counting.background)
        })
        .collect::<Result<Vec<f64>>>()?;
    let sampled = if no_noise {
        expected.clone()
    } else {
        sample_scan(&expected, seed)?
    };

    let mut data = ScanData::new(positions.clone(), sampled.clone(), opts.alpha)?;
    data.seed = Some(seed);
    let fit = fit_sinusoid(&data).context("fitting the scan")?;
    let gammas = [PI / 4.0, 3.0 * PI / 4.0, 5.0 * PI / 4.0, 7.0 * PI / 4.0];
    let bell_positions = positions_for_bell_angles(&fit, &gammas)?;
    let labels = ["γ=π/4", "γ=3π/4", "γ=5π/4", "γ=7π/4"];
    let markers: Vec<Marker> = bell_positions
        .iter()
        .zip(labels)
        .map(|(&position, label)| Marker {
            position,
            label: label.to_string(),
        })
        .collect();

    let rows: Vec<ScanRow> = positions
        .iter()
        .zip(&expected)
        .zip(&sampled)
        .map(|((&x, &e), &s)| ScanRow {
            position_mm: x,
            gamma_rad: beamline.energy_phase(x / 1000.0),
            expected_counts: e,
            sampled_counts: s,
        })
        .collect();
    output::write_scan(&out.join("scan.csv"), &rows)?;
    let title = format!("Stage scan at α = {:.4} rad", opts.alpha);
    std::fs::write(
        out.join("scan.svg"),
        output::scan_svg(&positions, &sampled, &fit, &markers, &title),
    )?;
    output::write_json(
        &out.join("scan_fit.json"),
        &ScanSummary {
            alpha_rad: opts.alpha,
            fractional_spread: spread,
            seed,
            noise: if no_noise { "expected" } else { "poisson" },
            fit: fit.clone(),
            bell_positions_mm: bell_positions,
        },
    )?;

    let sigmas = fit.sigmas();
    println!("fractional spread (FWHM): {:.4}%", 100.0 * spread);
    println!("contrast: {:.4} ± {:.4}", fit.contrast, fit.contrast_sigma);
    println!("period: {:.3} ± {:.3} mm", fit.period, sigmas[2]);
    println!(
        "fringe maximum: {:.3} ± {:.3} mm",
        fit.phase_zero, sigmas[3]
    );
    println!("wrote {}", out.join("scan.csv").display());
    Ok(())
}

#[derive(Serialize)]
struct References {
    ideal: f64,
    contrast_scaled: f64,
}

#[derive(Serialize)]
struct Report {
    #[serde(rename = "E")]
    e: [f64; 4],
    #[serde(rename = "sigma_E")]
    sigma_e: [f64; 4],
    #[serde(rename = "S")]
    s: f64,
    #[serde(rename = "sigma_S")]
    sigma_s: f64,
    significance: Option<f64>,
    violation: bool,
    contrast: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    thresholds: Option<ThresholdReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    references: Option<References>,
    settings: BellSettings,
    repetitions: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_offsets_rad: Option<[f64; 4]>,
}

impl Report {
    fn from_run(run: &BellRun, settings: BellSettings) -> Self {
        let significance = violation_significance(run.chsh.value, run.chsh.sigma).ok();
        Self {
            e: run.correlations.map(|e| e.value),
            sigma_e: run.correlations.map(|e| e.sigma),
            s: run.chsh.value,
            sigma_s: run.chsh.sigma,
            significance,
            violation: significance.is_some_and(|z| z > 3.0),
            contrast: None,
            thresholds: None,
            references: None,
            settings,
            repetitions: run.repetitions,
            seed: None,
            noise: None,
            alpha_offsets_rad: None,
        }
    }

    fn print(&self) {
        let labels = ["(α1,γ1)", "(α2,γ1)", "(α1,γ2)", "(α2,γ2)"];
        for ((label, e), s) in labels.iter().zip(self.e).zip(self.sigma_e) {
            println!("E{label} = {e:+.4} ± {s:.4}");
        }
        println!("S = {:.4} ± {:.4}", self.s, self.sigma_s);
        if let Some(z) = self.significance {
            println!("significance (S − 2)/σ_S = {z:.1}");
        }
    }
}

/// Runs the Bell measurement; returns the process exit code.
pub fn bell(cfg: &RunConfig, seed: u64, out: &Path, no_noise: bool) -> Result<u8> {
    let beamline = cfg.beamline()?;
    let contrast = resolve_contrast(cfg, &beamline, seed)?;
    let mut model = cfg.rate_model(contrast);
    if no_noise {
        model.systematics = SystematicPhase::None;
    }
    let settings = cfg.settings();
    let mode = if no_noise {
        CountMode::Expected
    } else {
        CountMode::Poisson
    };
    let run = run_bell_experiment(&model, &settings, cfg.bell.repetitions, seed, mode)?;
    let thresholds = thresholds_report(contrast, cfg.counting.detector_efficiency);

    let mut report = Report::from_run(&run, settings);
    report.contrast = Some(contrast);
    report.thresholds = Some(thresholds);
    report.references = Some(References {
        ideal: 2.0 * SQRT_2,
        contrast_scaled: contrast * 2.0 * SQRT_2,
    });
    report.seed = Some(seed);
    report.noise = Some(if no_noise { "expected" } else { "poisson" });
    report.alpha_offsets_rad = Some(run.alpha_offsets);

    output::write_counts(&out.join("counts.csv"), &run.records)?;
    output::write_json(&out.join("report.json"), &report)?;

    report.print();
    println!(
        "contrast C = {contrast:.4}; C·2√2 = {:.4}",
        contrast * 2.0 * SQRT_2
    );
    if thresholds.contrast_status != ThresholdStatus::Above {
        eprintln!(
            "warning: contrast {contrast:.4} is not above the critical visibility {:.4}",
            thresholds.contrast_critical
        );
    }
    if thresholds.efficiency_status != ThresholdStatus::Above {
        eprintln!(
            "warning: detector efficiency {:.4} is not above the critical efficiency {:.4}",
            thresholds.efficiency, thresholds.efficiency_critical
        );
    }
    println!("wrote {}", out.join("report.json").display());
    Ok(if report.violation { 0 } else { NO_VIOLATION })
}

pub fn calibrate(cfg: &RunConfig, target: f64, out: &Path) -> Result<()> {
    ensure!(
        target > 0.0 && target <= 1.0,
        "target contrast must lie in (0, 1], got {target}"
    );
    let beamline = cfg.beamline()?;
    let spread = calibrate_spread_to_contrast(&beamline, target)?;
    let dist = cfg.distribution(spread, 0)?;
    let check = ensemble_scan(&beamline, &dist)?;
    let fragment = format!("[source]\nfractional_spread = {spread}\n");
    let path = out.join("calibration.toml");
    std::fs::write(&path, &fragment).with_context(|| format!("writing {}", path.display()))?;
    print!("{fragment}");
    println!(
        "# implied FWHM momentum spread {:.3}% (nominal monochromator spread about 2%)",
        100.0 * spread
    );
    println!(
        "# re-run contrast {:.5} (target {target})",
        check.effective_contrast
    );
    Ok(())
}

pub fn analyze(cfg: &RunConfig, path: &Path, out: &Path) -> Result<()> {
    let records: Vec<CountRecord> = output::read_counts(path)?;
    let run = chsh_from_records(&records, &cfg.settings())
        .with_context(|| format!("reducing {}", path.display()))?;
    let report = Report::from_run(&run, cfg.settings());
    output::write_json(&out.join("analysis.json"), &report)?;
    report.print();
    println!("wrote {}", out.join("analysis.json").display());
    Ok(())
}
