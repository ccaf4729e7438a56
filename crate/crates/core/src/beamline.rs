//! Operator model of the polarimeter beamline.
//!
//! Elements act on a [`JointState`] in beam order. The spin-turners and the
//! guide field are SU(2) rotations applied level by level; the RF flippers
//! swap spin while moving one rung up or down the energy ladder; free flight
//! adds the ladder phase `e^{−i n ω t}`. The second RF flipper, the DC-π
//! flipper and the start of the second guide-field region ride on the
//! translation stage, so a stage displacement ΔL lengthens the first flight
//! path and shortens the second by the same amount.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::constants::{HBAR, H_OVER_MN, NEUTRON_MOMENT};
use crate::error::{invalid, Error, Result};
use crate::qstate::{JointState, Sign, Spin, C64, DEFAULT_N_MAX};

/// Wavelength and speed of a monochromatic neutron, linked by de Broglie.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeutronKinematics {
    wavelength: f64,
    velocity: f64,
}

impl NeutronKinematics {
    pub fn from_wavelength(wavelength: f64) -> Result<Self> {
        Ok(Self {
            wavelength,
            velocity: velocity_from_wavelength(wavelength)?,
        })
    }

    pub fn from_velocity(velocity: f64) -> Result<Self> {
        if !(velocity > 0.0) {
            return Err(invalid(
                "velocity",
                format!("must be positive, got {velocity}"),
            ));
        }
        Ok(Self {
            wavelength: H_OVER_MN / velocity,
            velocity,
        })
    }

    /// Meters.
    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    /// m/s.
    pub fn velocity(&self) -> f64 {
        self.velocity
    }
}

/// `v = (h/m_n)/λ`.
pub fn velocity_from_wavelength(wavelength: f64) -> Result<f64> {
    if !(wavelength > 0.0) {
        return Err(invalid(
            "wavelength",
            format!("must be positive, got {wavelength}"),
        ));
    }
    Ok(H_OVER_MN / wavelength)
}

/// Larmor angular frequency `2|μ_n|B0/ħ`; the RF resonance condition.
pub fn resonance_frequency(b0: f64) -> Result<f64> {
    if !(b0 > 0.0) {
        return Err(invalid("B0", format!("must be positive, got {b0}")));
    }
    Ok(larmor_frequency(b0))
}

fn larmor_frequency(b0: f64) -> f64 {
    2.0 * NEUTRON_MOMENT * b0 / HBAR
}

/// Oscillating-field amplitude `πħ/(2τ|μ_n|)` for a π flip, `τ = coil_length/velocity`.
pub fn rf_amplitude_for_pi_flip(coil_length: f64, velocity: f64) -> Result<f64> {
    if !(coil_length > 0.0) {
        return Err(invalid(
            "coil_length",
            format!("must be positive, got {coil_length}"),
        ));
    }
    if !(velocity > 0.0) {
        return Err(invalid(
            "velocity",
            format!("must be positive, got {velocity}"),
        ));
    }
    let tau = coil_length / velocity;
    Ok(PI * HBAR / (2.0 * tau * NEUTRON_MOMENT))
}

#[derive(Clone, Copy, Debug)]
enum Axis {
    X,
    Y,
    Z,
}

/// `exp(−iθ n̂·σ/2)`.
fn rotation(axis: Axis, angle: f64) -> Matrix2<C64> {
    let c = C64::new((angle / 2.0).cos(), 0.0);
    let s = (angle / 2.0).sin();
    let zero = C64::new(0.0, 0.0);
    match axis {
        Axis::X => Matrix2::new(c, C64::new(0.0, -s), C64::new(0.0, -s), c),
        Axis::Y => Matrix2::new(c, C64::new(-s, 0.0), C64::new(s, 0.0), c),
        Axis::Z => Matrix2::new(
            C64::from_polar(1.0, -angle / 2.0),
            zero,
            zero,
            C64::from_polar(1.0, angle / 2.0),
        ),
    }
}

fn apply_spin_operator(state: &JointState, op: &Matrix2<C64>) -> JointState {
    let mut out = state.clone();
    for pair in out.amplitudes_mut().chunks_exact_mut(2) {
        let (up, down) = (pair[0], pair[1]);
        pair[0] = op[(0, 0)] * up + op[(0, 1)] * down;
        pair[1] = op[(1, 0)] * up + op[(1, 1)] * down;
    }
    out
}

/// DC π/2 spin-turner: rotation by `sign·π/2` about +y, energy untouched.
/// `|↑⟩ → (|↑⟩+|↓⟩)/√2` for `Sign::Plus`.
pub fn apply_dc_pi2(state: &JointState, sign: Sign) -> JointState {
    apply_spin_operator(state, &rotation(Axis::Y, sign.value() * FRAC_PI_2))
}

/// DC π flipper: rotation by π about +x.
pub fn apply_dc_pi(state: &JointState) -> JointState {
    apply_spin_operator(state, &rotation(Axis::X, PI))
}

/// Ideal resonant RF flipper with oscillator phase `phi_omega`:
/// `|↑,n⟩ → e^{−iφ}|↓,n−1⟩`, `|↓,n⟩ → e^{+iφ}|↑,n+1⟩`.
pub fn apply_rf_flipper(state: &JointState, phi_omega: f64) -> Result<JointState> {
    apply_rf_flipper_with_efficiency(state, phi_omega, 1.0)
}

/// RF flipper with flip amplitude `efficiency`; the remaining
/// `i·√(1−ε²)` amplitude stays unflipped on the same rung.
pub fn apply_rf_flipper_with_efficiency(
    state: &JointState,
    phi_omega: f64,
    efficiency: f64,
) -> Result<JointState> {
    if !(0.0..=1.0).contains(&efficiency) {
        return Err(invalid(
            "efficiency",
            format!("must lie in [0, 1], got {efficiency}"),
        ));
    }
    let leak = C64::new(0.0, (1.0 - efficiency * efficiency).sqrt());
    let emit = C64::from_polar(efficiency, -phi_omega);
    let absorb = C64::from_polar(efficiency, phi_omega);

    let mut out = JointState::zeros(state.n_max(), state.omega());
    for n in state.levels() {
        let up = state.amplitude(Spin::Up, n);
        let down = state.amplitude(Spin::Down, n);
        if efficiency > 0.0 {
            if up.norm_sqr() > 0.0 {
                let i = out.index(Spin::Down, n - 1)?;
                out.amplitudes_mut()[i] += emit * up;
            }
            if down.norm_sqr() > 0.0 {
                let i = out.index(Spin::Up, n + 1)?;
                out.amplitudes_mut()[i] += absorb * down;
            }
        }
        if leak.im > 0.0 {
            let iu = out.index(Spin::Up, n)?;
            let id = out.index(Spin::Down, n)?;
            out.amplitudes_mut()[iu] += leak * up;
            out.amplitudes_mut()[id] += leak * down;
        }
    }
    Ok(out)
}

/// Free flight through the guide field for `length / velocity` seconds:
/// Larmor rotation about +z plus the ladder phase `e^{−i n ω t}`.
pub fn apply_guide_field_drift(
    state: &JointState,
    b0: f64,
    length: f64,
    velocity: f64,
) -> Result<JointState> {
    if !(length >= 0.0) {
        return Err(invalid(
            "length",
            format!("must be nonnegative, got {length}"),
        ));
    }
    if !(velocity > 0.0) {
        return Err(invalid(
            "velocity",
            format!("must be positive, got {velocity}"),
        ));
    }
    if !(b0 >= 0.0) {
        return Err(invalid("B0", format!("must be nonnegative, got {b0}")));
    }
    let t = length / velocity;
    let mut out = apply_spin_operator(state, &rotation(Axis::Z, larmor_frequency(b0) * t));
    let omega = state.omega();
    let n_max = state.n_max() as i32;
    for (k, pair) in out.amplitudes_mut().chunks_exact_mut(2).enumerate() {
        let n = k as i32 - n_max;
        let phase = C64::from_polar(1.0, -(n as f64) * omega * t);
        pair[0] *= phase;
        pair[1] *= phase;
    }
    Ok(out)
}

/// `Σ_n |⟨↑,n|ψ⟩|²`.
pub fn analyze_up(state: &JointState) -> f64 {
    state.spin_probability(Spin::Up)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ElementKind {
    Polarizer,
    DcPi2(Sign),
    RfFlipper {
        /// Angular frequency, rad/s.
        frequency: f64,
        /// Oscillator phase φ_ω, rad.
        phase: f64,
        coil_length: f64,
        efficiency: f64,
    },
    /// Guide-field region extending from this element to the next one.
    GuideFieldDrift {
        b0: f64,
    },
    DcPi,
    Analyzer,
}

impl ElementKind {
    fn tag(&self) -> &'static str {
        match self {
            ElementKind::Polarizer => "Polarizer",
            ElementKind::DcPi2(Sign::Plus) => "DcPi2(+)",
            ElementKind::DcPi2(Sign::Minus) => "DcPi2(-)",
            ElementKind::RfFlipper { .. } => "RfFlipper",
            ElementKind::GuideFieldDrift { .. } => "GuideFieldDrift",
            ElementKind::DcPi => "DcPi",
            ElementKind::Analyzer => "Analyzer",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamlineElement {
    pub kind: ElementKind,
    /// Position along the beam at zero stage displacement, m.
    pub position: f64,
    /// Whether the translation stage carries this element.
    pub on_stage: bool,
}

/// Plain parameters from which the standard apparatus is assembled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamlineParams {
    /// Mean neutron wavelength, m.
    pub wavelength: f64,
    /// Guide field B0, T.
    pub guide_field: f64,
    /// RF oscillator frequency f (ω = 2πf), Hz.
    pub rf_frequency_hz: f64,
    pub coil_length: f64,
    /// Flight path L between the first RF flipper and the second, m.
    pub flight_path: f64,
    /// Path L′ between the DC-π flipper region and the closing spin-turner, m.
    pub return_path: f64,
    /// Stage travel ± this value, m.
    pub stage_travel: f64,
    pub flip_efficiency: f64,
    /// Include the DC-π flipper on the stage.
    pub larmor_compensation: bool,
}

impl Default for BeamlineParams {
    fn default() -> Self {
        Self {
            wavelength: 1.99e-10,
            guide_field: 1.1e-3,
            rf_frequency_hz: 32_000.0,
            coil_length: 0.02,
            flight_path: 0.50,
            return_path: 0.30,
            stage_travel: 0.040,
            flip_efficiency: 1.0,
            larmor_compensation: true,
        }
    }
}

/// Ordered element list plus stage state and neutron kinematics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamlineConfig {
    pub elements: Vec<BeamlineElement>,
    /// Current stage displacement ΔL, m.
    pub stage_displacement: f64,
    /// Stage displacement at which the energy phase γ is zero, m.
    pub gamma_zero: f64,
    pub stage_travel: f64,
    pub kinematics: NeutronKinematics,
}

impl BeamlineConfig {
    /// Assembles the polarimeter, validates it and zeroes γ at the stage
    /// position nearest ΔL = 0 (stage left there).
    pub fn from_params(p: &BeamlineParams) -> Result<Self> {
        for (name, v) in [
            ("guide_field", p.guide_field),
            ("rf_frequency_hz", p.rf_frequency_hz),
            ("coil_length", p.coil_length),
            ("flight_path", p.flight_path),
            ("return_path", p.return_path),
            ("stage_travel", p.stage_travel),
        ] {
            if !(v > 0.0) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        let rf = |phase| ElementKind::RfFlipper {
            frequency: 2.0 * PI * p.rf_frequency_hz,
            phase,
            coil_length: p.coil_length,
            efficiency: p.flip_efficiency,
        };
        let drift = ElementKind::GuideFieldDrift { b0: p.guide_field };
        let rf1 = 0.20;
        let rf2 = rf1 + p.coil_length + p.flight_path;
        let dc_pi = rf2 + p.coil_length + 0.06;
        let turner = dc_pi + p.coil_length + p.return_path;

        let mut elements = vec![
            element(ElementKind::Polarizer, 0.0, false),
            element(ElementKind::DcPi2(Sign::Plus), 0.10, false),
            element(rf(0.0), rf1, false),
            element(drift, rf1 + p.coil_length, false),
            element(rf(0.0), rf2, true),
        ];
        if p.larmor_compensation {
            elements.push(element(ElementKind::DcPi, dc_pi, true));
        }
        elements.extend([
            element(drift, dc_pi + p.coil_length, true),
            element(ElementKind::DcPi2(Sign::Minus), turner, false),
            element(ElementKind::Analyzer, turner + 0.13, false),
        ]);

        let mut config = Self {
            elements,
            stage_displacement: 0.0,
            gamma_zero: 0.0,
            stage_travel: p.stage_travel,
            kinematics: NeutronKinematics::from_wavelength(p.wavelength)?,
        };
        config.validate()?;
        config.gamma_zero = calibrate_gamma_zero(&config)?;
        config.stage_displacement = config.gamma_zero;
        config.validate()?;
        Ok(config)
    }

    pub fn canonical() -> Self {
        Self::from_params(&BeamlineParams::default()).expect("default parameters are valid")
    }

    pub fn with_stage(&self, displacement: f64) -> Self {
        Self {
            stage_displacement: displacement,
            ..self.clone()
        }
    }

    pub fn with_kinematics(&self, kinematics: NeutronKinematics) -> Self {
        Self {
            kinematics,
            ..self.clone()
        }
    }

    /// Sets the guide field of every drift region.
    pub fn with_guide_field(&self, b0: f64) -> Self {
        let mut out = self.clone();
        for e in &mut out.elements {
            if let ElementKind::GuideFieldDrift { b0: field } = &mut e.kind {
                *field = b0;
            }
        }
        out
    }

    /// Sets the oscillator phase of the stage-mounted (second) RF flipper.
    pub fn with_rf_phase(&self, phi_omega: f64) -> Self {
        let mut out = self.clone();
        if let Some(ElementKind::RfFlipper { phase, .. }) = out
            .elements
            .iter_mut()
            .filter(|e| matches!(e.kind, ElementKind::RfFlipper { .. }))
            .nth(1)
            .map(|e| &mut e.kind)
        {
            *phase = phi_omega;
        }
        out
    }

    /// Angular RF frequency ω, rad/s.
    pub fn rf_frequency(&self) -> f64 {
        self.elements
            .iter()
            .find_map(|e| match e.kind {
                ElementKind::RfFlipper { frequency, .. } => Some(frequency),
                _ => None,
            })
            .unwrap_or(0.0)
    }

    pub fn guide_field(&self) -> f64 {
        self.elements
            .iter()
            .find_map(|e| match e.kind {
                ElementKind::GuideFieldDrift { b0 } => Some(b0),
                _ => None,
            })
            .unwrap_or(0.0)
    }

    pub fn has_larmor_compensation(&self) -> bool {
        self.elements.iter().any(|e| e.kind == ElementKind::DcPi)
    }

    fn effective_position(&self, e: &BeamlineElement) -> f64 {
        if e.on_stage {
            e.position + self.stage_displacement
        } else {
            e.position
        }
    }

    pub fn validate(&self) -> Result<()> {
        let tags: Vec<&str> = self.elements.iter().map(|e| e.kind.tag()).collect();
        let canonical = [
            "Polarizer",
            "DcPi2(+)",
            "RfFlipper",
            "GuideFieldDrift",
            "RfFlipper",
            "DcPi",
            "GuideFieldDrift",
            "DcPi2(-)",
            "Analyzer",
        ];
        let uncompensated: Vec<&str> = canonical.iter().copied().filter(|t| *t != "DcPi").collect();
        if tags != canonical && tags != uncompensated {
            return Err(Error::MalformedBeamline(format!(
                "element order {tags:?} does not match {canonical:?}"
            )));
        }
        if self.stage_displacement.abs() > self.stage_travel {
            return Err(Error::MalformedBeamline(format!(
                "stage displacement {} m outside travel ±{} m",
                self.stage_displacement, self.stage_travel
            )));
        }
        let positions: Vec<f64> = self
            .elements
            .iter()
            .map(|e| self.effective_position(e))
            .collect();
        if let Some(w) = positions.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::MalformedBeamline(format!(
                "element positions not strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        let mut frequencies = self.elements.iter().filter_map(|e| match e.kind {
            ElementKind::RfFlipper { frequency, .. } => Some(frequency),
            _ => None,
        });
        let first = frequencies.next().unwrap_or(0.0);
        if !(first > 0.0) {
            return Err(invalid("rf frequency", "must be positive"));
        }
        if frequencies.any(|f| (f - first).abs() > 1e-12 * first) {
            return Err(Error::MalformedBeamline(
                "RF flippers must share one frequency for energy recombination".into(),
            ));
        }
        Ok(())
    }

    /// Runs the element pipeline, returning the state before element
    /// `stop` (or the final state) and the polarizer transmission weight.
    pub fn propagate(&self, stop: Option<usize>) -> Result<(JointState, f64)> {
        self.validate()?;
        let velocity = self.kinematics.velocity();
        let mut state = JointState::basis(Spin::Up, 0, DEFAULT_N_MAX, self.rf_frequency())?;
        let mut weight = 1.0;
        let end = stop.unwrap_or(self.elements.len()).min(self.elements.len());
        for (i, e) in self.elements[..end].iter().enumerate() {
            state = match e.kind {
                ElementKind::Polarizer => {
                    let p = analyze_up(&state);
                    weight *= p;
                    let projected = JointState::from_amplitudes(
                        state.n_max(),
                        state.omega(),
                        state
                            .levels()
                            .map(|n| ((Spin::Up, n), state.amplitude(Spin::Up, n))),
                    )?;
                    projected.normalized()?
                }
                ElementKind::DcPi2(sign) => apply_dc_pi2(&state, sign),
                ElementKind::RfFlipper {
                    phase, efficiency, ..
                } => apply_rf_flipper_with_efficiency(&state, phase, efficiency)?,
                ElementKind::GuideFieldDrift { b0 } => {
                    let next = &self.elements[i + 1];
                    let length = self.effective_position(next) - self.effective_position(e);
                    apply_guide_field_drift(&state, b0, length, velocity)?
                }
                ElementKind::DcPi => apply_dc_pi(&state),
                ElementKind::Analyzer => state,
            };
        }
        Ok((state, weight))
    }

    /// Transmitted probability with the current element phases.
    pub fn transmission(&self) -> Result<f64> {
        let (state, weight) = self.propagate(None)?;
        Ok(weight * analyze_up(&state))
    }

    /// Energy phase γ at stage displacement `delta_l`: `2ω(ΔL − ΔL₀)/v`.
    pub fn energy_phase(&self, delta_l: f64) -> f64 {
        2.0 * self.rf_frequency() * (delta_l - self.gamma_zero) / self.kinematics.velocity()
    }

    /// Stage displacement realising energy phase `gamma` (one period, no wrapping).
    pub fn displacement_for_phase(&self, gamma: f64) -> f64 {
        self.gamma_zero + gamma * self.kinematics.velocity() / (2.0 * self.rf_frequency())
    }
}

fn element(kind: ElementKind, position: f64, on_stage: bool) -> BeamlineElement {
    BeamlineElement {
        kind,
        position,
        on_stage,
    }
}

/// Single-velocity transmitted probability with the second RF flipper at
/// oscillator phase `phi_omega`: `½(1 + cos(2φ_ω + γ))` for an ideal,
/// compensated apparatus.
pub fn run_beamline(config: &BeamlineConfig, phi_omega: f64) -> Result<f64> {
    config.with_rf_phase(phi_omega).transmission()
}

/// Phase Φ of the spin-phase fringe `P(φ) ∝ 1 + V cos(2φ + Φ)` at the
/// current stage position, from a four-point DFT over φ ∈ {0, π/4, π/2, 3π/4}.
pub fn fringe_phase(config: &BeamlineConfig) -> Result<f64> {
    let mut acc = C64::new(0.0, 0.0);
    for k in 0..4 {
        let phi = k as f64 * PI / 4.0;
        acc += C64::from_polar(run_beamline(config, phi)?, 2.0 * phi);
    }
    if acc.norm() < 1e-12 {
        return Err(Error::Fit("fringe has no spin-phase modulation".into()));
    }
    Ok(-acc.arg())
}

/// Wraps an angle into (−π, π].
pub fn wrap_phase(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Stage displacement nearest zero at which the fringe phase vanishes.
pub fn calibrate_gamma_zero(config: &BeamlineConfig) -> Result<f64> {
    let at = |d: f64| fringe_phase(&config.with_stage(d));
    let phi0 = at(0.0)?;
    let step = 1e-5;
    let slope = wrap_phase(at(step)? - phi0) / step;
    if slope.abs() < 1e-9 {
        return Err(Error::Fit(
            "fringe phase does not depend on stage position".into(),
        ));
    }
    let period = 2.0 * PI / slope.abs();
    let mut zero = -phi0 / slope;
    zero -= period * (zero / period).round();
    Ok(zero)
}

/// Fringe-phase change from moving the stage by `step` (m) that is due to
/// Larmor precession: the shift with the guide field on minus the shift
/// with it switched off.
pub fn larmor_phase_shift(config: &BeamlineConfig, step: f64) -> Result<f64> {
    let shift = |c: &BeamlineConfig| -> Result<f64> {
        let start = c.stage_displacement;
        Ok(wrap_phase(
            fringe_phase(&c.with_stage(start + step))? - fringe_phase(&c.with_stage(start))?,
        ))
    };
    Ok(wrap_phase(
        shift(config)? - shift(&config.with_guide_field(0.0))?,
    ))
}

/// Stage period of the energy phase, mm: `1000·v/(2f)`.
pub fn gamma_period_mm(config: &BeamlineConfig) -> f64 {
    1000.0 * PI * config.kinematics.velocity() / config.rf_frequency()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::make_bell_state;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4};

    const OMEGA: f64 = 2.0 * PI * 32_000.0;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn up0() -> JointState {
        JointState::basis(Spin::Up, 0, 2, OMEGA).unwrap()
    }

    fn incident() -> JointState {
        let h = c(FRAC_1_SQRT_2, 0.0);
        JointState::from_amplitudes(2, OMEGA, [((Spin::Up, 0), h), ((Spin::Down, 0), h)]).unwrap()
    }

    fn assert_same_ray(a: &JointState, b: &JointState) {
        assert_abs_diff_eq!(a.fidelity(b).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn velocity_examples() {
        let v = velocity_from_wavelength(1.99e-10).unwrap();
        assert!((v - 1988.0).abs() < 0.5, "{v}");
        assert_relative_eq!(
            velocity_from_wavelength(3.98e-10).unwrap(),
            v / 2.0,
            max_relative = 1e-15
        );
        assert!((velocity_from_wavelength(1.0e-10).unwrap() - 3956.0).abs() < 1.0);
        assert!(velocity_from_wavelength(0.0).is_err());
        assert!(velocity_from_wavelength(-1.0).is_err());
    }

    #[test]
    fn kinematics_pair_is_consistent() {
        let k = NeutronKinematics::from_wavelength(1.99e-10).unwrap();
        assert_relative_eq!(
            k.velocity() * k.wavelength(),
            H_OVER_MN,
            max_relative = 1e-12
        );
        let back = NeutronKinematics::from_velocity(k.velocity()).unwrap();
        assert_relative_eq!(back.wavelength(), 1.99e-10, max_relative = 1e-12);
    }

    #[test]
    fn resonance_examples() {
        let w = resonance_frequency(1.1e-3).unwrap();
        assert!((w - 2.016e5).abs() < 0.001e5, "{w}");
        assert!((w / (2.0 * PI) - 32_100.0).abs() < 100.0);
        assert_relative_eq!(
            resonance_frequency(2.2e-3).unwrap(),
            2.0 * w,
            max_relative = 1e-15
        );
        assert!((resonance_frequency(0.55e-3).unwrap() / (2.0 * PI) - 16_050.0).abs() < 30.0);
        assert!(resonance_frequency(0.0).is_err());
    }

    #[test]
    fn pi_flip_amplitude_examples() {
        let b1 = rf_amplitude_for_pi_flip(0.02, 1988.0).unwrap();
        assert!((b1 - 1.70e-3).abs() < 0.01e-3, "{b1}");
        assert_relative_eq!(
            rf_amplitude_for_pi_flip(0.04, 1988.0).unwrap(),
            b1 / 2.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            rf_amplitude_for_pi_flip(0.02, 3976.0).unwrap(),
            2.0 * b1,
            max_relative = 1e-14
        );
        assert!(rf_amplitude_for_pi_flip(0.0, 1.0).is_err());
        assert!(rf_amplitude_for_pi_flip(1.0, -1.0).is_err());
    }

    #[test]
    fn dc_pi2_prepares_incident_state() {
        assert_same_ray(&apply_dc_pi2(&up0(), Sign::Plus), &incident());
    }

    #[test]
    fn dc_pi2_inverse_and_spinor_sign() {
        let psi = make_bell_state(OMEGA).unwrap();
        let back = apply_dc_pi2(&apply_dc_pi2(&psi, Sign::Plus), Sign::Minus);
        for (a, b) in back.amplitudes().iter().zip(psi.amplitudes()) {
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
        }
        let mut four = psi.clone();
        for _ in 0..4 {
            four = apply_dc_pi2(&four, Sign::Plus);
        }
        for (a, b) in four.amplitudes().iter().zip(psi.amplitudes()) {
            assert_abs_diff_eq!((a + b).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rf_flipper_entangles() {
        let bell = apply_rf_flipper(&incident(), 0.0).unwrap();
        assert_same_ray(&bell, &make_bell_state(OMEGA).unwrap());
    }

    #[test]
    fn rf_flipper_twice_restores() {
        let psi = incident();
        let twice = apply_rf_flipper(&apply_rf_flipper(&psi, 0.0).unwrap(), 0.0).unwrap();
        assert_same_ray(&twice, &psi);
    }

    #[test]
    fn rf_flipper_overflow_is_error() {
        let edge = JointState::basis(Spin::Up, -2, 2, OMEGA).unwrap();
        assert!(matches!(
            apply_rf_flipper(&edge, 0.0),
            Err(Error::TruncationOverflow { level: -3, .. })
        ));
        let edge = JointState::basis(Spin::Down, 2, 2, OMEGA).unwrap();
        assert!(apply_rf_flipper(&edge, 0.0).is_err());
    }

    #[test]
    fn rf_flipper_imperfect_is_unitary() {
        let psi = make_bell_state(OMEGA).unwrap();
        let out = apply_rf_flipper_with_efficiency(&psi, 0.3, 0.98).unwrap();
        assert_abs_diff_eq!(out.norm_sqr(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            out.amplitude(Spin::Up, 1).norm(),
            (1.0 - 0.98f64 * 0.98).sqrt() * FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        assert!(apply_rf_flipper_with_efficiency(&psi, 0.0, 1.1).is_err());
    }

    #[test]
    fn second_flipper_phase_shifts_spin_phase_by_twice_phi() {
        // Bell state → second flipper (phase φ) → DC-π/2(−) → analyzer.
        // The intensity is ½(1 + cos(2φ + const)); shifting φ by δ moves the fringe by 2δ.
        let bell = make_bell_state(OMEGA).unwrap();
        let intensity = |phi: f64| {
            let s = apply_rf_flipper(&bell, phi).unwrap();
            analyze_up(&apply_dc_pi2(&s, Sign::Minus))
        };
        for phi in [0.0, 0.2, 0.9, 2.0] {
            let theta = 2.0 * phi;
            assert_abs_diff_eq!(intensity(phi), 0.5 * (1.0 + theta.cos()), epsilon = 1e-12);
        }
    }

    #[test]
    fn drift_full_larmor_turn_is_minus_identity() {
        let psi = incident();
        let velocity = 2000.0;
        let length = 0.4;
        // ω_L t = 2π
        let b0 = 2.0 * PI * velocity / length * HBAR / (2.0 * NEUTRON_MOMENT);
        // n = 0 only: no ladder phase
        let no_ladder = psi;
        let out = apply_guide_field_drift(&no_ladder, b0, length, velocity).unwrap();
        for (a, b) in out.amplitudes().iter().zip(no_ladder.amplitudes()) {
            assert_abs_diff_eq!((a + b).norm(), 0.0, epsilon = 1e-12);
        }
        // polarization unchanged
        let rho_in = no_ladder.reduced_spin_density();
        let rho_out = out.reduced_spin_density();
        assert_abs_diff_eq!((rho_in - rho_out).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn drift_ladder_phase_bookkeeping() {
        let bell = make_bell_state(OMEGA).unwrap();
        let (length, velocity) = (0.37, 1990.0);
        let t = length / velocity;
        let relative =
            |s: &JointState| (s.amplitude(Spin::Down, -1) / s.amplitude(Spin::Up, 1)).arg();

        let no_field = apply_guide_field_drift(&bell, 0.0, length, velocity).unwrap();
        assert_abs_diff_eq!(
            wrap_phase(relative(&no_field) - 2.0 * OMEGA * t),
            0.0,
            epsilon = 1e-10
        );

        let b0 = 1.1e-3;
        let with_field = apply_guide_field_drift(&bell, b0, length, velocity).unwrap();
        let expected = 2.0 * OMEGA * t + larmor_frequency(b0) * t;
        assert_abs_diff_eq!(
            wrap_phase(relative(&with_field) - expected),
            0.0,
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(with_field.norm_sqr(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn drift_zero_length_is_identity() {
        let bell = make_bell_state(OMEGA).unwrap();
        assert_eq!(
            apply_guide_field_drift(&bell, 1.1e-3, 0.0, 2000.0).unwrap(),
            bell
        );
    }

    #[test]
    fn dc_pi_flips_and_squares_to_minus_identity() {
        let down = apply_dc_pi(&up0());
        assert_abs_diff_eq!(down.spin_probability(Spin::Down), 1.0, epsilon = 1e-15);
        let psi = make_bell_state(OMEGA).unwrap();
        let twice = apply_dc_pi(&apply_dc_pi(&psi));
        for (a, b) in twice.amplitudes().iter().zip(psi.amplitudes()) {
            assert_abs_diff_eq!((a + b).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dc_pi_between_equal_drifts_cancels_precession() {
        // Two-drift composition oracle: R_z(θ)·R_x(π)·R_z(θ) = R_x(π).
        let psi = JointState::from_amplitudes(
            2,
            OMEGA,
            [((Spin::Up, 0), c(0.6, 0.0)), ((Spin::Down, 0), c(0.0, 0.8))],
        )
        .unwrap();
        let (b0, length, v) = (1.1e-3, 0.213, 1988.0);
        let d = |s: &JointState| apply_guide_field_drift(s, b0, length, v).unwrap();
        let composed = d(&apply_dc_pi(&d(&psi)));
        let flipped = apply_dc_pi(&psi);
        for (a, b) in composed.amplitudes().iter().zip(flipped.amplitudes()) {
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn analyze_up_examples() {
        assert_eq!(analyze_up(&up0()), 1.0);
        assert_abs_diff_eq!(
            analyze_up(&make_bell_state(OMEGA).unwrap()),
            0.5,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(analyze_up(&incident()), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn unitary_elements_preserve_norm() {
        let psi = apply_dc_pi2(&make_bell_state(OMEGA).unwrap(), Sign::Plus);
        for out in [
            apply_dc_pi2(&psi, Sign::Minus),
            apply_dc_pi(&psi),
            apply_rf_flipper(&psi, 1.3).unwrap(),
            apply_guide_field_drift(&psi, 1.1e-3, 0.5, 1988.0).unwrap(),
        ] {
            assert_abs_diff_eq!(out.norm_sqr(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn canonical_config_at_gamma_zero_transmits_fully() {
        let config = BeamlineConfig::canonical();
        assert_abs_diff_eq!(run_beamline(&config, 0.0).unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn canonical_config_destructive_setting() {
        let config = BeamlineConfig::canonical();
        let at = config.with_stage(config.displacement_for_phase(FRAC_PI_2));
        assert_abs_diff_eq!(run_beamline(&at, FRAC_PI_4).unwrap(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn one_period_of_stage_is_invisible() {
        let config = BeamlineConfig::canonical();
        let period = gamma_period_mm(&config) / 1000.0;
        let base = config.with_stage(0.0031);
        let shifted = config.with_stage(0.0031 + period);
        for phi in [0.0, 0.4, 1.1] {
            assert_abs_diff_eq!(
                run_beamline(&base, phi).unwrap(),
                run_beamline(&shifted, phi).unwrap(),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn state_after_first_flipper_is_bell_state() {
        let config = BeamlineConfig::canonical();
        let (state, weight) = config.propagate(Some(3)).unwrap();
        assert_eq!(weight, 1.0);
        let f = state
            .fidelity(&make_bell_state(config.rf_frequency()).unwrap())
            .unwrap();
        assert!(f > 1.0 - 1e-12, "{f}");
    }

    #[test]
    fn gamma_period_examples() {
        let config = BeamlineConfig::canonical();
        assert!((gamma_period_mm(&config) - 31.06).abs() < 0.005);
        let fast = BeamlineConfig::from_params(&BeamlineParams {
            rf_frequency_hz: 64_000.0,
            ..Default::default()
        })
        .unwrap();
        assert_relative_eq!(
            gamma_period_mm(&fast),
            gamma_period_mm(&config) / 2.0,
            max_relative = 1e-12
        );
        let short = BeamlineConfig::from_params(&BeamlineParams {
            wavelength: 1.976e-10,
            ..Default::default()
        })
        .unwrap();
        assert!((gamma_period_mm(&short) - 31.28).abs() < 0.02);
    }

    #[test]
    fn malformed_order_is_rejected() {
        let mut config = BeamlineConfig::canonical();
        config.elements.swap(1, 2);
        assert!(matches!(
            run_beamline(&config, 0.0),
            Err(Error::MalformedBeamline(_))
        ));

        let mut config = BeamlineConfig::canonical();
        config.elements.remove(0);
        assert!(config.validate().is_err());
    }

    #[test]
    fn stage_travel_and_frequency_mismatch_rejected() {
        let config = BeamlineConfig::canonical();
        assert!(config.with_stage(0.05).validate().is_err());

        let mut config = BeamlineConfig::canonical();
        if let ElementKind::RfFlipper { frequency, .. } = &mut config.elements[4].kind {
            *frequency *= 1.01;
        }
        assert!(config.validate().is_err());
    }

    #[test]
    fn guide_field_sweep_keeps_fringe_law_after_rezeroing() {
        for scale in [0.9, 1.0, 1.1] {
            let params = BeamlineParams {
                guide_field: 1.1e-3 * scale,
                ..Default::default()
            };
            let config = BeamlineConfig::from_params(&params).unwrap();
            for (phi, g) in [(0.0, 0.3), (0.7, -1.2), (1.4, 2.5)] {
                let p = run_beamline(&config.with_stage(config.displacement_for_phase(g)), phi)
                    .unwrap();
                assert_abs_diff_eq!(p, 0.5 * (1.0 + (2.0 * phi + g).cos()), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn larmor_shift_vanishes_only_with_compensation() {
        let on = BeamlineConfig::canonical();
        assert!(larmor_phase_shift(&on, 0.005).unwrap().abs() < 1e-6);
        let off = BeamlineConfig::from_params(&BeamlineParams {
            larmor_compensation: false,
            ..BeamlineParams::default()
        })
        .unwrap();
        let omega_l = larmor_frequency(off.guide_field());
        let want = wrap_phase(2.0 * omega_l * 0.005 / off.kinematics.velocity());
        let got = larmor_phase_shift(&off, 0.005).unwrap();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}
