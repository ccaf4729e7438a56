//! Simulation and analysis toolkit for a single-neutron Bell test between
//! the spin and total-energy degrees of freedom in a polarimeter.
//!
//! The crate is organised bottom-up:
//!
//! * [`qstate`]: spin ⊗ energy-ladder states, projectors, observables and
//!   the CHSH combination.
//! * [`beamline`]: element-by-element evolution through the apparatus.
//! * [`ensemble`]: velocity averaging and the resulting fringe contrast.
//! * [`counting`]: Poisson count simulation and the count-based estimator.
//! * [`analysis`]: sinusoid fitting of stage scans.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod beamline;
pub mod constants;
pub mod counting;
pub mod ensemble;
pub mod error;
pub mod qstate;
mod quadrature;

pub use analysis::{fit_sinusoid, mm_to_gamma, positions_for_bell_angles, FitResult, ScanData};
pub use beamline::{
    gamma_period_mm, larmor_phase_shift, run_beamline, BeamlineConfig, BeamlineElement,
    BeamlineParams, ElementKind, NeutronKinematics,
};
pub use counting::{
    chsh_from_records, expectation_from_counts, expected_counts, run_bell_experiment, sample_scan,
    thresholds_report, violation_significance, BellRun, CountMode, CountRecord, Estimate,
    RateModel, SettingQuad, SystematicPhase, ThresholdReport, ThresholdStatus,
};
pub use ensemble::{
    average_intensity, calibrate_spread_to_contrast, effective_contrast, EnsembleResult,
    Quadrature, VelocityDistribution,
};
pub use error::{Error, Result};
pub use qstate::{
    chsh_value, joint_expectation, make_bell_state, BellSettings, JointState, Observable,
    Projector, Sign, Spin,
};
