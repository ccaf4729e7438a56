//! Physical constants (CODATA 2018).

/// Planck constant, J·s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Neutron mass, kg.
pub const NEUTRON_MASS: f64 = 1.674_927_498_04e-27;
/// Magnitude of the neutron magnetic moment, J/T.
pub const NEUTRON_MOMENT: f64 = 9.662_365_1e-27;
/// h / m_n in m²/s (≈ 3.956e-7).
pub const H_OVER_MN: f64 = PLANCK / NEUTRON_MASS;
