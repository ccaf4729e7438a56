//! Dense complex linear algebra on the spin ⊗ energy-ladder Hilbert space.
//!
//! A single neutron carries a spin-½ degree of freedom and a total-energy
//! degree of freedom. Resonant RF flippers exchange photons of energy ħω, so
//! the energy lives on a ladder `E0 + n·ħω`. The ladder is truncated at
//! `|n| ≤ n_max`; operations that would leave it fail rather than clip.
//!
//! Basis ordering: index `(n + n_max) * 2 + s` with `s = 0` for spin up and
//! `s = 1` for spin down.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex;

use crate::error::{invalid, Error, Result};

pub type C64 = Complex<f64>;

/// Ladder truncation used unless a caller asks for something else.
pub const DEFAULT_N_MAX: usize = 2;

/// Absolute tolerance for the pure-algebra checks (dimension ≤ 10).
pub const ALGEBRA_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    fn index(self) -> usize {
        match self {
            Spin::Up => 0,
            Spin::Down => 1,
        }
    }
}

/// Outcome label of a dichotomic measurement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Pure state on spin{↑,↓} ⊗ {E0 + n·ħω : |n| ≤ n_max}.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    n_max: usize,
    omega: f64,
    amplitudes: Vec<C64>,
}

impl JointState {
    /// The zero vector. Not a physical state; used as an accumulator.
    pub(crate) fn zeros(n_max: usize, omega: f64) -> Self {
        Self {
            n_max,
            omega,
            amplitudes: vec![C64::new(0.0, 0.0); dimension(n_max)],
        }
    }

    /// `|s, n⟩`.
    pub fn basis(spin: Spin, level: i32, n_max: usize, omega: f64) -> Result<Self> {
        let mut state = Self::zeros(n_max, omega);
        let idx = state.index(spin, level)?;
        state.amplitudes[idx] = C64::new(1.0, 0.0);
        Ok(state)
    }

    /// Builds a state from explicit `(spin, level) → amplitude` entries.
    /// Entries are summed; the result is not renormalized.
    pub fn from_amplitudes<I>(n_max: usize, omega: f64, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = ((Spin, i32), C64)>,
    {
        let mut state = Self::zeros(n_max, omega);
        for ((spin, level), amp) in entries {
            let idx = state.index(spin, level)?;
            state.amplitudes[idx] += amp;
        }
        Ok(state)
    }

    /// Separable state `|χ_S⟩ ⊗ |χ_E⟩` with `energy` given as `(level, amplitude)` pairs.
    pub fn product(
        spin: [C64; 2],
        energy: &[(i32, C64)],
        n_max: usize,
        omega: f64,
    ) -> Result<Self> {
        let entries = energy.iter().flat_map(|&(level, e)| {
            [
                ((Spin::Up, level), spin[0] * e),
                ((Spin::Down, level), spin[1] * e),
            ]
        });
        Self::from_amplitudes(n_max, omega, entries)
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Ladder spacing ω in rad/s.
    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn levels(&self) -> std::ops::RangeInclusive<i32> {
        let n = self.n_max as i32;
        -n..=n
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amplitudes
    }

    pub(crate) fn index(&self, spin: Spin, level: i32) -> Result<usize> {
        let n = self.n_max as i32;
        if level.abs() > n {
            return Err(Error::TruncationOverflow {
                level,
                n_max: self.n_max,
            });
        }
        Ok(((level + n) as usize) * 2 + spin.index())
    }

    /// Amplitude `⟨s, n|ψ⟩`; zero outside the ladder.
    pub fn amplitude(&self, spin: Spin, level: i32) -> C64 {
        self.index(spin, level)
            .map(|i| self.amplitudes[i])
            .unwrap_or_default()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn ensure_normalized(&self) -> Result<()> {
        let norm_sqr = self.norm_sqr();
        if (norm_sqr - 1.0).abs() > ALGEBRA_TOLERANCE {
            return Err(Error::Unnormalized { norm_sqr });
        }
        Ok(())
    }

    /// Rescales to unit norm. Fails on the zero vector.
    pub fn normalized(mut self) -> Result<Self> {
        let norm = self.norm_sqr().sqrt();
        if norm == 0.0 {
            return Err(Error::Unnormalized { norm_sqr: 0.0 });
        }
        self.amplitudes.iter_mut().for_each(|a| *a /= norm);
        Ok(self)
    }

    pub fn to_vector(&self) -> DVector<C64> {
        DVector::from_column_slice(&self.amplitudes)
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &JointState) -> Result<C64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// `|⟨self|other⟩|²`; insensitive to global phase.
    pub fn fidelity(&self, other: &JointState) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    /// Probability of finding the spin in `spin`, summed over the ladder.
    pub fn spin_probability(&self, spin: Spin) -> f64 {
        self.levels()
            .map(|n| self.amplitude(spin, n).norm_sqr())
            .sum()
    }

    /// Reduced spin density matrix, tracing out the energy ladder.
    pub fn reduced_spin_density(&self) -> Matrix2<C64> {
        let mut rho = Matrix2::zeros();
        for n in self.levels() {
            let amps = [self.amplitude(Spin::Up, n), self.amplitude(Spin::Down, n)];
            for r in 0..2 {
                for c in 0..2 {
                    rho[(r, c)] += amps[r] * amps[c].conj();
                }
            }
        }
        rho
    }

    /// Expectation of a dense operator, `⟨ψ|M|ψ⟩`.
    pub fn expectation(&self, operator: &DMatrix<C64>) -> Result<C64> {
        if operator.nrows() != self.dim() || operator.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                left: operator.nrows(),
                right: self.dim(),
            });
        }
        let psi = self.to_vector();
        Ok(psi.dotc(&(operator * &psi)))
    }
}

fn dimension(n_max: usize) -> usize {
    2 * (2 * n_max + 1)
}

fn level_index(level: i32, n_max: usize) -> usize {
    (level + n_max as i32) as usize
}

/// `(1/√2)(|E0+ħω⟩⊗|↑⟩ + |E0−ħω⟩⊗|↓⟩)`.
pub fn make_bell_state(omega: f64) -> Result<JointState> {
    make_bell_state_on(omega, DEFAULT_N_MAX)
}

pub fn make_bell_state_on(omega: f64, n_max: usize) -> Result<JointState> {
    if !(omega > 0.0) {
        return Err(invalid("omega", format!("must be positive, got {omega}")));
    }
    if n_max < 1 {
        return Err(invalid("n_max", "Bell state needs n_max >= 1"));
    }
    let h = C64::new(FRAC_1_SQRT_2, 0.0);
    JointState::from_amplitudes(n_max, omega, [((Spin::Up, 1), h), ((Spin::Down, -1), h)])
}

/// Orthogonal projector with its rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Projector {
    matrix: DMatrix<C64>,
    rank: usize,
}

impl Projector {
    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// ‖P² − P‖_F.
    pub fn idempotence_residual(&self) -> f64 {
        (&self.matrix * &self.matrix - &self.matrix).norm()
    }

    /// ‖P − P†‖_F.
    pub fn hermiticity_residual(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).norm()
    }
}

fn ket_bra(ket: &[C64]) -> DMatrix<C64> {
    let n = ket.len();
    DMatrix::from_fn(n, n, |r, c| ket[r] * ket[c].conj())
}

/// Lifts a 2×2 spin operator to the full space (identity on the ladder).
pub fn embed_spin(op: &Matrix2<C64>, n_max: usize) -> DMatrix<C64> {
    let dim = dimension(n_max);
    let mut m = DMatrix::zeros(dim, dim);
    for level in 0..(2 * n_max + 1) {
        for r in 0..2 {
            for c in 0..2 {
                m[(level * 2 + r, level * 2 + c)] = op[(r, c)];
            }
        }
    }
    m
}

/// Lifts an operator on the two-level subspace spanned by `|n=+1⟩, |n=−1⟩`
/// (in that order) to the full space, acting as the identity on spin and as
/// zero on the unaddressed levels.
pub fn embed_sideband(op: &Matrix2<C64>, n_max: usize) -> DMatrix<C64> {
    let dim = dimension(n_max);
    let mut m = DMatrix::zeros(dim, dim);
    let levels = [level_index(1, n_max), level_index(-1, n_max)];
    for (r, &lr) in levels.iter().enumerate() {
        for (c, &lc) in levels.iter().enumerate() {
            for s in 0..2 {
                m[(lr * 2 + s, lc * 2 + s)] = op[(r, c)];
            }
        }
    }
    m
}

fn superposition_projector_2x2(phase: f64, sign: Sign) -> Matrix2<C64> {
    let h = FRAC_1_SQRT_2;
    let ket = [C64::new(h, 0.0), C64::from_polar(h, -phase) * sign.value()];
    let m = ket_bra(&ket);
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

/// Projector onto `(|↑⟩ ± e^{−iα}|↓⟩)/√2` on every ladder level.
pub fn spin_projector(alpha: f64, sign: Sign, n_max: usize) -> Projector {
    Projector {
        matrix: embed_spin(&superposition_projector_2x2(alpha, sign), n_max),
        rank: 2 * n_max + 1,
    }
}

/// Projector onto `(|E0+ħω⟩ ± e^{−iγ}|E0−ħω⟩)/√2`, spin untouched.
pub fn energy_projector(gamma: f64, sign: Sign, n_max: usize) -> Projector {
    Projector {
        matrix: embed_sideband(&superposition_projector_2x2(gamma, sign), n_max),
        rank: 2,
    }
}

/// Dichotomic observable `P₊ − P₋`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observable {
    matrix: DMatrix<C64>,
    label: String,
}

impl Observable {
    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn hermiticity_residual(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).norm()
    }

    pub fn expectation(&self, state: &JointState) -> Result<f64> {
        state.ensure_normalized()?;
        Ok(state.expectation(&self.matrix)?.re)
    }
}

pub fn observable(
    plus: &Projector,
    minus: &Projector,
    label: impl Into<String>,
) -> Result<Observable> {
    if plus.matrix.shape() != minus.matrix.shape() {
        return Err(Error::DimensionMismatch {
            left: plus.matrix.nrows(),
            right: minus.matrix.nrows(),
        });
    }
    let residual = (&plus.matrix * &minus.matrix).norm();
    if residual > ALGEBRA_TOLERANCE {
        return Err(Error::NonOrthogonal { residual });
    }
    Ok(Observable {
        matrix: &plus.matrix - &minus.matrix,
        label: label.into(),
    })
}

/// `Â(α) = P₊(α) − P₋(α)` on spin.
pub fn spin_observable(alpha: f64, n_max: usize) -> Observable {
    observable(
        &spin_projector(alpha, Sign::Plus, n_max),
        &spin_projector(alpha, Sign::Minus, n_max),
        format!("A(alpha={alpha})"),
    )
    .expect("spin projector pair is orthogonal by construction")
}

/// `B̂(γ) = P₊(γ) − P₋(γ)` on the ±1 sidebands.
pub fn energy_observable(gamma: f64, n_max: usize) -> Observable {
    observable(
        &energy_projector(gamma, Sign::Plus, n_max),
        &energy_projector(gamma, Sign::Minus, n_max),
        format!("B(gamma={gamma})"),
    )
    .expect("energy projector pair is orthogonal by construction")
}

/// `⟨ψ|Â(α)⊗B̂(γ)|ψ⟩` by dense contraction. Equals `cos(α+γ)` on the Bell state.
pub fn joint_expectation(state: &JointState, alpha: f64, gamma: f64) -> Result<f64> {
    state.ensure_normalized()?;
    let n_max = state.n_max();
    let a = spin_observable(alpha, n_max);
    let b = energy_observable(gamma, n_max);
    let joint = a.matrix() * b.matrix();
    let value = state.expectation(&joint)?.re;
    if value.abs() > 1.0 + ALGEBRA_TOLERANCE {
        return Err(Error::OutOfRange { value });
    }
    Ok(value.clamp(-1.0, 1.0))
}

/// `|E(α1,γ1) + E(α2,γ1) − E(α1,γ2) + E(α2,γ2)|`.
pub fn chsh_value(e11: f64, e21: f64, e12: f64, e22: f64) -> Result<f64> {
    for value in [e11, e21, e12, e22] {
        if !(value.abs() <= 1.0) {
            return Err(Error::OutOfRange { value });
        }
    }
    Ok((e11 + e21 - e12 + e22).abs())
}

/// The four angle settings of a CHSH test.
///
/// Energy settings are azimuths on the energy Bloch sphere taken with the
/// orientation opposite to the projector phase: setting `γ` is measured
/// with `B̂(−γ)`. Under this orientation the canonical settings
/// (0, π/2; π/4, 3π/4) give the maximal value 2√2, and correlations follow
/// the signs recorded in a real run (+, +, −, +).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BellSettings {
    pub alpha1: f64,
    pub alpha2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Default for BellSettings {
    fn default() -> Self {
        Self::canonical()
    }
}

impl BellSettings {
    pub fn canonical() -> Self {
        use std::f64::consts::PI;
        Self {
            alpha1: 0.0,
            alpha2: PI / 2.0,
            gamma1: PI / 4.0,
            gamma2: 3.0 * PI / 4.0,
        }
    }

    pub fn alpha(&self, i: usize) -> f64 {
        if i == 0 {
            self.alpha1
        } else {
            self.alpha2
        }
    }

    pub fn gamma(&self, j: usize) -> f64 {
        if j == 0 {
            self.gamma1
        } else {
            self.gamma2
        }
    }

    /// Setting pairs in CHSH order: (α1,γ1), (α2,γ1), (α1,γ2), (α2,γ2).
    pub fn pairs(&self) -> [(f64, f64); 4] {
        [
            (self.alpha1, self.gamma1),
            (self.alpha2, self.gamma1),
            (self.alpha1, self.gamma2),
            (self.alpha2, self.gamma2),
        ]
    }
}

/// Projector phases `(α, γ_phase)` realising the setting pair `(α, γ)`.
pub fn analyzer_phases(alpha: f64, gamma: f64) -> (f64, f64) {
    (alpha, -gamma)
}

/// CHSH value of `state` at `settings`, from four joint expectations.
pub fn chsh_for_state(state: &JointState, settings: &BellSettings) -> Result<f64> {
    let mut e = [0.0; 4];
    for (slot, (alpha, gamma)) in e.iter_mut().zip(settings.pairs()) {
        let (a, g) = analyzer_phases(alpha, gamma);
        *slot = joint_expectation(state, a, g)?;
    }
    chsh_value(e[0], e[1], e[2], e[3])
}
