//! Rotating-frame spin Hamiltonian, propagators and phenomenological
//! relaxation.
//!
//! Everything runs in the frame rotating at the Larmor frequency with the
//! rotating-wave approximation applied to the RF field. The static
//! Hamiltonian is then `H = Δ S_Z + (ω_q/2) S_Z²`, diagonal in the Zeeman
//! basis.

use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::linalg::{
    self, c, conjugate, expm_hermitian, hermiticity_residual, matrix_power, max_abs, CMatrix,
};
use crate::spin_ops::{make_spin_operators, SpinOperators, SpinQuantumNumber};

/// Largest phase a single time slice may accumulate.
pub const MAX_SLICE_PHASE: f64 = 0.1;
/// Phase per slice targeted by [`RfPulse::with_auto_slices`].
pub const DEFAULT_SLICE_PHASE: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct SpinSystem {
    pub s: SpinQuantumNumber,
    /// ω₀ in rad/s. Kept for reporting only.
    pub larmor_frequency: f64,
    /// ω_q in rad/s.
    pub quad_coupling: f64,
    /// Resonance offset Δ in rad/s.
    pub frame_offset: f64,
    ops: SpinOperators,
}

impl SpinSystem {
    pub fn new(
        s: SpinQuantumNumber,
        larmor_frequency: f64,
        quad_coupling: f64,
        frame_offset: f64,
    ) -> Result<Self> {
        if !(quad_coupling >= 0.0) || !quad_coupling.is_finite() {
            return Err(invalid("quad_coupling", "must be finite and >= 0"));
        }
        if !frame_offset.is_finite() || !larmor_frequency.is_finite() {
            return Err(invalid("larmor_frequency", "must be finite"));
        }
        Ok(Self {
            s,
            larmor_frequency,
            quad_coupling,
            frame_offset,
            ops: make_spin_operators(s),
        })
    }

    /// Spin 7/2 on resonance with the given ω_q; ω₀ set to 10⁴ ω_q.
    pub fn cesium(quad_coupling: f64) -> Result<Self> {
        Self::new(
            SpinQuantumNumber::SEVEN_HALVES,
            1e4 * quad_coupling,
            quad_coupling,
            0.0,
        )
    }

    pub fn ops(&self) -> &SpinOperators {
        &self.ops
    }

    pub fn dim(&self) -> usize {
        self.s.dim()
    }

    /// True when ω₀ < 100 ω_q, i.e. the high-field picture is questionable.
    pub fn high_field_marginal(&self) -> bool {
        self.larmor_frequency.abs() < 100.0 * self.quad_coupling
    }

    /// Diagonal of the rotating-frame Hamiltonian, in level order.
    pub fn energies(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let m = self.s.m_at(i);
                self.frame_offset * m + 0.5 * self.quad_coupling * m * m
            })
            .collect()
    }

    /// Precession frequency of the `(index, index + 1)` coherence as seen in
    /// `Tr(ρ S₊)`: `E_m − E_{m−1} = Δ + ω_q (m − 1/2)`.
    pub fn transition_frequency(&self, index: usize) -> f64 {
        let e = self.energies();
        e[index] - e[index + 1]
    }

    pub fn cycle_time(&self) -> Result<f64> {
        cycle_time(self)
    }
}

pub fn rotating_frame_hamiltonian(sys: &SpinSystem) -> CMatrix {
    let e = sys.energies();
    CMatrix::from_fn(
        sys.dim(),
        sys.dim(),
        |i, j| if i == j { c(e[i]) } else { c(0.0) },
    )
}

/// `t_c = 2π/ω_q`.
pub fn cycle_time(sys: &SpinSystem) -> Result<f64> {
    if sys.quad_coupling <= 0.0 {
        return Err(invalid("quad_coupling", "cycle time needs ω_q > 0"));
    }
    Ok(TAU / sys.quad_coupling)
}

/// `exp(−i h t)`.
pub fn free_propagator(h: &CMatrix, t: f64) -> Result<CMatrix> {
    expm_hermitian(h, t)
}

/// Ideal instantaneous rotation `exp(−iθ(S_X cos φ + S_Y sin φ))`.
pub fn ideal_rotation(ops: &SpinOperators, angle: f64, phase: f64) -> CMatrix {
    expm_hermitian(&ops.transverse(phase), angle).expect("transverse spin operator is Hermitian")
}

/// One frequency component of an RF pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tone {
    /// Offset from the carrier, rad/s.
    pub offset: f64,
    /// Nutation amplitude ω₁, rad/s.
    pub amplitude: f64,
    pub phase: f64,
}

impl Tone {
    pub fn on_resonance(amplitude: f64) -> Self {
        Self {
            offset: 0.0,
            amplitude,
            phase: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfPulse {
    pub duration: f64,
    /// Phase added to every tone.
    pub phase: f64,
    pub tones: Vec<Tone>,
    pub slice_count: usize,
}

impl RfPulse {
    /// Rectangular single-tone pulse of the given flip angle.
    pub fn rectangular(flip_angle: f64, phase: f64, amplitude: f64) -> Result<Self> {
        if !(amplitude > 0.0) {
            return Err(invalid("amplitude", "rectangular pulse needs ω₁ > 0"));
        }
        let pulse = Self {
            duration: flip_angle.abs() / amplitude,
            phase: if flip_angle < 0.0 {
                phase + std::f64::consts::PI
            } else {
                phase
            },
            tones: vec![Tone::on_resonance(amplitude)],
            slice_count: 1,
        };
        pulse.validate()?;
        Ok(pulse)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(invalid("duration", "must be > 0"));
        }
        if self.slice_count == 0 {
            return Err(invalid("slice_count", "must be >= 1"));
        }
        if self.tones.is_empty() {
            return Err(Error::EmptyTones);
        }
        if self.tones.iter().any(|t| !(t.amplitude >= 0.0)) {
            return Err(invalid("amplitude", "tone amplitudes must be >= 0"));
        }
        Ok(())
    }

    /// Upper bound on the spectral radius of the instantaneous Hamiltonian.
    pub fn hamiltonian_bound(&self, sys: &SpinSystem) -> f64 {
        let static_part = sys.energies().iter().fold(0.0_f64, |a, e| a.max(e.abs()));
        let rf: f64 = self.tones.iter().map(|t| t.amplitude).sum();
        static_part + rf * sys.s.spin()
    }

    /// Sets `slice_count` so the phase per slice is at most
    /// [`DEFAULT_SLICE_PHASE`].
    pub fn with_auto_slices(mut self, sys: &SpinSystem) -> Self {
        let n = (self.hamiltonian_bound(sys) * self.duration / DEFAULT_SLICE_PHASE).ceil();
        self.slice_count = (n as usize).max(1);
        self
    }

    /// A single effective tone if every tone shares one offset.
    fn collapsed(&self) -> Option<(f64, Complex64)> {
        let first = self.tones.first()?.offset;
        let tol = 1e-12 * first.abs().max(1.0);
        if self.tones.iter().any(|t| (t.offset - first).abs() > tol) {
            return None;
        }
        let b = self
            .tones
            .iter()
            .map(|t| Complex64::from_polar(t.amplitude, self.phase + t.phase))
            .sum();
        Some((first, b))
    }

    /// Complex field `Σ ω₁ⱼ e^{i(νⱼ t + φ + φⱼ)}` at time `t`.
    fn field_at(&self, t: f64) -> Complex64 {
        self.tones
            .iter()
            .map(|tone| {
                Complex64::from_polar(tone.amplitude, tone.offset * t + self.phase + tone.phase)
            })
            .sum()
    }
}

fn transverse_field(ops: &SpinOperators, b: Complex64) -> CMatrix {
    &ops.sx * c(b.re) + &ops.sy * c(b.im)
}

/// Propagator of an RF pulse under `H_rot + H_rf(t)`.
///
/// Pulses whose tones share a single offset are solved exactly in the frame
/// of that tone, independent of `slice_count`. Genuine multi-tone pulses are
/// integrated as a time-ordered product of second-order slices. When every offset is an integer
/// multiple of ω_q the field repeats with period `t_c`, so one period is
/// integrated and raised to the required power.
pub fn rf_propagator(pulse: &RfPulse, sys: &SpinSystem) -> Result<CMatrix> {
    pulse.validate()?;
    let ops = sys.ops();
    let h0 = rotating_frame_hamiltonian(sys);

    if let Some((offset, b)) = pulse.collapsed() {
        let generator = &h0 + transverse_field(ops, b) - &ops.sz * c(offset);
        let inner = expm_hermitian(&generator, pulse.duration)?;
        let frame = expm_hermitian(&ops.sz, offset * pulse.duration)?;
        return Ok(frame * inner);
    }

    let dt = pulse.duration / pulse.slice_count as f64;
    let phase = pulse.hamiltonian_bound(sys) * dt;
    if phase >= MAX_SLICE_PHASE {
        return Err(Error::SliceResolution {
            phase,
            limit: MAX_SLICE_PHASE,
        });
    }

    if let Some(period) = field_period(pulse, sys) {
        let whole = (pulse.duration / period + 1e-9).floor() as u64;
        if whole >= 2 {
            let per_period = ((period / dt) - 1e-9).ceil().max(1.0) as usize;
            let u_period = sliced_product(pulse, sys, 0.0, period, per_period)?;
            let mut u = matrix_power(&u_period, whole);
            let rest = pulse.duration - whole as f64 * period;
            if rest > 1e-12 * pulse.duration {
                let n_rest = ((rest / (period / per_period as f64)) - 1e-9)
                    .ceil()
                    .max(1.0) as usize;
                u = sliced_product(pulse, sys, 0.0, rest, n_rest)? * u;
            }
            return Ok(u);
        }
    }
    sliced_product(pulse, sys, 0.0, pulse.duration, pulse.slice_count)
}

/// Direct midpoint slicing with no periodicity shortcut.
pub fn rf_propagator_sliced(pulse: &RfPulse, sys: &SpinSystem) -> Result<CMatrix> {
    pulse.validate()?;
    let dt = pulse.duration / pulse.slice_count as f64;
    let phase = pulse.hamiltonian_bound(sys) * dt;
    if phase >= MAX_SLICE_PHASE {
        return Err(Error::SliceResolution {
            phase,
            limit: MAX_SLICE_PHASE,
        });
    }
    sliced_product(pulse, sys, 0.0, pulse.duration, pulse.slice_count)
}

fn field_period(pulse: &RfPulse, sys: &SpinSystem) -> Option<f64> {
    let wq = sys.quad_coupling;
    if wq <= 0.0 {
        return None;
    }
    let commensurate = pulse.tones.iter().all(|t| {
        let k = t.offset / wq;
        (k - k.round()).abs() < 1e-9
    });
    commensurate.then(|| TAU / wq)
}

/// Strang splitting of each slice: half a step of the diagonal `H_rot`, the
/// exact transverse-field rotation at the slice midpoint, another half step.
/// The rotation is `R_z(φ) e^{−iθ S_x} R_z(−φ)` evaluated in the eigenbasis
/// of `S_x`, so no per-slice eigendecomposition is needed.
fn sliced_product(
    pulse: &RfPulse,
    sys: &SpinSystem,
    start: f64,
    length: f64,
    slices: usize,
) -> Result<CMatrix> {
    let ops = sys.ops();
    let n = sys.dim();
    let dt = length / slices as f64;
    let half: Vec<Complex64> = sys
        .energies()
        .iter()
        .map(|e| Complex64::from_polar(1.0, -e * dt / 2.0))
        .collect();
    let m: Vec<f64> = (0..n).map(|i| ops.sz[(i, i)].re).collect();
    let eig = ops.sx.clone().symmetric_eigen();
    let v = eig.eigenvectors;
    let v_adj = v.adjoint();
    let mut u = CMatrix::identity(n, n);
    let mut w = CMatrix::zeros(n, n);
    for k in 0..slices {
        let t_mid = start + (k as f64 + 0.5) * dt;
        let b = pulse.field_at(t_mid);
        let theta = b.norm() * dt;
        let phi = b.arg();
        for j in 0..n {
            let p = Complex64::from_polar(1.0, -theta * eig.eigenvalues[j]);
            for i in 0..n {
                w[(i, j)] = v[(i, j)] * p;
            }
        }
        let mut step = &w * &v_adj;
        for i in 0..n {
            let rot = Complex64::from_polar(1.0, -phi * m[i]);
            let left = half[i] * rot;
            let right = half[i] * rot.conj();
            for j in 0..n {
                step[(i, j)] *= left;
                step[(j, i)] *= right;
            }
        }
        u = step * u;
    }
    if !u.iter().all(|z| z.is_finite()) {
        return Err(Error::Internal("non-finite propagator".into()));
    }
    Ok(u)
}

/// Density matrix stored as its deviation from the maximally mixed state,
/// `ρ = I/d + δ` with `Tr δ = 0`.
///
/// The identity part neither evolves nor contributes signal, so keeping it
/// implicit preserves relative precision for weakly polarized states.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    deviation: CMatrix,
}

pub(crate) const STATE_TOLERANCE: f64 = 1e-10;

impl DensityMatrix {
    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            deviation: CMatrix::zeros(dim, dim),
        }
    }

    /// Validates a full density matrix: Hermitian, unit trace, eigenvalues
    /// above `−1e-9`.
    pub fn from_full(rho: CMatrix) -> Result<Self> {
        let n = rho.nrows();
        if rho.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: rho.ncols(),
            });
        }
        let herm = hermiticity_residual(&rho);
        if herm > STATE_TOLERANCE {
            return Err(Error::InvalidState(format!(
                "not Hermitian (residual {herm:.3e})"
            )));
        }
        let tr = linalg::trace(&rho);
        if (tr - c(1.0)).norm() > STATE_TOLERANCE {
            return Err(Error::InvalidState(format!("trace {tr} != 1")));
        }
        let min_eig = rho
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if min_eig < -1e-9 {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min_eig:.3e}"
            )));
        }
        let deviation = rho - CMatrix::identity(n, n) * c(1.0 / n as f64);
        Ok(Self { deviation })
    }

    /// Builds a state from a traceless Hermitian deviation. Positivity of the
    /// full matrix is not checked.
    pub fn from_deviation(deviation: CMatrix) -> Result<Self> {
        let scale = max_abs(&deviation);
        let herm = hermiticity_residual(&deviation);
        if herm > STATE_TOLERANCE * scale {
            return Err(Error::InvalidState(format!(
                "deviation not Hermitian ({herm:.3e})"
            )));
        }
        let tr = linalg::trace(&deviation);
        if tr.norm() > STATE_TOLERANCE * scale {
            return Err(Error::InvalidState(format!("deviation trace {tr} != 0")));
        }
        Ok(Self { deviation })
    }

    /// Diagonal state from level populations (must sum to 1).
    pub fn from_populations(populations: &[f64]) -> Result<Self> {
        let n = populations.len();
        let rho = CMatrix::from_fn(n, n, |i, j| if i == j { c(populations[i]) } else { c(0.0) });
        Self::from_full(rho)
    }

    /// Pure state `|ψ⟩⟨ψ|`.
    pub fn pure(psi: &[Complex64]) -> Result<Self> {
        let n = psi.len();
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        let rho = CMatrix::from_fn(n, n, |i, j| psi[i] * psi[j].conj() / norm);
        Self::from_full(rho)
    }

    pub fn dim(&self) -> usize {
        self.deviation.nrows()
    }

    pub fn deviation(&self) -> &CMatrix {
        &self.deviation
    }

    pub fn full(&self) -> CMatrix {
        let n = self.dim();
        &self.deviation + CMatrix::identity(n, n) * c(1.0 / n as f64)
    }

    pub fn populations(&self) -> Vec<f64> {
        let n = self.dim() as f64;
        self.deviation
            .diagonal()
            .iter()
            .map(|z| z.re + 1.0 / n)
            .collect()
    }

    /// Deviation populations (diagonal of δ).
    pub fn deviation_populations(&self) -> Vec<f64> {
        self.deviation.diagonal().iter().map(|z| z.re).collect()
    }

    /// `Tr ρ² = 1/d + Tr δ²`.
    pub fn purity(&self) -> f64 {
        let dev: f64 = self.deviation.iter().map(|z| z.norm_sqr()).sum();
        1.0 / self.dim() as f64 + dev
    }

    pub fn trace(&self) -> f64 {
        1.0 + linalg::trace(&self.deviation).re
    }

    pub fn hermiticity_residual(&self) -> f64 {
        hermiticity_residual(&self.deviation)
    }

    /// `U ρ U†`.
    pub fn evolve(&self, u: &CMatrix) -> Self {
        Self {
            deviation: conjugate(u, &self.deviation),
        }
    }

    /// Free evolution under a diagonal Hamiltonian with the given level
    /// energies, applied entrywise.
    pub fn evolve_diagonal(&self, energies: &[f64], t: f64) -> Self {
        let n = self.dim();
        let deviation = CMatrix::from_fn(n, n, |i, j| {
            self.deviation[(i, j)] * Complex64::from_polar(1.0, -(energies[i] - energies[j]) * t)
        });
        Self { deviation }
    }

    /// Expectation value `Tr(ρ A)` of a traceless operator.
    pub fn expectation_traceless(&self, op: &CMatrix) -> Complex64 {
        (&self.deviation * op).trace()
    }

    /// Zero all Zeeman-basis coherences.
    pub fn dephased(&self) -> Self {
        Self {
            deviation: linalg::dephase(&self.deviation),
        }
    }

    pub fn scaled_deviation(&self, factor: f64) -> Self {
        Self {
            deviation: &self.deviation * c(factor),
        }
    }

    pub fn add_deviation(&self, other: &Self) -> Self {
        Self {
            deviation: &self.deviation + &other.deviation,
        }
    }
}

/// Uniform phenomenological T1/T2 relaxation toward an equilibrium state.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationParams {
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub equilibrium_state: DensityMatrix,
}

impl RelaxationParams {
    pub fn new(t1: Option<f64>, t2: Option<f64>, equilibrium_state: DensityMatrix) -> Result<Self> {
        for (name, v) in [("t1", t1), ("t2", t2)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(invalid(
                        if name == "t1" { "t1" } else { "t2" },
                        "must be > 0",
                    ));
                }
            }
        }
        Ok(Self {
            t1,
            t2,
            equilibrium_state,
        })
    }

    pub fn enabled(&self) -> bool {
        self.t1.is_some() || self.t2.is_some()
    }
}

/// Coherences decay by `exp(−dt/T2)`; populations relax toward equilibrium
/// by `exp(−dt/T1)`.
pub fn apply_relaxation(
    rho: &DensityMatrix,
    dt: f64,
    params: &RelaxationParams,
) -> Result<DensityMatrix> {
    if dt < 0.0 {
        return Err(invalid("dt", "must be >= 0"));
    }
    let n = rho.dim();
    if params.equilibrium_state.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: params.equilibrium_state.dim(),
        });
    }
    let coherence = params.t2.map_or(1.0, |t2| (-dt / t2).exp());
    let population = params.t1.map_or(1.0, |t1| (-dt / t1).exp());
    let eq = params.equilibrium_state.deviation();
    let dev = rho.deviation();
    let deviation = CMatrix::from_fn(n, n, |i, j| {
        if i == j {
            eq[(i, i)] + (dev[(i, i)] - eq[(i, i)]) * population
        } else {
            dev[(i, j)] * coherence
        }
    });
    Ok(DensityMatrix { deviation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::unitarity_residual;

    fn cs(wq: f64) -> SpinSystem {
        SpinSystem::cesium(wq).unwrap()
    }

    const WQ: f64 = TAU * 1000.0;

    #[test]
    fn hamiltonian_diagonal_is_quadratic_in_m() {
        let sys = cs(WQ);
        let h = rotating_frame_hamiltonian(&sys);
        let want = [49.0, 25.0, 9.0, 1.0, 1.0, 9.0, 25.0, 49.0];
        for i in 0..8 {
            assert!((h[(i, i)].re - WQ / 8.0 * want[i]).abs() < 1e-9);
        }
        assert!(linalg::is_diagonal(&h, 0.0));
    }

    #[test]
    fn transitions_are_equidistant() {
        let sys = cs(WQ);
        let f: Vec<f64> = (0..7).map(|i| sys.transition_frequency(i) / WQ).collect();
        for (i, fi) in f.iter().enumerate() {
            assert!((fi - (3.0 - i as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_coupling_leaves_offset_term() {
        let sys = SpinSystem::new(SpinQuantumNumber::SEVEN_HALVES, 1e6, 0.0, 5.0).unwrap();
        let h = rotating_frame_hamiltonian(&sys);
        assert!(max_abs(&(h - &sys.ops().sz * c(5.0))) < 1e-15);
        assert!(cycle_time(&sys).is_err());
    }

    #[test]
    fn cycle_time_is_one_ms_at_one_khz() {
        assert!((cycle_time(&cs(WQ)).unwrap() - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn one_cycle_is_a_global_phase() {
        let sys = cs(WQ);
        let tc = sys.cycle_time().unwrap();
        let u = free_propagator(&rotating_frame_hamiltonian(&sys), tc).unwrap();
        let phase = Complex64::from_polar(1.0, -std::f64::consts::FRAC_PI_4);
        let id = CMatrix::identity(8, 8) * phase;
        assert!(max_abs(&(u - id)) < 1e-10);
    }

    #[test]
    fn cycle_minus_delta_equals_reverse_delta() {
        let sys = cs(WQ);
        let h = rotating_frame_hamiltonian(&sys);
        let tc = sys.cycle_time().unwrap();
        let delta = 0.137 * tc;
        let a = free_propagator(&h, tc - delta).unwrap();
        let b = free_propagator(&h, -delta).unwrap();
        // equal up to the cycle's global phase
        let ratio = a[(0, 0)] / b[(0, 0)];
        assert!(max_abs(&(a - b * ratio)) < 1e-10);
        assert!((ratio.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn free_propagator_group_property() {
        let sys = cs(WQ);
        let h = rotating_frame_hamiltonian(&sys);
        let u1 = free_propagator(&h, 1.3e-4).unwrap();
        let u2 = free_propagator(&h, 2.9e-4).unwrap();
        let u12 = free_propagator(&h, 4.2e-4).unwrap();
        assert!(max_abs(&(u1 * u2 - u12)) < 1e-12);
        let id = free_propagator(&h, 0.0).unwrap();
        assert!(max_abs(&(id - CMatrix::identity(8, 8))) == 0.0);
    }

    #[test]
    fn free_propagator_rejects_non_hermitian() {
        let mut h = CMatrix::zeros(2, 2);
        h[(0, 1)] = c(1.0);
        assert!(free_propagator(&h, 1.0).is_err());
    }

    #[test]
    fn on_resonance_pulse_without_coupling_is_exact_rotation() {
        let sys = SpinSystem::new(SpinQuantumNumber::SEVEN_HALVES, 1e6, 0.0, 0.0).unwrap();
        let target = ideal_rotation(sys.ops(), std::f64::consts::FRAC_PI_2, 0.0);
        for slices in [1, 3, 1000] {
            let mut p = RfPulse::rectangular(std::f64::consts::FRAC_PI_2, 0.0, 1e4).unwrap();
            p.slice_count = slices;
            let u = rf_propagator(&p, &sys).unwrap();
            assert!(max_abs(&(u - &target)) < 1e-12);
        }
    }

    #[test]
    fn strong_pulse_approaches_hard_rotation() {
        let sys = cs(WQ);
        let target = ideal_rotation(sys.ops(), std::f64::consts::FRAC_PI_4, 0.0);
        let infidelity = |ratio: f64| {
            let p = RfPulse::rectangular(std::f64::consts::FRAC_PI_4, 0.0, ratio * WQ).unwrap();
            let u = rf_propagator(&p, &sys).unwrap();
            assert!(unitarity_residual(&u) < 1e-10);
            1.0 - linalg::gate_fidelity(&u, &target)
        };
        let at_100 = infidelity(100.0);
        let at_1000 = infidelity(1000.0);
        assert!(at_100 < 1e-3);
        // second order in ω_q/ω₁
        assert!((at_100 / at_1000 - 100.0).abs() < 5.0, "{at_100} {at_1000}");
    }

    #[test]
    fn off_resonance_single_tone_matches_slicing() {
        let sys = cs(WQ);
        let pulse = RfPulse {
            duration: 2e-4,
            phase: 0.3,
            tones: vec![Tone {
                offset: 1.7 * WQ,
                amplitude: 0.4 * WQ,
                phase: 0.1,
            }],
            slice_count: 1,
        };
        let exact = rf_propagator(&pulse, &sys).unwrap();
        let mut fine = pulse.clone();
        fine.slice_count = 20_000;
        let sliced = rf_propagator_sliced(&fine, &sys).unwrap();
        assert!(max_abs(&(exact - sliced)) < 1e-7);
    }

    fn two_tone(slices: usize, duration: f64) -> RfPulse {
        RfPulse {
            duration,
            phase: 0.0,
            tones: vec![
                Tone {
                    offset: WQ,
                    amplitude: 0.3 * WQ,
                    phase: 0.0,
                },
                Tone {
                    offset: -WQ,
                    amplitude: 0.3 * WQ,
                    phase: 0.0,
                },
            ],
            slice_count: slices,
        }
    }

    #[test]
    fn coarse_slicing_is_rejected() {
        let sys = cs(WQ);
        let p = two_tone(10, 1e-3);
        assert!(matches!(
            rf_propagator(&p, &sys),
            Err(Error::SliceResolution { .. })
        ));
        let empty = RfPulse {
            tones: vec![],
            ..two_tone(10, 1e-3)
        };
        assert!(matches!(
            rf_propagator(&empty, &sys),
            Err(Error::EmptyTones)
        ));
    }

    #[test]
    fn slicing_error_is_second_order() {
        let sys = cs(WQ);
        let dur = 0.35e-3;
        let n = 400;
        let u1 = rf_propagator_sliced(&two_tone(n, dur), &sys).unwrap();
        let u2 = rf_propagator_sliced(&two_tone(2 * n, dur), &sys).unwrap();
        let u4 = rf_propagator_sliced(&two_tone(4 * n, dur), &sys).unwrap();
        let e12 = max_abs(&(&u1 - &u2));
        let e24 = max_abs(&(&u2 - &u4));
        let ratio = e12 / e24;
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn periodic_shortcut_agrees_with_direct_slicing() {
        let sys = cs(WQ);
        let tc = sys.cycle_time().unwrap();
        let p = two_tone(0, 3.5 * tc).with_auto_slices(&sys);
        let fast = rf_propagator(&p, &sys).unwrap();
        let slow = rf_propagator_sliced(&p, &sys).unwrap();
        assert!(unitarity_residual(&fast) < 1e-10);
        assert!(max_abs(&(fast - slow)) < 1e-8);
    }

    fn coherent_state(sys: &SpinSystem) -> DensityMatrix {
        let mut psi = vec![c(0.0); 8];
        psi[0] = c(1.0);
        let pure = DensityMatrix::pure(&psi).unwrap();
        pure.evolve(&ideal_rotation(sys.ops(), 0.7, 0.2))
    }

    #[test]
    fn relaxation_identities() {
        let sys = cs(WQ);
        let rho = coherent_state(&sys);
        let eq = DensityMatrix::maximally_mixed(8);
        let params = RelaxationParams::new(Some(0.01), Some(0.002), eq.clone()).unwrap();
        assert_eq!(apply_relaxation(&rho, 0.0, &params).unwrap(), rho);
        let off = RelaxationParams::new(None, None, eq.clone()).unwrap();
        assert_eq!(apply_relaxation(&rho, 1.0, &off).unwrap(), rho);
        let after = apply_relaxation(&rho, 0.002, &params).unwrap();
        let ratio = after.deviation()[(0, 1)].norm() / rho.deviation()[(0, 1)].norm();
        assert!((ratio - (-1.0f64).exp()).abs() < 1e-12);
        assert!((after.trace() - 1.0).abs() < 1e-12);
        assert!(apply_relaxation(&rho, -1.0, &params).is_err());
        assert!(RelaxationParams::new(Some(0.0), None, eq).is_err());
    }

    #[test]
    fn long_unitary_chain_keeps_state_valid() {
        let sys = cs(WQ);
        let mut rho = coherent_state(&sys);
        let step = ideal_rotation(sys.ops(), 0.013, 0.9)
            * free_propagator(&rotating_frame_hamiltonian(&sys), 1.1e-5).unwrap();
        let purity = rho.purity();
        for _ in 0..10_000 {
            rho = rho.evolve(&step);
        }
        assert!(rho.hermiticity_residual() < 1e-10);
        assert!((rho.trace() - 1.0).abs() < 1e-10);
        assert!((rho.purity() - purity).abs() < 1e-10);
    }

    #[test]
    fn full_state_validation() {
        let bad = CMatrix::identity(2, 2) * c(0.7);
        assert!(DensityMatrix::from_full(bad).is_err());
        let neg = DensityMatrix::from_populations(&[1.2, -0.2]);
        assert!(neg.is_err());
        let ok = DensityMatrix::from_populations(&[0.6, 0.4]).unwrap();
        assert!((ok.purity() - 0.52).abs() < 1e-15);
    }

    #[test]
    fn marginal_high_field_flag() {
        let sys = SpinSystem::new(SpinQuantumNumber::SEVEN_HALVES, 50.0, 1.0, 0.0).unwrap();
        assert!(sys.high_field_marginal());
        assert!(!cs(WQ).high_field_marginal());
    }
}
