//! Pseudopure-state preparation.
//!
//! Two routes: an idealized map that equalizes the populations of every
//! level except `m = +S`, and a six-tone shaped pulse whose amplitudes are
//! optimized so the driven levels reach the same population at the end of
//! the pulse.

use std::f64::consts::{FRAC_PI_2, TAU};

use rayon::prelude::*;

use crate::acquisition::{linear_response_peaks, PeakAmplitudes};
use crate::dynamics::{rf_propagator, DensityMatrix, RfPulse, SpinSystem, Tone};
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, c, CMatrix};
use crate::optim::{nelder_mead, NelderMeadOptions};

pub const DEFAULT_POLARIZATION: f64 = 1e-5;
/// Largest relative population spread a design may return.
pub const MAX_RELATIVE_SPREAD: f64 = 1e-2;
/// Steps of the prep-phase cycle used when reading out a prepared state.
pub const PREP_CYCLE_STEPS: usize = 8;
/// Normalized variance at which the amplitude search stops; corresponds to a
/// relative spread of roughly 1e-5.
const OBJECTIVE_TARGET: f64 = 1e-10;
const START_BATCH: usize = 2;

/// High-temperature equilibrium: `δ = ε S_z / (d S)`, so the top level holds
/// `(1 + ε)/d`.
pub fn thermal_equilibrium_state(sys: &SpinSystem, polarization: f64) -> Result<DensityMatrix> {
    if !(0.0..1.0).contains(&polarization) {
        return Err(invalid("polarization", "must satisfy 0 <= eps < 1"));
    }
    let norm = sys.dim() as f64 * sys.s.spin();
    DensityMatrix::from_deviation(&sys.ops().sz * c(polarization / norm))
}

/// Sets the populations of every level below `m = +S` to their mean.
pub fn ideal_pseudopure_map(rho: &DensityMatrix) -> Result<DensityMatrix> {
    let dev = rho.deviation();
    let scale = linalg::max_abs(dev).max(f64::MIN_POSITIVE);
    let off = linalg::off_diagonal_residual(dev);
    if off > 1e-12 * scale {
        return Err(Error::NonDiagonal(off));
    }
    let mut pops = rho.deviation_populations();
    let rest = &mut pops[1..];
    let mean = rest.iter().sum::<f64>() / rest.len() as f64;
    rest.iter_mut().for_each(|p| *p = mean);
    let n = pops.len();
    DensityMatrix::from_deviation(CMatrix::from_fn(n, n, |i, j| {
        if i == j {
            c(pops[i])
        } else {
            c(0.0)
        }
    }))
}

/// Six tones, one on each single-quantum transition among the levels
/// `m = +S−1 … −S`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrepPulseDesign {
    pub offsets: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub duration: f64,
}

impl PrepPulseDesign {
    pub fn new(sys: &SpinSystem, amplitudes: Vec<f64>, duration: f64) -> Result<Self> {
        let offsets = prep_offsets(sys);
        if amplitudes.len() != offsets.len() {
            return Err(Error::DimensionMismatch {
                expected: offsets.len(),
                got: amplitudes.len(),
            });
        }
        if amplitudes.iter().any(|a| !(*a >= 0.0)) {
            return Err(invalid("amplitudes", "must be >= 0"));
        }
        if !(duration > 0.0) {
            return Err(invalid("duration", "must be > 0"));
        }
        Ok(Self {
            offsets,
            amplitudes,
            duration,
        })
    }

    pub fn pulse(&self, sys: &SpinSystem, phase: f64) -> RfPulse {
        RfPulse {
            duration: self.duration,
            phase,
            tones: self
                .offsets
                .iter()
                .zip(&self.amplitudes)
                .map(|(&offset, &amplitude)| Tone {
                    offset,
                    amplitude,
                    phase: 0.0,
                })
                .collect(),
            slice_count: 1,
        }
        .with_auto_slices(sys)
    }

    pub fn propagator(&self, sys: &SpinSystem) -> Result<CMatrix> {
        if self.amplitudes.iter().all(|&a| a == 0.0) {
            let e = sys.energies();
            let n = sys.dim();
            return Ok(CMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    num_complex::Complex64::from_polar(1.0, -e[i] * self.duration)
                } else {
                    c(0.0)
                }
            }));
        }
        rf_propagator(&self.pulse(sys, 0.0), sys)
    }
}

/// Transition frequencies of the six driven transitions.
pub fn prep_offsets(sys: &SpinSystem) -> Vec<f64> {
    (1..sys.dim() - 1)
        .map(|k| sys.transition_frequency(k))
        .collect()
}

/// Population statistics of the driven levels `1..d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrepQuality {
    pub populations: Vec<f64>,
    /// Variance of the driven-level populations.
    pub variance: f64,
    /// `(max − min) / (p₀ − mean)` over the driven levels.
    pub relative_spread: f64,
    /// Largest coherence relative to `p₀ − mean`.
    pub residual_coherence: f64,
}

pub fn prep_quality(rho: &DensityMatrix) -> PrepQuality {
    let dev = rho.deviation_populations();
    let rest = &dev[1..];
    let mean = rest.iter().sum::<f64>() / rest.len() as f64;
    let variance = rest.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / rest.len() as f64;
    let hi = rest.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = rest.iter().copied().fold(f64::INFINITY, f64::min);
    let signal = dev[0] - mean;
    let coherence = linalg::off_diagonal_residual(rho.deviation());
    PrepQuality {
        populations: rho.populations(),
        variance,
        relative_spread: (hi - lo) / signal.abs(),
        residual_coherence: coherence / signal.abs(),
    }
}

#[derive(Debug, Clone)]
pub struct PrepDesignResult {
    pub design: PrepPulseDesign,
    pub quality: PrepQuality,
    pub equilibrium_variance: f64,
    pub evaluations: usize,
}

/// Default duration: ten Rabi periods of the weakest transition driven at
/// the full budget, rounded up to whole cycles.
pub fn default_prep_duration(sys: &SpinSystem, budget: f64) -> Result<f64> {
    if !(budget > 0.0) {
        return Err(invalid("omega1_budget", "must be > 0"));
    }
    let tc = sys.cycle_time()?;
    let weakest = (1..sys.dim() - 1)
        .map(|k| sys.ops().ladder_element(k))
        .fold(f64::INFINITY, f64::min);
    let t = 10.0 * TAU / (budget * weakest);
    Ok((t / tc).ceil() * tc)
}

/// Amplitudes that turn the driven levels into an effective spin `S − 1/2`
/// rotated by `angle`: tone `j` scaled by the ratio of the effective and
/// actual ladder elements.
fn effective_rotation_seed(sys: &SpinSystem, angle: f64, duration: f64) -> Vec<f64> {
    let j = (sys.dim() - 2) as f64 / 2.0;
    (1..sys.dim() - 1)
        .map(|k| {
            let mj = j - (k - 1) as f64;
            let eff = (j * (j + 1.0) - mj * (mj - 1.0)).sqrt();
            angle / duration * eff / sys.ops().ladder_element(k)
        })
        .collect()
}

/// Amplitudes giving every driven transition the same bare Rabi frequency
/// `π/(2T)`.
fn equal_rabi_seed(sys: &SpinSystem, duration: f64) -> Vec<f64> {
    (1..sys.dim() - 1)
        .map(|k| FRAC_PI_2 / duration / sys.ops().ladder_element(k))
        .collect()
}

/// Multi-start Nelder–Mead over the six amplitudes, minimizing the variance
/// of the driven-level populations after the pulse acts on equilibrium.
pub fn design_prep_amplitudes(
    sys: &SpinSystem,
    duration: Option<f64>,
    budget: f64,
) -> Result<PrepDesignResult> {
    let duration = match duration {
        Some(t) => t,
        None => default_prep_duration(sys, budget)?,
    };
    if !(duration > 0.0) {
        return Err(invalid("duration", "must be > 0"));
    }
    let weakest = (1..sys.dim() - 1)
        .map(|k| sys.ops().ladder_element(k))
        .fold(f64::INFINITY, f64::min);
    if budget * weakest * duration < TAU {
        return Err(invalid(
            "duration",
            "must cover one Rabi period of every transition at the budget",
        ));
    }
    let eq = thermal_equilibrium_state(sys, DEFAULT_POLARIZATION)?;
    let eq_quality = prep_quality(&eq);

    let objective = |x: &[f64]| -> f64 {
        let amps: Vec<f64> = x.iter().map(|a| a.abs()).collect();
        let excess: f64 = amps.iter().map(|a| (a - budget).max(0.0) / budget).sum();
        let Ok(design) = PrepPulseDesign::new(sys, amps, duration) else {
            return f64::INFINITY;
        };
        match design.propagator(sys) {
            Ok(u) => prep_quality(&eq.evolve(&u)).variance / eq_quality.variance + excess,
            Err(_) => f64::INFINITY,
        }
    };

    let mut seeds = vec![equal_rabi_seed(sys, duration)];
    for turns in 0..3 {
        let seed = effective_rotation_seed(sys, FRAC_PI_2 + TAU * turns as f64, duration);
        if seed.iter().all(|&a| a <= budget) {
            seeds.push(seed);
        }
    }

    let opts = NelderMeadOptions {
        max_evals: 1500,
        f_tol: 1e-14,
        x_tol: 1e-9 * budget,
        f_target: OBJECTIVE_TARGET,
        initial_step: 0.02,
    };
    // Starts run in fixed-size parallel batches; later batches are skipped
    // once a start reaches the target, which keeps the result independent of
    // the thread count.
    let mut runs = Vec::new();
    for batch in seeds.chunks(START_BATCH) {
        let done: Vec<_> = batch
            .par_iter()
            .map(|seed| nelder_mead(objective, seed, &opts))
            .collect();
        runs.extend(done);
        if runs.iter().any(|r| r.value <= OBJECTIVE_TARGET) {
            break;
        }
    }
    let evaluations = runs.iter().map(|r| r.evals).sum();
    let best = runs
        .into_iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or_else(|| Error::Internal("no optimizer starts".into()))?;

    let design = PrepPulseDesign::new(sys, best.x.iter().map(|a| a.abs()).collect(), duration)?;
    let quality = prep_quality(&eq.evolve(&design.propagator(sys)?));
    if !(quality.relative_spread <= MAX_RELATIVE_SPREAD) {
        return Err(Error::OptimizationFailed(quality.relative_spread));
    }
    Ok(PrepDesignResult {
        design,
        quality,
        equilibrium_variance: eq_quality.variance,
        evaluations,
    })
}

/// Average of the prepared state over `steps` equally spaced prep phases.
/// Each phase conjugates the pulse by a Z rotation, so the average removes
/// every Zeeman coherence of order `p` with `p mod steps ≠ 0`.
pub fn prep_cycle_average(
    u: &CMatrix,
    rho: &DensityMatrix,
    sys: &SpinSystem,
    steps: usize,
) -> DensityMatrix {
    let n = sys.dim();
    let mut acc = DensityMatrix::maximally_mixed(n);
    for k in 0..steps {
        let phi = TAU * k as f64 / steps as f64;
        let rz = CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                num_complex::Complex64::from_polar(1.0, -phi * sys.s.m_at(i))
            } else {
                c(0.0)
            }
        });
        let u_phi = &rz * u * rz.adjoint();
        acc = acc.add_deviation(&rho.evolve(&u_phi));
    }
    acc.scaled_deviation(1.0 / steps as f64)
}

/// Linear-response peaks of the state prepared by `design`, read out through
/// the prep-phase cycle.
pub fn prepared_spectrum_peaks(
    design: &PrepPulseDesign,
    sys: &SpinSystem,
    eq: &DensityMatrix,
    flip: f64,
) -> Result<PeakAmplitudes> {
    let u = design.propagator(sys)?;
    let avg = prep_cycle_average(&u, eq, sys, PREP_CYCLE_STEPS);
    linear_response_peaks(&avg, sys, flip, 4)
}

#[cfg(test)]
mod tests {
    use super::*;

    const WQ: f64 = TAU * 1000.0;

    fn sys() -> SpinSystem {
        SpinSystem::cesium(WQ).unwrap()
    }

    #[test]
    fn equilibrium_is_diagonal_with_equal_steps() {
        let sys = sys();
        let eq = thermal_equilibrium_state(&sys, 1e-5).unwrap();
        let p = eq.populations();
        assert!((eq.trace() - 1.0).abs() < 1e-15);
        assert!(linalg::off_diagonal_residual(eq.deviation()) == 0.0);
        for w in p.windows(2) {
            assert!(((w[0] - w[1]) - (p[0] - p[1])).abs() < 1e-16);
        }
        assert!((p[0] - (1.0 + 1e-5) / 8.0).abs() < 1e-16);
        let mixed = thermal_equilibrium_state(&sys, 0.0).unwrap();
        assert_eq!(mixed, DensityMatrix::maximally_mixed(8));
        assert!(thermal_equilibrium_state(&sys, 1.0).is_err());
        assert!(thermal_equilibrium_state(&sys, -0.1).is_err());
    }

    #[test]
    fn equilibrium_linear_response_ratios() {
        let sys = sys();
        let eq = thermal_equilibrium_state(&sys, 1e-5).unwrap();
        let m = linear_response_peaks(&eq, &sys, 0.01, 4)
            .unwrap()
            .magnitudes();
        let want = [7.0, 12.0, 15.0, 16.0, 15.0, 12.0, 7.0];
        for k in 0..7 {
            assert!((m[k] / m[3] * 16.0 - want[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn ideal_map_leaves_one_line() {
        let sys = sys();
        let eq = thermal_equilibrium_state(&sys, 1e-5).unwrap();
        let pp = ideal_pseudopure_map(&eq).unwrap();
        assert!((pp.trace() - 1.0).abs() < 1e-15);
        let again = ideal_pseudopure_map(&pp).unwrap();
        assert!(linalg::max_abs(&(again.deviation() - pp.deviation())) < 1e-20);
        let d = pp.deviation_populations();
        // deviation is a positive multiple of |7/2⟩⟨7/2| minus its trace
        let bg = d[7];
        assert!(d[0] - bg > 0.0);
        assert!(d[1..].iter().all(|x| (x - bg).abs() < 1e-20));
        let m = linear_response_peaks(&pp, &sys, 0.01, 4)
            .unwrap()
            .magnitudes();
        assert!(m[0] > 0.0);
        // side lines enter only at second order in the tip angle
        assert!(m[1..].iter().all(|x| *x < 1e-3 * m[0]), "{m:?}");
    }

    #[test]
    fn ideal_map_rejects_coherences() {
        let sys = sys();
        let eq = thermal_equilibrium_state(&sys, 1e-5).unwrap();
        let tipped = eq.evolve(&crate::dynamics::ideal_rotation(sys.ops(), 0.1, 0.0));
        assert!(matches!(
            ideal_pseudopure_map(&tipped),
            Err(Error::NonDiagonal(_))
        ));
    }

    #[test]
    fn zero_amplitude_design_keeps_equilibrium_variance() {
        let sys = sys();
        let eq = thermal_equilibrium_state(&sys, 1e-5).unwrap();
        let design = PrepPulseDesign::new(&sys, vec![0.0; 6], 10.0 / 1000.0).unwrap();
        let after = eq.evolve(&design.propagator(&sys).unwrap());
        assert!((prep_quality(&after).variance - prep_quality(&eq).variance).abs() < 1e-30);
    }

    #[test]
    fn offsets_sit_on_driven_transitions() {
        let sys = sys();
        let o = prep_offsets(&sys);
        let want = [2.0, 1.0, 0.0, -1.0, -2.0, -3.0];
        for (a, b) in o.iter().zip(want) {
            assert!((a / WQ - b).abs() < 1e-12);
        }
    }

    #[test]
    fn effective_seed_equalizes_in_the_weak_limit() {
        let sys = sys();
        let t = 200.0 * sys.cycle_time().unwrap();
        let design =
            PrepPulseDesign::new(&sys, effective_rotation_seed(&sys, FRAC_PI_2, t), t).unwrap();
        let eq = thermal_equilibrium_state(&sys, 1e-5).unwrap();
        let q = prep_quality(&eq.evolve(&design.propagator(&sys).unwrap()));
        assert!(q.relative_spread < 0.02, "{}", q.relative_spread);
    }

    #[test]
    fn prep_cycle_removes_coherences_only() {
        let sys = sys();
        let eq = thermal_equilibrium_state(&sys, 1e-5).unwrap();
        let u = crate::dynamics::ideal_rotation(sys.ops(), 0.7, 0.0);
        let avg = prep_cycle_average(&u, &eq, &sys, PREP_CYCLE_STEPS);
        let direct = eq.evolve(&u);
        assert!(linalg::off_diagonal_residual(avg.deviation()) < 1e-20);
        for (a, b) in avg
            .deviation_populations()
            .iter()
            .zip(direct.deviation_populations())
        {
            assert!((a - b).abs() < 1e-20);
        }
    }

    #[test]
    fn phase_shifted_pulse_is_z_conjugate() {
        let sys = sys();
        let t = 20.0 * sys.cycle_time().unwrap();
        let design =
            PrepPulseDesign::new(&sys, effective_rotation_seed(&sys, FRAC_PI_2, t), t).unwrap();
        let u0 = rf_propagator(&design.pulse(&sys, 0.0), &sys).unwrap();
        let phi = 0.9;
        let u1 = rf_propagator(&design.pulse(&sys, phi), &sys).unwrap();
        let rz = crate::linalg::expm_hermitian(&sys.ops().sz, phi).unwrap();
        assert!(linalg::max_abs(&(&rz * u0 * rz.adjoint() - u1)) < 1e-9);
    }
}
