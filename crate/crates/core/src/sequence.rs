//! The reversible-measurement pulse sequence.
//!
//! One scan runs five steps: (A) pseudopure preparation, (B) a composite 90°
//! pulse, (C) a small-angle reading pulse and first acquisition, (D) the
//! composite pulse with opposite phase, and (E) a second reading pulse and
//! acquisition. Cycling the reading-pulse phases against the fixed phase of
//! B and summing the scans projects the state after B onto its populations,
//! i.e. onto the X-basis populations of the prepared state.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use rayon::prelude::*;

use crate::acquisition::{acquire, check_window, Fid};
use crate::dynamics::{
    apply_relaxation, ideal_rotation, rf_propagator, DensityMatrix, RelaxationParams, RfPulse,
    SpinSystem,
};
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, c, CMatrix};
use crate::optim::golden_section;
use crate::prep::ideal_pseudopure_map;
use crate::spin_ops::rotation_to_x_basis;

/// Phase of the first composite pulse. Rotating about −Y maps the X
/// eigenbasis onto the Z eigenbasis in level order.
pub const DEFAULT_BASE_PHASE: f64 = -FRAC_PI_2;
pub const DEFAULT_READ_ANGLE_DEG: f64 = 5.0;
pub const DEFAULT_CYCLE_STEPS: usize = 8;
pub const DEFAULT_ACQUISITION_CYCLES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum SequenceElement {
    Pulse(RfPulse),
    /// Instantaneous rotation `exp(−iθ(S_X cos φ + S_Y sin φ))`.
    IdealRotation {
        angle: f64,
        phase: f64,
    },
    Delay(f64),
    Acquire {
        n_samples: usize,
        dwell: f64,
        receiver_phase: f64,
    },
    /// The idealized population-equalizing preparation.
    PseudopureMap,
    /// A precomputed propagator, e.g. the shaped prep pulse.
    Unitary(CMatrix),
    /// Records the current state in [`ScanResult::marks`].
    Mark,
}

impl SequenceElement {
    pub fn validate(&self) -> Result<()> {
        match self {
            SequenceElement::Pulse(p) => p.validate(),
            SequenceElement::Delay(t) if !(*t >= 0.0) => Err(invalid("delay", "must be >= 0")),
            SequenceElement::Acquire { n_samples: 0, .. } => {
                Err(invalid("n_samples", "must be >= 1"))
            }
            SequenceElement::Acquire { dwell, .. } if !(*dwell > 0.0) => {
                Err(invalid("dwell", "must be > 0"))
            }
            _ => Ok(()),
        }
    }
}

/// RF strength used for composite and reading pulses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RfStrength {
    /// Instantaneous rotations.
    Hard,
    /// Rectangular pulses with this ω₁ (rad/s).
    Finite(f64),
}

impl RfStrength {
    fn pulse(self, angle: f64, phase: f64) -> Result<SequenceElement> {
        match self {
            RfStrength::Hard => Ok(SequenceElement::IdealRotation { angle, phase }),
            RfStrength::Finite(w1) => Ok(SequenceElement::Pulse(RfPulse::rectangular(
                angle, phase, w1,
            )?)),
        }
    }

    /// Duration of a 45° pulse; zero for hard pulses.
    pub fn quarter_pulse_duration(self) -> f64 {
        match self {
            RfStrength::Hard => 0.0,
            RfStrength::Finite(w1) => FRAC_PI_4 / w1,
        }
    }
}

/// `[45°(φ), delay t_c − δ, 45°(φ)]`. Without quadrupolar coupling the delay
/// is dropped.
pub fn composite_90(
    phase: f64,
    delta: f64,
    strength: RfStrength,
    sys: &SpinSystem,
) -> Result<Vec<SequenceElement>> {
    if !(delta >= 0.0) {
        return Err(invalid("delta", "must be >= 0"));
    }
    let delay = if sys.quad_coupling > 0.0 {
        let tc = sys.cycle_time()?;
        if delta >= tc {
            return Err(invalid("delta", format!("must be < t_c = {tc:e} s")));
        }
        tc - delta
    } else {
        0.0
    };
    Ok(vec![
        strength.pulse(FRAC_PI_4, phase)?,
        SequenceElement::Delay(delay),
        strength.pulse(FRAC_PI_4, phase)?,
    ])
}

/// Net unitary of a list of coherent elements.
pub fn elements_unitary(elements: &[SequenceElement], sys: &SpinSystem) -> Result<CMatrix> {
    let n = sys.dim();
    let energies = sys.energies();
    let mut u = CMatrix::identity(n, n);
    for el in elements {
        let step = match el {
            SequenceElement::Pulse(p) => rf_propagator(p, sys)?,
            SequenceElement::IdealRotation { angle, phase } => {
                ideal_rotation(sys.ops(), *angle, *phase)
            }
            SequenceElement::Delay(t) => CMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    num_complex::Complex64::from_polar(1.0, -energies[i] * t)
                } else {
                    c(0.0)
                }
            }),
            SequenceElement::Unitary(m) => m.clone(),
            other => return Err(invalid("elements", format!("{other:?} has no unitary"))),
        };
        u = step * u;
    }
    Ok(u)
}

pub fn composite_fidelity(
    phase: f64,
    delta: f64,
    strength: RfStrength,
    sys: &SpinSystem,
) -> Result<f64> {
    let u = elements_unitary(&composite_90(phase, delta, strength, sys)?, sys)?;
    Ok(linalg::gate_fidelity(
        &u,
        &ideal_rotation(sys.ops(), FRAC_PI_2, phase),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub delta: f64,
    pub fidelity: f64,
}

const CALIBRATION_GRID: usize = 256;

/// δ maximizing the composite-pulse gate fidelity: a grid over `[0, t_c)`
/// refined by golden-section search around the best grid point.
pub fn calibrate_delta(omega1: f64, sys: &SpinSystem) -> Result<Calibration> {
    if !(omega1 > 0.0) {
        return Err(invalid("omega1", "must be > 0"));
    }
    let strength = RfStrength::Finite(omega1);
    if sys.quad_coupling <= 0.0 {
        return Ok(Calibration {
            delta: 0.0,
            fidelity: composite_fidelity(0.0, 0.0, strength, sys)?,
        });
    }
    let tc = sys.cycle_time()?;
    let step = tc / CALIBRATION_GRID as f64;
    let grid: Vec<f64> = (0..CALIBRATION_GRID)
        .map(|k| composite_fidelity(0.0, k as f64 * step, strength, sys))
        .collect::<Result<_>>()?;
    let best = grid
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let lo = (best as f64 - 1.0).max(0.0) * step;
    let hi = ((best as f64 + 1.0) * step).min(tc * (1.0 - 1e-12));
    let (delta, neg) = golden_section(
        |d| -composite_fidelity(0.0, d, strength, sys).unwrap_or(0.0),
        lo,
        hi,
        1e-9 * tc,
    );
    let (delta, fidelity) = if -neg >= grid[best] {
        (delta, -neg)
    } else {
        (best as f64 * step, grid[best])
    };
    if fidelity < 0.9 {
        return Err(Error::CalibrationFailed(fidelity));
    }
    Ok(Calibration { delta, fidelity })
}

/// Phases of one phase-cycle member: prep (φ1), composite B (φ2), reading
/// pulses C and E (φ3, φ4). Step D uses φ2 + π. Receivers follow the
/// reading pulses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseMember {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
    pub phi4: f64,
}

impl PhaseMember {
    pub fn uniform(base: f64) -> Self {
        Self {
            phi1: base,
            phi2: base,
            phi3: base,
            phi4: base,
        }
    }

    pub fn receiver_c(&self) -> f64 {
        self.phi3
    }

    pub fn receiver_e(&self) -> f64 {
        self.phi4
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCycle {
    members: Vec<PhaseMember>,
}

impl PhaseCycle {
    pub fn new(members: Vec<PhaseMember>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyPhaseCycle);
        }
        Ok(Self { members })
    }

    /// `steps_c × steps_e` members: φ3 − φ2 and φ4 − φ2 each stepped through
    /// `2πk/steps`, with φ1 = φ2 = `base`.
    pub fn crossed(base: f64, steps_c: usize, steps_e: usize) -> Result<Self> {
        let mut members = Vec::with_capacity(steps_c * steps_e);
        for i in 0..steps_c {
            for j in 0..steps_e {
                members.push(PhaseMember {
                    phi1: base,
                    phi2: base,
                    phi3: base + TAU * i as f64 / steps_c as f64,
                    phi4: base + TAU * j as f64 / steps_e as f64,
                });
            }
        }
        Self::new(members)
    }

    /// The 8 × 8 cycle.
    pub fn standard() -> Self {
        Self::crossed(DEFAULT_BASE_PHASE, DEFAULT_CYCLE_STEPS, DEFAULT_CYCLE_STEPS)
            .expect("non-empty by construction")
    }

    pub fn single(base: f64) -> Self {
        Self {
            members: vec![PhaseMember::uniform(base)],
        }
    }

    pub fn members(&self) -> &[PhaseMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// How step A is realized.
#[derive(Debug, Clone, PartialEq)]
pub enum PrepStep {
    Ideal,
    /// Shaped-pulse propagator at zero phase; each member rotates it to φ1.
    Pulse(CMatrix),
    /// Skip step A (the input state is used as is).
    None,
}

/// Everything needed to turn the phase cycle into element lists.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub sys: SpinSystem,
    pub strength: RfStrength,
    pub delta: f64,
    pub read_angle: f64,
    pub cycles_c: usize,
    pub cycles_e: usize,
    pub samples_per_cycle: usize,
    pub prep: PrepStep,
    pub cycle: PhaseCycle,
}

impl ExperimentPlan {
    pub fn dwell(&self) -> Result<f64> {
        Ok(self.sys.cycle_time()? / self.samples_per_cycle as f64)
    }
}

#[derive(Debug, Clone)]
pub struct MemberProgram {
    pub member: PhaseMember,
    pub elements: Vec<SequenceElement>,
}

/// `exp(−iφS_z) U exp(iφS_z)`.
pub fn phase_shifted(u: &CMatrix, phi: f64, sys: &SpinSystem) -> CMatrix {
    let n = sys.dim();
    let rz = CMatrix::from_fn(n, n, |i, j| {
        if i == j {
            num_complex::Complex64::from_polar(1.0, -phi * sys.s.m_at(i))
        } else {
            c(0.0)
        }
    });
    &rz * u * rz.adjoint()
}

/// Steps A–E for every member. A [`SequenceElement::Mark`] after step D
/// records the recovered state before the second reading pulse.
pub fn build_experiment(plan: &ExperimentPlan) -> Result<Vec<MemberProgram>> {
    if plan.cycles_c == 0 || plan.cycles_e == 0 {
        return Err(invalid("acquisition_cycles", "must be >= 1"));
    }
    if plan.samples_per_cycle == 0 {
        return Err(invalid("samples_per_cycle", "must be >= 1"));
    }
    let dwell = plan.dwell()?;
    for cycles in [plan.cycles_c, plan.cycles_e] {
        check_window(&plan.sys, (cycles * plan.samples_per_cycle) as f64 * dwell)?;
    }
    plan.cycle
        .members()
        .iter()
        .map(|m| {
            let mut el = Vec::new();
            match &plan.prep {
                PrepStep::Ideal => el.push(SequenceElement::PseudopureMap),
                PrepStep::Pulse(u) => el.push(SequenceElement::Unitary(phase_shifted(
                    u, m.phi1, &plan.sys,
                ))),
                PrepStep::None => {}
            }
            el.extend(composite_90(m.phi2, plan.delta, plan.strength, &plan.sys)?);
            el.push(plan.strength.pulse(plan.read_angle, m.phi3)?);
            el.push(SequenceElement::Acquire {
                n_samples: plan.cycles_c * plan.samples_per_cycle,
                dwell,
                receiver_phase: m.receiver_c(),
            });
            el.extend(composite_90(
                m.phi2 + PI,
                plan.delta,
                plan.strength,
                &plan.sys,
            )?);
            el.push(SequenceElement::Mark);
            el.push(plan.strength.pulse(plan.read_angle, m.phi4)?);
            el.push(SequenceElement::Acquire {
                n_samples: plan.cycles_e * plan.samples_per_cycle,
                dwell,
                receiver_phase: m.receiver_e(),
            });
            Ok(MemberProgram {
                member: *m,
                elements: el,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub fids: Vec<Fid>,
    pub marks: Vec<DensityMatrix>,
    pub final_state: DensityMatrix,
}

impl ScanResult {
    /// First acquisition (step C).
    pub fn fid_c(&self) -> Option<&Fid> {
        self.fids.first()
    }

    /// Second acquisition (step E).
    pub fn fid_e(&self) -> Option<&Fid> {
        self.fids.get(1)
    }
}

/// Propagates one scan. Relaxation, when given, acts during delays and
/// acquisitions only.
pub fn run_scan(
    rho0: &DensityMatrix,
    elements: &[SequenceElement],
    sys: &SpinSystem,
    relaxation: Option<&RelaxationParams>,
) -> Result<ScanResult> {
    let relax = relaxation.filter(|r| r.enabled());
    let energies = sys.energies();
    let mut rho = rho0.clone();
    let mut fids = Vec::new();
    let mut marks = Vec::new();
    for el in elements {
        el.validate()?;
        rho = match el {
            SequenceElement::Pulse(p) => rho.evolve(&rf_propagator(p, sys)?),
            SequenceElement::IdealRotation { angle, phase } => {
                rho.evolve(&ideal_rotation(sys.ops(), *angle, *phase))
            }
            SequenceElement::Delay(t) => {
                let next = rho.evolve_diagonal(&energies, *t);
                match relax {
                    Some(r) => apply_relaxation(&next, *t, r)?,
                    None => next,
                }
            }
            SequenceElement::Acquire {
                n_samples,
                dwell,
                receiver_phase,
            } => {
                let (fid, next) = acquire(&rho, sys, *n_samples, *dwell, *receiver_phase, relax)?;
                fids.push(fid);
                next
            }
            SequenceElement::PseudopureMap => ideal_pseudopure_map(&rho)?,
            SequenceElement::Unitary(u) => rho.evolve(u),
            SequenceElement::Mark => {
                marks.push(rho.clone());
                rho
            }
        };
        let scale = linalg::max_abs(rho.deviation()).max(f64::MIN_POSITIVE);
        let herm = rho.hermiticity_residual();
        if herm > 1e-9 * scale {
            return Err(Error::Internal(format!(
                "state lost Hermiticity ({herm:.3e}) after {el:?}"
            )));
        }
    }
    Ok(ScanResult {
        fids,
        marks,
        final_state: rho,
    })
}

#[derive(Debug, Clone)]
pub struct PhaseCycleResult {
    /// Sum of the step-C fids over members.
    pub fid_c: Fid,
    /// Sum of the step-E fids over members.
    pub fid_e: Fid,
    /// Member average of the final states.
    pub final_state: DensityMatrix,
    /// Member average of the state recorded after step D.
    pub recovered_state: DensityMatrix,
    pub members: Vec<ScanResult>,
}

impl PhaseCycleResult {
    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    /// Step-C fid divided by the member count.
    pub fn mean_fid_c(&self) -> Fid {
        self.fid_c.scaled(1.0 / self.members.len() as f64)
    }

    pub fn mean_fid_e(&self) -> Fid {
        self.fid_e.scaled(1.0 / self.members.len() as f64)
    }
}

/// Runs every member and accumulates the results. Members may run in
/// parallel; they are always summed in cycle order, and `deterministic`
/// additionally forces sequential evaluation.
pub fn run_phase_cycle(
    rho0: &DensityMatrix,
    programs: &[MemberProgram],
    sys: &SpinSystem,
    relaxation: Option<&RelaxationParams>,
    deterministic: bool,
) -> Result<PhaseCycleResult> {
    if programs.is_empty() {
        return Err(Error::EmptyPhaseCycle);
    }
    let run = |p: &MemberProgram| run_scan(rho0, &p.elements, sys, relaxation);
    let members: Vec<ScanResult> = if deterministic {
        programs.iter().map(run).collect::<Result<_>>()?
    } else {
        programs.par_iter().map(run).collect::<Result<_>>()?
    };
    accumulate(members)
}

/// Sums fids and averages states over member results, in the given order.
pub fn accumulate(members: Vec<ScanResult>) -> Result<PhaseCycleResult> {
    let first = members.first().ok_or(Error::EmptyPhaseCycle)?;
    let (Some(c0), Some(e0)) = (first.fid_c(), first.fid_e()) else {
        return Err(invalid("elements", "each member needs two acquisitions"));
    };
    let mut fid_c = c0.scaled(0.0);
    let mut fid_e = e0.scaled(0.0);
    let n = first.final_state.dim();
    let mut final_sum = DensityMatrix::maximally_mixed(n);
    let mut recovered_sum = DensityMatrix::maximally_mixed(n);
    for m in &members {
        fid_c.accumulate(
            m.fid_c()
                .ok_or_else(|| invalid("elements", "missing step-C acquisition"))?,
        )?;
        fid_e.accumulate(
            m.fid_e()
                .ok_or_else(|| invalid("elements", "missing step-E acquisition"))?,
        )?;
        final_sum = final_sum.add_deviation(&m.final_state);
        let mark = m.marks.first().unwrap_or(&m.final_state);
        recovered_sum = recovered_sum.add_deviation(mark);
    }
    let k = 1.0 / members.len() as f64;
    Ok(PhaseCycleResult {
        fid_c,
        fid_e,
        final_state: final_sum.scaled_deviation(k),
        recovered_state: recovered_sum.scaled_deviation(k),
        members,
    })
}

/// `Δ_X(ρ)`: drops every coherence between `S_X` eigenstates.
pub fn x_dephased(rho: &DensityMatrix, sys: &SpinSystem) -> Result<DensityMatrix> {
    let u = rotation_to_x_basis(sys.s);
    let in_x = linalg::conjugate(&u.adjoint(), rho.deviation());
    DensityMatrix::from_deviation(linalg::conjugate(&u, &linalg::dephase(&in_x)))
}
