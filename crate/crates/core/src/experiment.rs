//! The complete measurement: references, preparation, the phase-cycled
//! sequence, and the population analysis.

use std::f64::consts::TAU;

use crate::acquisition::{acquire, peak_amplitudes, spectrum, Fid, PeakAmplitudes, Spectrum};
use crate::analysis::{
    compare_to_theory, normalize_by_equilibrium, populations_from_differences, reference_scale,
    reversal_fidelity, PopulationVector, TheoryComparison,
};
use crate::config::{Delta, ExperimentConfig, PrepMode};
use crate::dynamics::{
    ideal_rotation, rf_propagator, DensityMatrix, RelaxationParams, RfPulse, SpinSystem,
};
use crate::error::Result;
use crate::linalg;
use crate::prep::{
    self, design_prep_amplitudes, ideal_pseudopure_map, prep_cycle_average, prep_quality,
    thermal_equilibrium_state, PrepDesignResult, PREP_CYCLE_STEPS,
};
use crate::sequence::{
    build_experiment, calibrate_delta, composite_fidelity, run_phase_cycle, ExperimentPlan,
    PhaseCycleResult, PrepStep, RfStrength,
};
use crate::spin_ops::{projection_probabilities, Basis, HalfInteger};

pub const REPORT_SCHEMA: &str = "quadspin-report/1";

/// Reading pulse followed by an acquisition, outside the phase cycle.
fn read_out(
    rho: &DensityMatrix,
    sys: &SpinSystem,
    strength: RfStrength,
    angle: f64,
    cycles: usize,
    samples_per_cycle: usize,
) -> Result<Fid> {
    let u = match strength {
        RfStrength::Hard => ideal_rotation(sys.ops(), angle, 0.0),
        RfStrength::Finite(w1) => rf_propagator(&RfPulse::rectangular(angle, 0.0, w1)?, sys)?,
    };
    let dwell = sys.cycle_time()? / samples_per_cycle as f64;
    let (fid, _) = acquire(
        &rho.evolve(&u),
        sys,
        cycles * samples_per_cycle,
        dwell,
        0.0,
        None,
    )?;
    Ok(fid)
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub fid: Fid,
    pub spectrum: Spectrum,
    pub peaks: PeakAmplitudes,
}

impl Trace {
    fn new(fid: Fid, sys: &SpinSystem, cfg: &ExperimentConfig) -> Result<Self> {
        let spectrum = spectrum(
            &fid,
            cfg.acquisition.line_broadening_hz,
            Some(cfg.acquisition.zero_fill),
        )?;
        let peaks = peak_amplitudes(&fid, sys)?;
        Ok(Self {
            fid,
            spectrum,
            peaks,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub schema: &'static str,
    pub config: ExperimentConfig,
    pub config_echo: String,
    pub sys: SpinSystem,
    pub warnings: Vec<String>,
    /// δ actually used, seconds.
    pub delta: f64,
    /// Gate fidelity of the composite 90° pulse at that δ.
    pub composite_fidelity: f64,
    pub cyclicity_residual: f64,
    pub prep_design: Option<PrepDesignResult>,
    /// Relative spread of the driven-level populations of the prepared state.
    pub prep_spread: f64,
    pub eq_long: Trace,
    pub pp_long: Trace,
    pub eq_short: Trace,
    pub pp_short: Trace,
    /// Step C, accumulated over the cycle and divided by the member count.
    pub step_c: Trace,
    /// Step E, likewise.
    pub step_e: Trace,
    pub populations: PopulationVector,
    pub theory: PopulationVector,
    pub comparison: TheoryComparison,
    pub max_imaginary_ratio: f64,
    pub reversal_fidelity: f64,
    /// Fraction of step-E peak energy outside the 7/2 ↔ 5/2 line.
    pub unwanted_fraction: f64,
    /// `max |fid_C − fid(Δ_X-projected state)|`, relative to the fid scale.
    pub projection_residual: f64,
    pub member_count: usize,
    pub cycle: PhaseCycleResult,
}

/// Runs the experiment described by `cfg`.
/// Step-E unwanted-peak fraction above which a relaxation warning is raised.
pub const UNWANTED_PEAK_FLAG: f64 = 1e-2;

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let strength = cfg.strength();
    let read_angle = cfg.rf.read_angle_deg.to_radians();
    let spc = cfg.acquisition.samples_per_cycle;
    let mut warnings = Vec::new();
    if sys.high_field_marginal() {
        warnings.push("larmor frequency below 100 omega_q: high-field picture is marginal".into());
    }

    let eq = thermal_equilibrium_state(&sys, cfg.spin.polarization)?;
    let (prep_step, prepared, prep_design) = match cfg.prep.mode {
        PrepMode::Ideal => (PrepStep::Ideal, ideal_pseudopure_map(&eq)?, None),
        PrepMode::Optimized => {
            let tc = sys.cycle_time()?;
            let budget = cfg.prep.budget_ratio * sys.quad_coupling;
            let design =
                design_prep_amplitudes(&sys, cfg.prep.duration_cycles.map(|n| n * tc), budget)?;
            let u = design.design.propagator(&sys)?;
            let base = cfg.phase_cycle.base_phase_deg.to_radians();
            let u_base = crate::sequence::phase_shifted(&u, base, &sys);
            let state = eq.evolve(&u_base);
            (PrepStep::Pulse(u), state, Some(design))
        }
    };
    // Reference spectrum of the prepared state, read through the prep cycle.
    let pp_reference = match &prep_step {
        PrepStep::Pulse(u) => prep_cycle_average(u, &eq, &sys, PREP_CYCLE_STEPS),
        _ => prepared.clone(),
    };
    let prep_spread = prep_quality(&pp_reference).relative_spread;

    let delta = match (cfg.rf.delta, strength) {
        (Delta::Seconds(d), _) => d,
        (Delta::Auto, RfStrength::Hard) => 0.0,
        (Delta::Auto, RfStrength::Finite(w1)) => calibrate_delta(w1, &sys)?.delta,
    };
    let base = cfg.phase_cycle.base_phase_deg.to_radians();
    let fidelity = composite_fidelity(base, delta, strength, &sys)?;

    let relaxation = if cfg.relaxation.enabled() {
        Some(RelaxationParams::new(
            cfg.relaxation.t1,
            cfg.relaxation.t2,
            eq.clone(),
        )?)
    } else {
        None
    };

    let plan = ExperimentPlan {
        sys: sys.clone(),
        strength,
        delta,
        read_angle,
        cycles_c: cfg.acquisition.cycles_c,
        cycles_e: cfg.acquisition.cycles_e,
        samples_per_cycle: spc,
        prep: prep_step,
        cycle: cfg.phase_cycle()?,
    };
    let programs = build_experiment(&plan)?;
    let cycle = run_phase_cycle(
        &eq,
        &programs,
        &sys,
        relaxation.as_ref(),
        cfg.output.deterministic,
    )?;

    let long = cfg.acquisition.long_window_cycles;
    let eq_long = Trace::new(
        read_out(&eq, &sys, strength, read_angle, long, spc)?,
        &sys,
        cfg,
    )?;
    let pp_long = Trace::new(
        read_out(&pp_reference, &sys, strength, read_angle, long, spc)?,
        &sys,
        cfg,
    )?;
    let eq_short = Trace::new(
        read_out(
            &eq,
            &sys,
            strength,
            read_angle,
            cfg.acquisition.cycles_c,
            spc,
        )?,
        &sys,
        cfg,
    )?;
    let pp_short = Trace::new(
        read_out(
            &pp_reference,
            &sys,
            strength,
            read_angle,
            cfg.acquisition.cycles_c,
            spc,
        )?,
        &sys,
        cfg,
    )?;
    let step_c = Trace::new(cycle.mean_fid_c(), &sys, cfg)?;
    let step_e = Trace::new(cycle.mean_fid_e(), &sys, cfg)?;

    let scale = reference_scale(&pp_short.peaks, &eq_short.peaks, 0)?;
    let diffs = normalize_by_equilibrium(&step_c.peaks, &eq_short.peaks, scale)?;
    let populations = populations_from_differences(&diffs, Basis::X);
    let theory = projection_probabilities(sys.s, HalfInteger::from_twice(sys.s.two_s() as i32))?;
    let comparison = compare_to_theory(&populations, &theory)?;

    let reversal = reversal_fidelity(&cycle.recovered_state, &prepared)?;
    let unwanted = step_e.peaks.unwanted_fraction(0);
    if relaxation.is_some() && unwanted > UNWANTED_PEAK_FLAG {
        warnings.push(format!(
            "unwanted step-E peaks: fraction {unwanted:.3e} with relaxation enabled"
        ));
    }

    // Oracle for the projection: the prepared state with X coherences removed,
    // sent through the same pulses once.
    let projected = projected_step_c_fid(&plan, &prepared)?;
    let projection_residual =
        step_c.fid.max_deviation(&projected) / projected.max_abs().max(f64::MIN_POSITIVE);

    let tc = sys.cycle_time()?;
    let u_tc =
        crate::dynamics::free_propagator(&crate::dynamics::rotating_frame_hamiltonian(&sys), tc)?;
    let phase = u_tc[(0, 0)];
    let n = sys.dim();
    let cyclicity_residual = linalg::max_abs(&(u_tc - linalg::CMatrix::identity(n, n) * phase));

    Ok(RunReport {
        schema: REPORT_SCHEMA,
        config: cfg.clone(),
        config_echo: cfg.to_toml_string()?,
        sys,
        warnings,
        delta,
        composite_fidelity: fidelity,
        cyclicity_residual,
        prep_design,
        prep_spread,
        eq_long,
        pp_long,
        eq_short,
        pp_short,
        step_c,
        step_e,
        populations,
        theory,
        max_imaginary_ratio: diffs.max_imaginary(),
        comparison,
        reversal_fidelity: reversal,
        unwanted_fraction: unwanted,
        projection_residual,
        member_count: cycle.member_count(),
        cycle,
    })
}

/// Step-C fid of `Δ_Z(B ρ B†)`, B being the first composite pulse; for an
/// ideal B this is the X-basis projection of `ρ`.
pub fn projected_step_c_fid(plan: &ExperimentPlan, prepared: &DensityMatrix) -> Result<Fid> {
    let base = plan.cycle.members()[0].phi2;
    let b = crate::sequence::elements_unitary(
        &crate::sequence::composite_90(base, plan.delta, plan.strength, &plan.sys)?,
        &plan.sys,
    )?;
    let after_b = prepared.evolve(&b).dephased();
    read_out(
        &after_b,
        &plan.sys,
        plan.strength,
        plan.read_angle,
        plan.cycles_c,
        plan.samples_per_cycle,
    )
}

/// One row of a parameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub reversal_fidelity: f64,
    pub population_error: f64,
    pub composite_fidelity: f64,
    pub unwanted_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Acquisition multiple n, applied to both windows.
    Cycles,
    Omega1Ratio,
    T2,
    ReadAngle,
}

impl SweepParam {
    pub const NAMES: [&'static str; 4] = ["n", "omega1_ratio", "t2", "read_angle"];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "n" => Ok(Self::Cycles),
            "omega1_ratio" => Ok(Self::Omega1Ratio),
            "t2" => Ok(Self::T2),
            "read_angle" => Ok(Self::ReadAngle),
            other => Err(crate::error::invalid(
                "param",
                format!(
                    "unknown sweep parameter {other:?}; expected one of {:?}",
                    Self::NAMES
                ),
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Cycles => "n",
            Self::Omega1Ratio => "omega1_ratio",
            Self::T2 => "t2",
            Self::ReadAngle => "read_angle",
        }
    }

    pub fn apply(self, cfg: &mut ExperimentConfig, value: f64) -> Result<()> {
        match self {
            Self::Cycles => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(crate::error::invalid("n", "must be a positive integer"));
                }
                cfg.acquisition.cycles_c = value as usize;
                cfg.acquisition.cycles_e = value as usize;
            }
            Self::Omega1Ratio => {
                cfg.rf.mode = crate::config::PulseMode::Finite;
                cfg.rf.omega1_ratio = value;
            }
            Self::T2 => cfg.relaxation.t2 = Some(value),
            Self::ReadAngle => cfg.rf.read_angle_deg = value,
        }
        cfg.validate()
    }
}

pub fn run_sweep(
    cfg: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            param.apply(&mut c, v)?;
            let r = run_experiment(&c)?;
            Ok(SweepRow {
                value: v,
                reversal_fidelity: r.reversal_fidelity,
                population_error: r.comparison.max_abs_error,
                composite_fidelity: r.composite_fidelity,
                unwanted_fraction: r.unwanted_fraction,
            })
        })
        .collect()
}

/// Output of the `prep design` subcommand.
#[derive(Debug, Clone)]
pub struct PrepReport {
    pub result: PrepDesignResult,
    pub peaks: PeakAmplitudes,
    /// Largest non-target peak relative to the target peak.
    pub max_side_peak: f64,
}

pub fn run_prep_design(cfg: &ExperimentConfig) -> Result<PrepReport> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let tc = sys.cycle_time()?;
    let budget = cfg.prep.budget_ratio * sys.quad_coupling;
    let result = design_prep_amplitudes(&sys, cfg.prep.duration_cycles.map(|n| n * tc), budget)?;
    let eq = thermal_equilibrium_state(&sys, cfg.spin.polarization)?;
    let peaks = prep::prepared_spectrum_peaks(
        &result.design,
        &sys,
        &eq,
        cfg.rf.read_angle_deg.to_radians(),
    )?;
    let m = peaks.magnitudes();
    let max_side_peak = m[1..].iter().fold(0.0_f64, |a, &b| a.max(b)) / m[0];
    Ok(PrepReport {
        result,
        peaks,
        max_side_peak,
    })
}

/// Frequency of transition `k` in Hz.
pub fn line_frequency_hz(sys: &SpinSystem, k: usize) -> f64 {
    sys.transition_frequency(k) / TAU
}
