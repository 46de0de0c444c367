//! Experiment configuration, read from TOML.
//!
//! Frequencies are given in Hz (cycles per second) and converted to rad/s on
//! use. Every field has a default so an empty file is a valid hard-pulse
//! configuration.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::SpinSystem;
use crate::error::{Error, Result};
use crate::sequence::{PhaseCycle, RfStrength};
use crate::spin_ops::SpinQuantumNumber;

pub const CONFIG_SCHEMA: &str = "quadspin-config/1";
/// Overrides `output.dir` when set.
pub const OUTPUT_DIR_ENV: &str = "QUADSPIN_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub spin: SpinConfig,
    pub rf: RfConfig,
    pub acquisition: AcquisitionConfig,
    pub phase_cycle: PhaseCycleConfig,
    pub prep: PrepConfig,
    pub relaxation: RelaxationConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA.into(),
            spin: SpinConfig::default(),
            rf: RfConfig::default(),
            acquisition: AcquisitionConfig::default(),
            phase_cycle: PhaseCycleConfig::default(),
            prep: PrepConfig::default(),
            relaxation: RelaxationConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpinConfig {
    /// Twice the spin quantum number.
    pub two_s: u32,
    pub quad_coupling_hz: f64,
    /// Defaults to 10⁴ ω_q when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub larmor_frequency_hz: Option<f64>,
    pub frame_offset_hz: f64,
    /// ε of the equilibrium deviation `ε S_z/(d S)`.
    pub polarization: f64,
}

impl Default for SpinConfig {
    fn default() -> Self {
        Self {
            two_s: 7,
            quad_coupling_hz: 1000.0,
            larmor_frequency_hz: None,
            frame_offset_hz: 0.0,
            polarization: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseMode {
    Hard,
    Finite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delta {
    /// Calibrated for finite pulses, zero for hard pulses.
    Auto,
    Seconds(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DeltaRepr {
    Seconds(f64),
    Word(String),
}

impl Serialize for Delta {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Delta::Auto => DeltaRepr::Word("auto".into()),
            Delta::Seconds(v) => DeltaRepr::Seconds(*v),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Delta {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match DeltaRepr::deserialize(d)? {
            DeltaRepr::Seconds(v) => Ok(Delta::Seconds(v)),
            DeltaRepr::Word(w) if w == "auto" => Ok(Delta::Auto),
            DeltaRepr::Word(w) => Err(serde::de::Error::custom(format!(
                "delta must be \"auto\" or a number of seconds, got {w:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfConfig {
    pub mode: PulseMode,
    /// ω₁/ω_q for finite pulses.
    pub omega1_ratio: f64,
    pub delta: Delta,
    pub read_angle_deg: f64,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self {
            mode: PulseMode::Hard,
            omega1_ratio: 5.0,
            delta: Delta::Auto,
            read_angle_deg: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    /// Step-C window in cycles `t_c`.
    pub cycles_c: usize,
    /// Step-E window in cycles `t_c`.
    pub cycles_e: usize,
    pub samples_per_cycle: usize,
    /// Window of the long reference acquisitions, in cycles.
    pub long_window_cycles: usize,
    pub line_broadening_hz: f64,
    pub zero_fill: usize,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            cycles_c: 4,
            cycles_e: 4,
            samples_per_cycle: 16,
            long_window_cycles: 64,
            line_broadening_hz: 0.0,
            zero_fill: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseCycleConfig {
    /// Steps of φ3 − φ2.
    pub steps_c: usize,
    /// Steps of φ4 − φ2.
    pub steps_e: usize,
    /// φ1 = φ2, in degrees.
    pub base_phase_deg: f64,
}

impl Default for PhaseCycleConfig {
    fn default() -> Self {
        Self {
            steps_c: 8,
            steps_e: 8,
            base_phase_deg: -90.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrepMode {
    Ideal,
    Optimized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepConfig {
    pub mode: PrepMode,
    /// Largest tone amplitude, as a fraction of ω_q.
    pub budget_ratio: f64,
    /// Pulse length in cycles; defaults to ten Rabi periods at the budget.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_cycles: Option<f64>,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            mode: PrepMode::Ideal,
            budget_ratio: 0.1,
            duration_cycles: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaxationConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t2: Option<f64>,
}

impl RelaxationConfig {
    pub fn enabled(&self) -> bool {
        self.t1.is_some() || self.t2.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Sequential accumulation for bit-exact reruns.
    pub deterministic: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("quadspin-out"),
            deterministic: true,
        }
    }
}

fn field(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| field("toml", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(field("schema", format!("expected {CONFIG_SCHEMA:?}")));
        }
        if self.spin.two_s == 0 || self.spin.two_s.is_multiple_of(2) {
            return Err(field("spin.two_s", "must be odd (half-integer spin)"));
        }
        if !(self.spin.quad_coupling_hz > 0.0) || !self.spin.quad_coupling_hz.is_finite() {
            return Err(field("spin.quad_coupling_hz", "must be > 0"));
        }
        if !self.spin.frame_offset_hz.is_finite() {
            return Err(field("spin.frame_offset_hz", "must be finite"));
        }
        if let Some(f) = self.spin.larmor_frequency_hz {
            if !f.is_finite() {
                return Err(field("spin.larmor_frequency_hz", "must be finite"));
            }
        }
        if !(self.spin.polarization > 0.0 && self.spin.polarization < 1.0) {
            return Err(field("spin.polarization", "must satisfy 0 < eps < 1"));
        }
        if !(self.rf.omega1_ratio > 0.0) {
            return Err(field("rf.omega1_ratio", "must be > 0"));
        }
        if let Delta::Seconds(d) = self.rf.delta {
            let tc = 1.0 / self.spin.quad_coupling_hz;
            if !(0.0..tc).contains(&d) {
                return Err(field(
                    "rf.delta",
                    format!("must satisfy 0 <= delta < t_c = {tc:e} s"),
                ));
            }
        }
        if !(self.rf.read_angle_deg >= 0.0 && self.rf.read_angle_deg < 180.0) {
            return Err(field("rf.read_angle_deg", "must be in [0, 180)"));
        }
        let a = &self.acquisition;
        if a.cycles_c == 0 {
            return Err(field("acquisition.cycles_c", "must be >= 1"));
        }
        if a.cycles_e == 0 {
            return Err(field("acquisition.cycles_e", "must be >= 1"));
        }
        if a.samples_per_cycle < 2 * self.spin.two_s as usize {
            return Err(field(
                "acquisition.samples_per_cycle",
                "too few samples to resolve every line",
            ));
        }
        if a.long_window_cycles == 0 {
            return Err(field("acquisition.long_window_cycles", "must be >= 1"));
        }
        if !(a.line_broadening_hz >= 0.0) {
            return Err(field("acquisition.line_broadening_hz", "must be >= 0"));
        }
        if self.phase_cycle.steps_c == 0 {
            return Err(field("phase_cycle.steps_c", "must be >= 1"));
        }
        if self.phase_cycle.steps_e == 0 {
            return Err(field("phase_cycle.steps_e", "must be >= 1"));
        }
        if !self.phase_cycle.base_phase_deg.is_finite() {
            return Err(field("phase_cycle.base_phase_deg", "must be finite"));
        }
        if !(self.prep.budget_ratio > 0.0) {
            return Err(field("prep.budget_ratio", "must be > 0"));
        }
        if let Some(d) = self.prep.duration_cycles {
            if !(d > 0.0) {
                return Err(field("prep.duration_cycles", "must be > 0"));
            }
        }
        for (name, v) in [
            ("relaxation.t1", self.relaxation.t1),
            ("relaxation.t2", self.relaxation.t2),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(field(name, "must be > 0"));
                }
            }
        }
        Ok(())
    }

    pub fn omega_q(&self) -> f64 {
        TAU * self.spin.quad_coupling_hz
    }

    pub fn system(&self) -> Result<SpinSystem> {
        let wq = self.omega_q();
        let w0 = self.spin.larmor_frequency_hz.map_or(1e4 * wq, |f| TAU * f);
        SpinSystem::new(
            SpinQuantumNumber::new(self.spin.two_s)?,
            w0,
            wq,
            TAU * self.spin.frame_offset_hz,
        )
    }

    pub fn strength(&self) -> RfStrength {
        match self.rf.mode {
            PulseMode::Hard => RfStrength::Hard,
            PulseMode::Finite => RfStrength::Finite(self.rf.omega1_ratio * self.omega_q()),
        }
    }

    pub fn phase_cycle(&self) -> Result<PhaseCycle> {
        PhaseCycle::crossed(
            self.phase_cycle.base_phase_deg.to_radians(),
            self.phase_cycle.steps_c,
            self.phase_cycle.steps_e,
        )
    }

    /// `output.dir`, unless the environment overrides it.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output.dir.clone(),
        }
    }
}
