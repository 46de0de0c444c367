//! Signal recording, spectra and peak extraction.
//!
//! The recorded signal is `s(t) = Tr(ρ(t) S₊) e^{−iφ_rx}`. The coherence
//! between levels `m` and `m − 1` then oscillates as `e^{+iω t}` with
//! `ω = Δ + ω_q(m − 1/2)`, so lines from transitions with `m > 0` sit at
//! positive frequency.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dynamics::{apply_relaxation, DensityMatrix, RelaxationParams, SpinSystem};
use crate::error::{invalid, Error, Result};

/// Default number of samples per `t_c`.
pub const SAMPLES_PER_CYCLE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Fid {
    pub samples: Vec<Complex64>,
    pub dwell: f64,
    pub start_time: f64,
}

impl Fid {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn window(&self) -> f64 {
        self.samples.len() as f64 * self.dwell
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |k| k as f64 * self.dwell)
    }

    /// Elementwise sum; both fids must share length and dwell.
    pub fn accumulate(&mut self, other: &Fid) -> Result<()> {
        if self.samples.len() != other.samples.len() {
            return Err(Error::DimensionMismatch {
                expected: self.samples.len(),
                got: other.samples.len(),
            });
        }
        if (self.dwell - other.dwell).abs() > 1e-12 * self.dwell {
            return Err(invalid("dwell", "accumulated fids must share a dwell"));
        }
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            *a += b;
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Fid {
        Fid {
            samples: self.samples.iter().map(|z| z * factor).collect(),
            ..self.clone()
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |a, z| a.max(z.norm()))
    }

    /// `max_k |a_k − b_k|`.
    pub fn max_deviation(&self, other: &Fid) -> f64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .fold(0.0_f64, |a, (x, y)| a.max((x - y).norm()))
            .max(if self.len() == other.len() {
                0.0
            } else {
                f64::INFINITY
            })
    }

    /// Columns `time_s,real,imag`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,real,imag\n");
        for (t, z) in self.times().zip(&self.samples) {
            let _ = writeln!(out, "{t:.12e},{:.12e},{:.12e}", z.re, z.im);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Ascending frequencies in Hz.
    pub frequencies: Vec<f64>,
    pub values: Vec<Complex64>,
    /// Grid spacing `1/(N·dwell)` in Hz.
    pub spacing: f64,
}

impl Spectrum {
    /// Columns `freq_hz,real,imag`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,real,imag\n");
        for (f, z) in self.frequencies.iter().zip(&self.values) {
            let _ = writeln!(out, "{f:.12e},{:.12e},{:.12e}", z.re, z.im);
        }
        out
    }

    /// Local maxima of `|S(f)|` above `threshold` times the global maximum.
    pub fn peak_count(&self, threshold: f64) -> usize {
        let mags: Vec<f64> = self.values.iter().map(|z| z.norm()).collect();
        let top = mags.iter().fold(0.0_f64, |a, &b| a.max(b));
        (1..mags.len().saturating_sub(1))
            .filter(|&i| {
                mags[i] > mags[i - 1] && mags[i] >= mags[i + 1] && mags[i] > threshold * top
            })
            .count()
    }

    /// Magnitude at the grid point nearest `freq_hz`.
    pub fn magnitude_near(&self, freq_hz: f64) -> f64 {
        let idx = self
            .frequencies
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - freq_hz).abs().total_cmp(&(b.1 - freq_hz).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.values.get(idx).map_or(0.0, |z| z.norm())
    }
}

/// Complex line amplitudes in transition order: index 0 is the
/// `m = +S ↔ +S−1` line.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakAmplitudes {
    pub values: Vec<Complex64>,
}

impl PeakAmplitudes {
    pub fn new(values: Vec<Complex64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm()).collect()
    }

    /// Fraction of `Σ|a_k|²` outside line `target`.
    pub fn unwanted_fraction(&self, target: usize) -> f64 {
        let total: f64 = self.values.iter().map(|z| z.norm_sqr()).sum();
        if total == 0.0 {
            return 0.0;
        }
        1.0 - self.values[target].norm_sqr() / total
    }

    pub fn to_csv(&self, sys: &SpinSystem) -> String {
        let mut out = String::from("transition,upper_m,freq_hz,real,imag,magnitude\n");
        for (k, z) in self.values.iter().enumerate() {
            let f = sys.transition_frequency(k) / TAU;
            let m = crate::spin_ops::HalfInteger::from_twice(sys.s.two_m_at(k));
            let _ = writeln!(
                out,
                "{k},{m},{f:.9e},{:.12e},{:.12e},{:.12e}",
                z.re,
                z.im,
                z.norm()
            );
        }
        out
    }
}

/// Checks that `window` is a whole number of cycles. Without quadrupolar
/// coupling there is no cycle and any window is accepted.
pub fn check_window(sys: &SpinSystem, window: f64) -> Result<()> {
    if sys.quad_coupling <= 0.0 {
        return Ok(());
    }
    let tc = sys.cycle_time()?;
    let cycles = window / tc;
    if (cycles - cycles.round()).abs() > 1e-9 * cycles.max(1.0) {
        return Err(Error::WindowNotCycleMultiple { window, cycle: tc });
    }
    Ok(())
}

/// `Tr(ρ S₊)` from the deviation's superdiagonal-adjacent coherences.
pub fn transverse_signal(rho: &DensityMatrix, sys: &SpinSystem) -> Complex64 {
    let dev = rho.deviation();
    let ops = sys.ops();
    (0..sys.dim() - 1)
        .map(|k| dev[(k + 1, k)] * ops.splus[(k, k + 1)])
        .sum()
}

/// Records `n_samples` points spaced by `dwell` while the state evolves
/// freely, returning the signal and the state at the end of the window.
pub fn acquire(
    rho: &DensityMatrix,
    sys: &SpinSystem,
    n_samples: usize,
    dwell: f64,
    receiver_phase: f64,
    relaxation: Option<&RelaxationParams>,
) -> Result<(Fid, DensityMatrix)> {
    if n_samples == 0 {
        return Err(invalid("n_samples", "must be >= 1"));
    }
    if !(dwell > 0.0) {
        return Err(invalid("dwell", "must be > 0"));
    }
    check_window(sys, n_samples as f64 * dwell)?;
    let energies = sys.energies();
    let rx = Complex64::from_polar(1.0, -receiver_phase);
    let relax = relaxation.filter(|r| r.enabled());
    let mut state = rho.clone();
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        samples.push(transverse_signal(&state, sys) * rx);
        state = state.evolve_diagonal(&energies, dwell);
        if let Some(r) = relax {
            state = apply_relaxation(&state, dwell, r)?;
        }
    }
    Ok((
        Fid {
            samples,
            dwell,
            start_time: 0.0,
        },
        state,
    ))
}

/// DFT of the apodized signal `s_k · exp(−π·lb·t_k)`, zero-filled to
/// `zero_fill` points when that exceeds the signal length.
pub fn spectrum(fid: &Fid, line_broadening: f64, zero_fill: Option<usize>) -> Result<Spectrum> {
    if line_broadening < 0.0 {
        return Err(invalid("line_broadening", "must be >= 0"));
    }
    let n = zero_fill.unwrap_or(0).max(fid.len()).max(1);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (k, (t, z)) in fid.times().zip(&fid.samples).enumerate() {
        buf[k] = z * (-PI * line_broadening * t).exp();
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let spacing = 1.0 / (n as f64 * fid.dwell);
    let half = n / 2;
    let mut frequencies = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    // bins n/2.. are the negative frequencies
    for j in 0..n {
        let bin = (j + n - half) % n;
        let signed = if bin >= n - half {
            bin as isize - n as isize
        } else {
            bin as isize
        };
        frequencies.push(signed as f64 * spacing);
        values.push(buf[bin]);
    }
    Ok(Spectrum {
        frequencies,
        values,
        spacing,
    })
}

/// Line amplitudes as discrete Fourier coefficients over the complete
/// cycles of the window: `a_k = (1/N) Σ s(t_n) e^{−iω_k t_n}`.
pub fn peak_amplitudes(fid: &Fid, sys: &SpinSystem) -> Result<PeakAmplitudes> {
    let tc = sys.cycle_time()?;
    let window = fid.window();
    if window < tc * (1.0 - 1e-9) {
        return Err(Error::WindowTooShort { window, cycle: tc });
    }
    let cycles = (window / tc + 1e-9).floor();
    let used = ((cycles * tc / fid.dwell).round() as usize).min(fid.len());
    let freqs: Vec<f64> = (0..sys.dim() - 1)
        .map(|k| sys.transition_frequency(k))
        .collect();
    let values = freqs
        .iter()
        .map(|&w| {
            let sum: Complex64 = fid.samples[..used]
                .iter()
                .enumerate()
                .map(|(n, s)| s * Complex64::from_polar(1.0, -w * n as f64 * fid.dwell))
                .sum();
            sum / used as f64
        })
        .collect();
    Ok(PeakAmplitudes { values })
}

/// Peaks of the linear-response spectrum: an ideal `flip`-angle pulse about
/// X followed by `cycles` cycles of acquisition at [`SAMPLES_PER_CYCLE`].
pub fn linear_response_peaks(
    rho: &DensityMatrix,
    sys: &SpinSystem,
    flip: f64,
    cycles: usize,
) -> Result<PeakAmplitudes> {
    let tc = sys.cycle_time()?;
    let tipped = rho.evolve(&crate::dynamics::ideal_rotation(sys.ops(), flip, 0.0));
    let (fid, _) = acquire(
        &tipped,
        sys,
        cycles.max(1) * SAMPLES_PER_CYCLE,
        tc / SAMPLES_PER_CYCLE as f64,
        0.0,
        None,
    )?;
    peak_amplitudes(&fid, sys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ideal_rotation;
    use crate::linalg::c;

    const WQ: f64 = TAU * 1000.0;

    fn sys() -> SpinSystem {
        SpinSystem::cesium(WQ).unwrap()
    }

    fn synthetic(sys: &SpinSystem, coeffs: &[Complex64], cycles: usize) -> Fid {
        let tc = sys.cycle_time().unwrap();
        let dwell = tc / SAMPLES_PER_CYCLE as f64;
        let samples = (0..cycles * SAMPLES_PER_CYCLE)
            .map(|n| {
                let t = n as f64 * dwell;
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, a)| a * Complex64::from_polar(1.0, sys.transition_frequency(k) * t))
                    .sum()
            })
            .collect();
        Fid {
            samples,
            dwell,
            start_time: 0.0,
        }
    }

    #[test]
    fn single_exponential_extracts_one_line() {
        let sys = sys();
        let mut coeffs = vec![c(0.0); 7];
        coeffs[1] = c(1.0); // +2 ω_q line
        let fid = synthetic(&sys, &coeffs, 1);
        let p = peak_amplitudes(&fid, &sys).unwrap();
        for (k, z) in p.values.iter().enumerate() {
            let want = if k == 1 { c(1.0) } else { c(0.0) };
            assert!((z - want).norm() < 1e-12, "{k}: {z}");
        }
    }

    #[test]
    fn orthogonality_recovers_all_coefficients() {
        let sys = sys();
        let coeffs: Vec<Complex64> = (0..7)
            .map(|k| Complex64::new(k as f64 - 2.5, 0.3 * k as f64))
            .collect();
        for cycles in [1, 4] {
            let p = peak_amplitudes(&synthetic(&sys, &coeffs, cycles), &sys).unwrap();
            for (a, b) in p.values.iter().zip(&coeffs) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn short_window_is_rejected() {
        let sys = sys();
        let mut fid = synthetic(&sys, &[c(1.0)], 1);
        fid.samples.truncate(8);
        assert!(matches!(
            peak_amplitudes(&fid, &sys),
            Err(Error::WindowTooShort { .. })
        ));
    }

    #[test]
    fn acquisition_requires_whole_cycles() {
        let sys = sys();
        let rho = DensityMatrix::maximally_mixed(8);
        let dwell = sys.cycle_time().unwrap() / 16.0;
        assert!(matches!(
            acquire(&rho, &sys, 24, dwell, 0.0, None),
            Err(Error::WindowNotCycleMultiple { .. })
        ));
        assert!(acquire(&rho, &sys, 32, dwell, 0.0, None).is_ok());
    }

    #[test]
    fn diagonal_state_gives_no_signal() {
        let sys = sys();
        let rho =
            DensityMatrix::from_populations(&[0.3, 0.2, 0.1, 0.1, 0.1, 0.1, 0.05, 0.05]).unwrap();
        let dwell = sys.cycle_time().unwrap() / 16.0;
        let (fid, after) = acquire(&rho, &sys, 16, dwell, 0.0, None).unwrap();
        assert!(fid.samples.iter().all(|z| z.norm() == 0.0));
        assert_eq!(after, rho);
    }

    fn tipped_equilibrium(sys: &SpinSystem, angle: f64) -> DensityMatrix {
        let eq = DensityMatrix::from_deviation(&sys.ops().sz * c(1e-5)).unwrap();
        eq.evolve(&ideal_rotation(sys.ops(), angle, 0.0))
    }

    #[test]
    fn tipped_equilibrium_has_seven_binomial_lines() {
        let sys = sys();
        let rho = tipped_equilibrium(&sys, 5f64.to_radians());
        let dwell = sys.cycle_time().unwrap() / 16.0;
        let (fid, _) = acquire(&rho, &sys, 64, dwell, 0.0, None).unwrap();
        let p = peak_amplitudes(&fid, &sys).unwrap();
        let m = p.magnitudes();
        let want = [7.0, 12.0, 15.0, 16.0, 15.0, 12.0, 7.0];
        for k in 0..7 {
            assert!((m[k] / m[0] * 7.0 - want[k]).abs() < 1e-9);
        }
        // the fid is exactly the sum of the seven exponentials it contains
        let rebuilt = synthetic(&sys, &p.values, 4);
        assert!(fid.max_deviation(&rebuilt) < 1e-12 * fid.max_abs());
    }

    #[test]
    fn magnitude_pattern_repeats_every_cycle() {
        let sys = sys();
        let rho = tipped_equilibrium(&sys, 0.3);
        let dwell = sys.cycle_time().unwrap() / 16.0;
        let (fid, _) = acquire(&rho, &sys, 48, dwell, 0.0, None).unwrap();
        for k in 0..32 {
            assert!(
                (fid.samples[k].norm() - fid.samples[k + 16].norm()).abs() < 1e-12 * fid.max_abs()
            );
        }
    }

    #[test]
    fn multi_cycle_extraction_is_mean_of_single_cycles() {
        let sys = sys();
        let rho = tipped_equilibrium(&sys, 0.2);
        let dwell = sys.cycle_time().unwrap() / 16.0;
        let (fid, _) = acquire(&rho, &sys, 64, dwell, 0.0, None).unwrap();
        let all = peak_amplitudes(&fid, &sys).unwrap();
        let mut mean = [c(0.0); 7];
        for cyc in 0..4 {
            let part = Fid {
                samples: fid.samples[cyc * 16..(cyc + 1) * 16].to_vec(),
                ..fid.clone()
            };
            // each chunk starts at t = 0 again; one cycle is a whole number of periods for every line
            let p = peak_amplitudes(&part, &sys).unwrap();
            for (m, v) in mean.iter_mut().zip(&p.values) {
                *m += v / 4.0;
            }
        }
        for (a, m) in all.values.iter().zip(&mean) {
            assert!((a - m).norm() < 1e-12 * all.values[3].norm());
        }
    }

    #[test]
    fn linear_in_deviation() {
        let sys = sys();
        let rho = tipped_equilibrium(&sys, 0.2);
        let dwell = sys.cycle_time().unwrap() / 16.0;
        let (a, _) = acquire(&rho, &sys, 16, dwell, 0.0, None).unwrap();
        let (b, _) = acquire(&rho.scaled_deviation(3.5), &sys, 16, dwell, 0.0, None).unwrap();
        let pa = peak_amplitudes(&a, &sys).unwrap();
        let pb = peak_amplitudes(&b, &sys).unwrap();
        for k in 0..7 {
            assert!((pb.values[k] - pa.values[k] * 3.5).norm() < 1e-12 * pb.values[3].norm());
        }
    }

    #[test]
    fn on_grid_exponential_occupies_one_bin() {
        let sys = sys();
        let mut coeffs = vec![c(0.0); 7];
        coeffs[0] = c(1.0);
        let fid = synthetic(&sys, &coeffs, 4);
        let spec = spectrum(&fid, 0.0, None).unwrap();
        let nonzero: Vec<usize> = spec
            .values
            .iter()
            .enumerate()
            .filter(|(_, z)| z.norm() > 1e-9)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(nonzero.len(), 1);
        assert!((spec.frequencies[nonzero[0]] - 3000.0).abs() < 1e-6);
        assert!((spec.spacing - 250.0).abs() < 1e-9);
    }

    #[test]
    fn broadening_does_not_add_peaks() {
        let sys = sys();
        let rho = tipped_equilibrium(&sys, 0.1);
        let dwell = sys.cycle_time().unwrap() / 16.0;
        let (fid, _) = acquire(&rho, &sys, 256 * 16, dwell, 0.0, None).unwrap();
        let narrow = spectrum(&fid, 20.0, Some(16384)).unwrap();
        let wide = spectrum(&fid, 40.0, Some(16384)).unwrap();
        assert_eq!(narrow.peak_count(0.05), 7);
        assert_eq!(wide.peak_count(0.05), 7);
        let r_narrow = narrow.magnitude_near(0.0) / narrow.magnitude_near(3000.0);
        let r_wide = wide.magnitude_near(0.0) / wide.magnitude_near(3000.0);
        assert!((r_narrow - r_wide).abs() / r_narrow < 0.05);
        assert!(spectrum(&fid, -1.0, None).is_err());
    }
}
