//! Turning peak amplitudes into level populations, and comparing them with
//! theory.
//!
//! The pipeline mirrors how a linear-response spectrum is read: divide each
//! peak by its equilibrium counterpart (removing the transition matrix
//! element), fix the overall scale with the pseudopure reference (whose single
//! line corresponds to a population difference of one), then integrate the
//! differences with the integration constant chosen so populations sum to
//! one.

use std::fmt;

use crate::acquisition::PeakAmplitudes;
use crate::dynamics::DensityMatrix;
use crate::error::{Error, Result};
use crate::spin_ops::Basis;

/// Populations (probabilities) of the levels of one basis, level order.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationVector {
    pub values: Vec<f64>,
    pub basis: Basis,
}

impl PopulationVector {
    pub fn new(values: Vec<f64>, basis: Basis) -> Self {
        Self { values, basis }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Indices of negative entries. They are reported, never clamped.
    pub fn negative_indices(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v < 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Same populations listed from `m = −S` upward.
    pub fn reversed(&self) -> Self {
        Self {
            values: self.values.iter().rev().copied().collect(),
            basis: self.basis,
        }
    }

    /// `d_k = p_k − p_{k+1}`.
    pub fn differences(&self) -> DifferenceVector {
        DifferenceVector {
            values: self.values.windows(2).map(|w| w[0] - w[1]).collect(),
            imaginary: vec![0.0; self.values.len().saturating_sub(1)],
        }
    }
}

/// Adjacent-level population differences, transition order.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceVector {
    pub values: Vec<f64>,
    /// Imaginary parts of the scaled peak ratios; zero for ideally phased
    /// signals.
    pub imaginary: Vec<f64>,
}

impl DifferenceVector {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            values,
            imaginary: vec![0.0; n],
        }
    }

    pub fn max_imaginary(&self) -> f64 {
        self.imaginary.iter().fold(0.0_f64, |a, b| a.max(b.abs()))
    }
}

/// Scale that maps the pseudopure reference line (`index`) to a difference
/// of one: `1 / Re(pp_index / eq_index)`.
pub fn reference_scale(
    pp_peaks: &PeakAmplitudes,
    eq_peaks: &PeakAmplitudes,
    index: usize,
) -> Result<f64> {
    let eq = eq_peaks.values[index];
    if eq.norm() == 0.0 {
        return Err(Error::VanishingReference { index });
    }
    let ratio = (pp_peaks.values[index] / eq).re;
    if ratio == 0.0 || !ratio.is_finite() {
        return Err(Error::VanishingReference { index });
    }
    Ok(1.0 / ratio)
}

pub fn normalize_by_equilibrium(
    peaks: &PeakAmplitudes,
    eq_peaks: &PeakAmplitudes,
    pp_reference_scale: f64,
) -> Result<DifferenceVector> {
    if peaks.len() != eq_peaks.len() {
        return Err(Error::DimensionMismatch {
            expected: eq_peaks.len(),
            got: peaks.len(),
        });
    }
    let largest = eq_peaks.values.iter().fold(0.0_f64, |a, z| a.max(z.norm()));
    let mut values = Vec::with_capacity(peaks.len());
    let mut imaginary = Vec::with_capacity(peaks.len());
    for (k, (p, e)) in peaks.values.iter().zip(&eq_peaks.values).enumerate() {
        if e.norm() <= 1e-300 || e.norm() < 1e-12 * largest {
            return Err(Error::VanishingReference { index: k });
        }
        let r = p / e * pp_reference_scale;
        values.push(r.re);
        imaginary.push(r.im);
    }
    Ok(DifferenceVector { values, imaginary })
}

/// Integrates differences back to populations with `Σ p = 1`.
pub fn populations_from_differences(d: &DifferenceVector, basis: Basis) -> PopulationVector {
    let n = d.values.len() + 1;
    let mut partial = Vec::with_capacity(n);
    partial.push(0.0);
    for dk in &d.values {
        let last = *partial.last().unwrap();
        partial.push(last - dk);
    }
    let constant = (1.0 - partial.iter().sum::<f64>()) / n as f64;
    PopulationVector::new(partial.into_iter().map(|p| p + constant).collect(), basis)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryComparison {
    pub errors: Vec<f64>,
    pub max_abs_error: f64,
    pub negative: Vec<usize>,
}

impl fmt::Display for TheoryComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "max |error| = {:.3e}", self.max_abs_error)?;
        if !self.negative.is_empty() {
            write!(f, ", negative populations at {:?}", self.negative)?;
        }
        Ok(())
    }
}

pub fn compare_to_theory(
    p: &PopulationVector,
    theory: &PopulationVector,
) -> Result<TheoryComparison> {
    if p.basis != theory.basis {
        return Err(Error::BasisMismatch(
            p.basis.to_string(),
            theory.basis.to_string(),
        ));
    }
    if p.len() != theory.len() {
        return Err(Error::DimensionMismatch {
            expected: theory.len(),
            got: p.len(),
        });
    }
    let errors: Vec<f64> = p
        .values
        .iter()
        .zip(&theory.values)
        .map(|(a, b)| a - b)
        .collect();
    let max_abs_error = errors.iter().fold(0.0_f64, |a, e| a.max(e.abs()));
    Ok(TheoryComparison {
        errors,
        max_abs_error,
        negative: p.negative_indices(),
    })
}

/// Normalized overlap of deviation matrices,
/// `Tr(δ₁δ₂) / √(Tr δ₁² · Tr δ₂²)`.
pub fn reversal_fidelity(recovered: &DensityMatrix, target: &DensityMatrix) -> Result<f64> {
    if recovered.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: recovered.dim(),
        });
    }
    let a = recovered.deviation();
    let b = target.deviation();
    let ab = (a * b).trace().re;
    let aa: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    let bb: f64 = b.iter().map(|z| z.norm_sqr()).sum();
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::ZeroDeviation);
    }
    Ok((ab / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn peaks(v: &[f64]) -> PeakAmplitudes {
        PeakAmplitudes::new(v.iter().map(|&x| Complex64::new(0.0, x)).collect())
    }

    const BINOMIAL: [f64; 8] = [1.0, 7.0, 21.0, 35.0, 35.0, 21.0, 7.0, 1.0];

    #[test]
    fn equilibrium_gives_equal_differences() {
        let eq = peaks(&[7.0, 12.0, 15.0, 16.0, 15.0, 12.0, 7.0]);
        let pp = peaks(&[7.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let scale = reference_scale(&pp, &eq, 0).unwrap();
        let d = normalize_by_equilibrium(&eq, &eq, scale).unwrap();
        assert!(d.values.iter().all(|x| (x - 1.0).abs() < 1e-15));
        let d = normalize_by_equilibrium(&pp, &eq, scale).unwrap();
        assert_eq!(d.values, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn vanishing_equilibrium_peak_is_an_error() {
        let eq = peaks(&[7.0, 0.0, 15.0]);
        let p = peaks(&[1.0, 1.0, 1.0]);
        assert!(matches!(
            normalize_by_equilibrium(&p, &eq, 1.0),
            Err(Error::VanishingReference { index: 1 })
        ));
        assert!(reference_scale(&p, &peaks(&[0.0, 1.0, 1.0]), 0).is_err());
    }

    #[test]
    fn integration_of_simple_differences() {
        let p = populations_from_differences(
            &DifferenceVector::new(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            Basis::Z,
        );
        let mut want = vec![0.0; 8];
        want[0] = 1.0;
        for (a, b) in p.values.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let p = populations_from_differences(&DifferenceVector::new(vec![0.0; 7]), Basis::Z);
        assert!(p.values.iter().all(|v| (v - 0.125).abs() < 1e-15));
    }

    #[test]
    fn binomial_differences_integrate_back() {
        let theory = PopulationVector::new(BINOMIAL.iter().map(|x| x / 128.0).collect(), Basis::X);
        let p = populations_from_differences(&theory.differences(), Basis::X);
        let cmp = compare_to_theory(&p, &theory).unwrap();
        assert!(cmp.max_abs_error < 1e-15);
        assert!(cmp.negative.is_empty());
    }

    #[test]
    fn negative_population_is_flagged_not_clamped() {
        let theory = PopulationVector::new(vec![0.5, 0.5], Basis::X);
        let p = PopulationVector::new(vec![1.02, -0.02], Basis::X);
        let cmp = compare_to_theory(&p, &theory).unwrap();
        assert_eq!(cmp.negative, vec![1]);
        assert!((cmp.errors[1] + 0.52).abs() < 1e-15);
        assert_eq!(p.values[1], -0.02);
    }

    #[test]
    fn basis_mismatch_is_rejected() {
        let a = PopulationVector::new(vec![0.5, 0.5], Basis::X);
        let b = PopulationVector::new(vec![0.5, 0.5], Basis::Z);
        assert!(matches!(
            compare_to_theory(&a, &b),
            Err(Error::BasisMismatch(..))
        ));
        let zero = compare_to_theory(&a, &a).unwrap();
        assert_eq!(zero.max_abs_error, 0.0);
    }

    #[test]
    fn fidelity_of_identical_and_mixed_states() {
        let pp =
            DensityMatrix::from_populations(&[0.3, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1]).unwrap();
        assert!((reversal_fidelity(&pp, &pp).unwrap() - 1.0).abs() < 1e-15);
        let mixed = DensityMatrix::maximally_mixed(8);
        assert!(matches!(
            reversal_fidelity(&mixed, &pp),
            Err(Error::ZeroDeviation)
        ));
    }

    proptest! {
        #[test]
        fn differences_round_trip(raw in proptest::collection::vec(-1.0f64..1.0, 2..12)) {
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            let values: Vec<f64> = raw.iter().map(|x| x - mean + 1.0 / raw.len() as f64).collect();
            let p = PopulationVector::new(values, Basis::Z);
            let back = populations_from_differences(&p.differences(), Basis::Z);
            for (a, b) in back.values.iter().zip(&p.values) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!((back.sum() - 1.0).abs() < 1e-12);
        }
    }
}
