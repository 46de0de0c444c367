//! Angular-momentum operators for a single spin and the rotation between
//! the `S_Z` and `S_X` eigenbases.
//!
//! Levels are indexed `m = +S` (index 0) down to `m = −S` (index `2S`);
//! every module in the crate shares this ordering.

use std::fmt;

use num_complex::Complex64;

use crate::analysis::PopulationVector;
use crate::error::{Error, Result};
use crate::linalg::{c, expm_hermitian, CMatrix, I};

/// Spin quantum number stored as `2S` so half-integers stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpinQuantumNumber {
    two_s: u32,
}

impl SpinQuantumNumber {
    /// The caesium-133 value, `S = 7/2`.
    pub const SEVEN_HALVES: SpinQuantumNumber = SpinQuantumNumber { two_s: 7 };

    pub fn new(two_s: u32) -> Result<Self> {
        if two_s == 0 {
            return Err(Error::InvalidSpin("2S must be at least 1".into()));
        }
        Ok(Self { two_s })
    }

    /// From the spin value itself, e.g. `3.5`. Rejects anything that is not a
    /// positive multiple of one half.
    pub fn from_spin(s: f64) -> Result<Self> {
        let twice = 2.0 * s;
        if !twice.is_finite() || (twice - twice.round()).abs() > 1e-12 || twice.round() < 1.0 {
            return Err(Error::InvalidSpin(format!(
                "S = {s} is not a positive half-integer"
            )));
        }
        Self::new(twice.round() as u32)
    }

    pub fn two_s(self) -> u32 {
        self.two_s
    }

    pub fn spin(self) -> f64 {
        self.two_s as f64 / 2.0
    }

    pub fn dim(self) -> usize {
        self.two_s as usize + 1
    }

    /// `2m` of the level at `index`.
    pub fn two_m_at(self, index: usize) -> i32 {
        self.two_s as i32 - 2 * index as i32
    }

    pub fn m_at(self, index: usize) -> f64 {
        self.two_m_at(index) as f64 / 2.0
    }

    pub fn index_of(self, m: HalfInteger) -> Result<usize> {
        let two_s = self.two_s as i32;
        let two_m = m.twice();
        if two_m.abs() > two_s || (two_s - two_m) % 2 != 0 {
            return Err(Error::MagneticNumberOutOfRange {
                two_s: self.two_s,
                two_m,
            });
        }
        Ok(((two_s - two_m) / 2) as usize)
    }

    /// All `m` values in level order.
    pub fn levels(self) -> impl Iterator<Item = HalfInteger> {
        (0..self.dim()).map(move |i| HalfInteger::from_twice(self.two_m_at(i)))
    }

    /// `S(S+1)`.
    pub fn casimir(self) -> f64 {
        let s = self.spin();
        s * (s + 1.0)
    }
}

impl fmt::Display for SpinQuantumNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", HalfInteger::from_twice(self.two_s as i32))
    }
}

/// An integer or half-integer stored as twice its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HalfInteger(i32);

impl HalfInteger {
    pub const fn from_twice(twice: i32) -> Self {
        Self(twice)
    }

    pub fn twice(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }
}

impl fmt::Display for HalfInteger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    Z,
    X,
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Basis::Z => f.write_str("Z"),
            Basis::X => f.write_str("X"),
        }
    }
}

/// Cartesian and ladder operators in the `S_Z` eigenbasis.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub s: SpinQuantumNumber,
    pub sx: CMatrix,
    pub sy: CMatrix,
    pub sz: CMatrix,
    pub splus: CMatrix,
    pub sminus: CMatrix,
}

impl SpinOperators {
    pub fn dim(&self) -> usize {
        self.s.dim()
    }

    /// `S_X cos φ + S_Y sin φ`, the transverse component along azimuth `phase`.
    pub fn transverse(&self, phase: f64) -> CMatrix {
        &self.sx * c(phase.cos()) + &self.sy * c(phase.sin())
    }

    /// `⟨m+1|S₊|m⟩` for the transition between level `index + 1` and `index`.
    pub fn ladder_element(&self, index: usize) -> f64 {
        self.splus[(index, index + 1)].re
    }
}

pub fn make_spin_operators(s: SpinQuantumNumber) -> SpinOperators {
    let dim = s.dim();
    let casimir = s.casimir();
    let mut splus = CMatrix::zeros(dim, dim);
    // S₊|m⟩ = √(S(S+1) − m(m+1)) |m+1⟩; |m+1⟩ sits one index lower.
    for col in 1..dim {
        let m = s.m_at(col);
        splus[(col - 1, col)] = c((casimir - m * (m + 1.0)).sqrt());
    }
    let sminus = splus.adjoint();
    let sx = (&splus + &sminus) * c(0.5);
    let sy = (&splus - &sminus) * (-0.5 * I);
    let sz = CMatrix::from_fn(dim, dim, |i, j| if i == j { c(s.m_at(i)) } else { c(0.0) });
    SpinOperators {
        s,
        sx,
        sy,
        sz,
        splus,
        sminus,
    }
}

/// `U = exp(−i(π/2) S_Y)` with column phases fixed so that the `m = +S` row is
/// entrywise positive.
///
/// Column `j` is the `S_X` eigenvector with eigenvalue `m_j` (same ordering as
/// the `S_Z` levels), so `U† S_X U = diag(+S … −S)` and row `i` holds the
/// components of `|m_i⟩_Z` in the `S_X` basis.
pub fn rotation_to_x_basis(s: SpinQuantumNumber) -> CMatrix {
    let ops = make_spin_operators(s);
    let mut u = expm_hermitian(&ops.sy, std::f64::consts::FRAC_PI_2)
        .expect("S_Y is Hermitian by construction");
    // exp(−iθS_Y) is real; strip rounding noise in the imaginary part.
    u.iter_mut().for_each(|z| *z = c(z.re));
    for j in 0..u.ncols() {
        if u[(0, j)].re < 0.0 {
            u.column_mut(j).neg_mut();
        }
    }
    u
}

/// The rotation laid out like the published eigenvector table: rows `m_Z`
/// from `+S` down, columns in increasing `S_X` projection.
pub fn table1_layout(s: SpinQuantumNumber) -> CMatrix {
    let u = rotation_to_x_basis(s);
    let dim = u.ncols();
    CMatrix::from_fn(dim, dim, |i, j| u[(i, dim - 1 - j)])
}

/// A state written in a named basis.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisVector {
    pub components: Vec<Complex64>,
    pub basis: Basis,
    /// Magnetic quantum number of the state this vector represents.
    pub m: HalfInteger,
}

impl BasisVector {
    pub fn norm(&self) -> f64 {
        self.components
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Components reordered to increasing projection (`−S` first).
    pub fn ascending(&self) -> Vec<Complex64> {
        self.components.iter().rev().copied().collect()
    }
}

/// Components of `|m⟩_Z` in the `S_X` eigenbasis (ordered `m_X = +S` first).
pub fn sz_eigvec_in_sx_basis(s: SpinQuantumNumber, m: HalfInteger) -> Result<BasisVector> {
    let row = s.index_of(m)?;
    let u = rotation_to_x_basis(s);
    Ok(BasisVector {
        components: u.row(row).iter().copied().collect(),
        basis: Basis::X,
        m,
    })
}

/// Probabilities of finding `|m⟩_Z` in each `S_X` eigenstate.
pub fn projection_probabilities(s: SpinQuantumNumber, m: HalfInteger) -> Result<PopulationVector> {
    let v = sz_eigvec_in_sx_basis(s, m)?;
    Ok(PopulationVector::new(
        v.components.iter().map(|z| z.norm_sqr()).collect(),
        Basis::X,
    ))
}

/// Published spin-7/2 eigenvector table, transcribed verbatim.
///
/// Rows in print order (`m = −7/2` first); each row has an overall factor of
/// 1/16 and components in increasing `S_X` projection. Entries are
/// `(coefficient, radicand)` meaning `coefficient·√radicand`.
pub mod table1 {
    pub const PRINTED_ROW_M_TWICE: [i32; 8] = [-7, -5, -3, -1, 1, 3, 5, 7];

    pub const PRINTED: [[(i32, u32); 8]; 8] = [
        [
            (1, 2),
            (1, 14),
            (-1, 42),
            (1, 70),
            (-1, 70),
            (1, 42),
            (-1, 14),
            (1, 2),
        ],
        [
            (1, 14),
            (-5, 2),
            (3, 6),
            (-1, 10),
            (-1, 10),
            (3, 6),
            (-5, 2),
            (1, 14),
        ],
        [
            (-1, 42),
            (3, 6),
            (-1, 2),
            (-1, 30),
            (1, 30),
            (1, 2),
            (-3, 6),
            (1, 42),
        ],
        [
            (1, 70),
            (-1, 10),
            (-1, 30),
            (3, 2),
            (3, 2),
            (-1, 30),
            (-1, 10),
            (1, 70),
        ],
        [
            (-1, 70),
            (-1, 10),
            (1, 30),
            (3, 2),
            (-3, 2),
            (-1, 30),
            (1, 10),
            (1, 70),
        ],
        [
            (1, 42),
            (3, 6),
            (1, 2),
            (-1, 30),
            (-1, 30),
            (1, 2),
            (3, 6),
            (1, 42),
        ],
        [
            (-1, 14),
            (-5, 2),
            (-3, 6),
            (-1, 10),
            (1, 10),
            (3, 6),
            (5, 2),
            (1, 14),
        ],
        [
            (1, 2),
            (1, 14),
            (1, 42),
            (1, 70),
            (1, 70),
            (1, 42),
            (1, 14),
            (1, 2),
        ],
    ];

    pub fn value(entry: (i32, u32)) -> f64 {
        entry.0 as f64 * (entry.1 as f64).sqrt() / 16.0
    }

    /// The printed table re-indexed to the crate's level order (row 0 is
    /// `m = +7/2`); columns stay in increasing `S_X` projection.
    pub fn in_level_order() -> [[f64; 8]; 8] {
        let mut out = [[0.0; 8]; 8];
        for (print_row, entries) in PRINTED.iter().enumerate() {
            let level = (7 - PRINTED_ROW_M_TWICE[print_row]) as usize / 2;
            for (k, e) in entries.iter().enumerate() {
                out[level][k] = value(*e);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{commutator, hermiticity_residual, max_abs, unitarity_residual};

    const S72: SpinQuantumNumber = SpinQuantumNumber::SEVEN_HALVES;

    fn half(twice: i32) -> HalfInteger {
        HalfInteger::from_twice(twice)
    }

    #[test]
    fn rejects_zero_and_non_half_integer_spin() {
        assert!(SpinQuantumNumber::new(0).is_err());
        assert!(SpinQuantumNumber::from_spin(1.25).is_err());
        assert!(SpinQuantumNumber::from_spin(0.0).is_err());
        assert_eq!(SpinQuantumNumber::from_spin(3.5).unwrap(), S72);
    }

    #[test]
    fn spin_half_sz_is_half_pauli_z() {
        let ops = make_spin_operators(SpinQuantumNumber::new(1).unwrap());
        assert_eq!(ops.sz[(0, 0)], c(0.5));
        assert_eq!(ops.sz[(1, 1)], c(-0.5));
        assert_eq!(ops.sz[(0, 1)], c(0.0));
    }

    #[test]
    fn lowering_element_from_top_level() {
        let ops = make_spin_operators(S72);
        // ⟨5/2|S₋|7/2⟩ = √(63/4 − 35/4)
        assert!((ops.sminus[(1, 0)].re - 7f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn squared_single_quantum_sx_elements() {
        let ops = make_spin_operators(S72);
        let sq: Vec<f64> = (0..7)
            .map(|i| 4.0 * ops.sx[(i, i + 1)].norm_sqr())
            .collect();
        let expected = [7.0, 12.0, 15.0, 16.0, 15.0, 12.0, 7.0];
        for (a, b) in sq.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{sq:?}");
        }
    }

    #[test]
    fn hermitian_commutation_and_casimir() {
        for two_s in 1..=9 {
            let s = SpinQuantumNumber::new(two_s).unwrap();
            let ops = make_spin_operators(s);
            for op in [&ops.sx, &ops.sy, &ops.sz] {
                assert_eq!(hermiticity_residual(op), 0.0);
            }
            let lhs = commutator(&ops.sx, &ops.sy);
            assert!(max_abs(&(lhs - &ops.sz * I)) < 1e-12);
            let lhs = commutator(&ops.sy, &ops.sz);
            assert!(max_abs(&(lhs - &ops.sx * I)) < 1e-12);
            let cas = &ops.sx * &ops.sx + &ops.sy * &ops.sy + &ops.sz * &ops.sz;
            let id = CMatrix::identity(s.dim(), s.dim()) * c(s.casimir());
            assert!(max_abs(&(cas - id)) < 1e-12);
        }
    }

    #[test]
    fn rotation_is_unitary_and_diagonalizes_sx() {
        for two_s in 1..=9 {
            let s = SpinQuantumNumber::new(two_s).unwrap();
            let ops = make_spin_operators(s);
            let u = rotation_to_x_basis(s);
            assert!(unitarity_residual(&u) < 1e-12);
            let d = u.adjoint() * &ops.sx * &u;
            assert!(max_abs(&(d - &ops.sz)) < 1e-12, "2S = {two_s}");
            assert!(u.row(0).iter().all(|z| z.re > 0.0));
        }
    }

    #[test]
    fn spin_half_top_state_in_x_basis() {
        let s = SpinQuantumNumber::new(1).unwrap();
        let v = sz_eigvec_in_sx_basis(s, half(1)).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v.components[0] - c(r)).norm() < 1e-15);
        assert!((v.components[1] - c(r)).norm() < 1e-15);
        let p = projection_probabilities(s, half(1)).unwrap();
        assert!((p.values[0] - 0.5).abs() < 1e-15 && (p.values[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn top_and_middle_rows_match_published_values() {
        let sq = |n: f64| n.sqrt() / 16.0;
        let v = sz_eigvec_in_sx_basis(S72, half(7)).unwrap();
        let want = [2.0, 14.0, 42.0, 70.0, 70.0, 42.0, 14.0, 2.0].map(sq);
        for (z, w) in v.components.iter().zip(want) {
            assert!((z - c(w)).norm() < 1e-12);
        }
        assert!((v.components[0].re - 2f64.sqrt() / 16.0).abs() < 1e-15);

        let v = sz_eigvec_in_sx_basis(S72, half(-1)).unwrap();
        let r70 = sq(70.0);
        let want = [
            r70,
            -sq(10.0),
            -sq(30.0),
            3.0 * sq(2.0),
            3.0 * sq(2.0),
            -sq(30.0),
            -sq(10.0),
            r70,
        ];
        for (z, w) in v.ascending().iter().zip(want) {
            assert!((z - c(w)).norm() < 1e-12);
        }
    }

    #[test]
    fn bottom_row_alternates_in_sign() {
        let v = sz_eigvec_in_sx_basis(S72, half(-7)).unwrap();
        let mags = [2.0, 14.0, 42.0, 70.0, 70.0, 42.0, 14.0, 2.0].map(|n: f64| n.sqrt() / 16.0);
        let comps = v.ascending();
        for k in 0..8 {
            assert!((comps[k].norm() - mags[k]).abs() < 1e-12);
            if k > 0 {
                assert!(comps[k].re * comps[k - 1].re < 0.0);
            }
        }
    }

    #[test]
    fn every_row_is_unit_norm() {
        for m in S72.levels() {
            let v = sz_eigvec_in_sx_basis(S72, m).unwrap();
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_m_is_rejected() {
        assert!(sz_eigvec_in_sx_basis(S72, half(9)).is_err());
        assert!(sz_eigvec_in_sx_basis(S72, half(2)).is_err());
        assert!(projection_probabilities(S72, half(-9)).is_err());
    }

    #[test]
    fn top_state_probabilities_are_binomial() {
        let p = projection_probabilities(S72, half(7)).unwrap();
        let want = [1.0, 7.0, 21.0, 35.0, 35.0, 21.0, 7.0, 1.0].map(|x| x / 128.0);
        for (a, b) in p.values.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
        let p = projection_probabilities(S72, half(-7)).unwrap();
        for (a, b) in p.values.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn probabilities_match_squared_published_magnitudes() {
        let printed = table1::in_level_order();
        for (level, m) in S72.levels().enumerate() {
            let p = projection_probabilities(S72, m).unwrap();
            assert!((p.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for k in 0..8 {
                // printed columns ascend in S_X; ours descend.
                let want = printed[level][7 - k].powi(2);
                assert!((p.values[k] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn probabilities_reverse_under_m_flip() {
        for m in S72.levels() {
            let p = projection_probabilities(S72, m).unwrap();
            let q = projection_probabilities(S72, HalfInteger::from_twice(-m.twice())).unwrap();
            for k in 0..8 {
                assert!((p.values[k] - q.values[7 - k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layout_equals_positive_quarter_turn_about_y() {
        let ops = make_spin_operators(S72);
        let w = expm_hermitian(&ops.sy, -std::f64::consts::FRAC_PI_2).unwrap();
        assert!(max_abs(&(table1_layout(S72) - w)) < 1e-12);
    }

    #[test]
    fn display_half_integers() {
        assert_eq!(HalfInteger::from_twice(-7).to_string(), "-7/2");
        assert_eq!(HalfInteger::from_twice(4).to_string(), "2");
    }
}
