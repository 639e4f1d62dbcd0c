//! States and operators on composite spaces of few-level ions and truncated
//! phonon modes.
//!
//! Factor order is fixed by the [`SpaceDescriptor`]; the first factor is the
//! most significant index of the flattened basis. Qubit levels follow one
//! convention throughout the crate: level 0 is the ground state `|g⟩`,
//! level 1 the excited state `|e⟩`, `σ⁺ = |0⟩⟨1|` and `σ⁻ = |1⟩⟨0|` (the
//! labeling where the "plus" operator lowers), and `σ_z = (|e⟩⟨e| − |g⟩⟨g|)/2`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const I: C64 = C64::new(0.0, 1.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const ZERO: C64 = C64::new(0.0, 0.0);

/// Default norm tolerance applied after evolution.
pub const NORM_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HilbertError {
    #[error("ion factor must have 2..=4 levels, got {0}")]
    BadIonLevels(usize),
    #[error("phonon cutoff must be at least 1, got {0}")]
    BadCutoff(usize),
    #[error("a space needs at least one factor")]
    EmptySpace,
    #[error("factor index {index} out of range for a space with {len} factors")]
    FactorOutOfRange { index: usize, len: usize },
    #[error("factor {index} is {found}, expected a phonon mode")]
    NotPhonon { index: usize, found: Factor },
    #[error("factor {index} is {found}, expected an ion")]
    NotIon { index: usize, found: Factor },
    #[error("level {level} out of range for factor {index} of dimension {dim}")]
    LevelOutOfRange { index: usize, level: usize, dim: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operands live on different spaces")]
    SpaceMismatch,
    #[error("collective operator needs at least one ion")]
    EmptySelection,
}

/// One tensor factor of a composite space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Factor {
    /// An ion with `levels` internal states.
    Ion { levels: usize },
    /// A phonon mode truncated at Fock index `cutoff` (dimension `cutoff + 1`).
    Phonon { cutoff: usize },
}

impl Factor {
    pub fn qubit() -> Self {
        Factor::Ion { levels: 2 }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Factor::Ion { levels } => levels,
            Factor::Phonon { cutoff } => cutoff + 1,
        }
    }

    fn validate(&self) -> Result<(), HilbertError> {
        match *self {
            Factor::Ion { levels } if !(2..=4).contains(&levels) => {
                Err(HilbertError::BadIonLevels(levels))
            }
            Factor::Phonon { cutoff } if cutoff < 1 => Err(HilbertError::BadCutoff(cutoff)),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::Ion { levels } => write!(f, "ion({levels} levels)"),
            Factor::Phonon { cutoff } => write!(f, "phonon(cutoff {cutoff})"),
        }
    }
}

/// Ordered list of tensor factors.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SpaceDescriptor {
    factors: Vec<Factor>,
}

impl SpaceDescriptor {
    pub fn new(factors: Vec<Factor>) -> Result<Self, HilbertError> {
        if factors.is_empty() {
            return Err(HilbertError::EmptySpace);
        }
        for f in &factors {
            f.validate()?;
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.factors.iter().map(Factor::dim).product()
    }

    pub fn factor(&self, index: usize) -> Result<Factor, HilbertError> {
        self.factors
            .get(index)
            .copied()
            .ok_or(HilbertError::FactorOutOfRange { index, len: self.factors.len() })
    }

    /// Cutoff of the phonon factor at `index`.
    pub fn phonon_cutoff(&self, index: usize) -> Result<usize, HilbertError> {
        match self.factor(index)? {
            Factor::Phonon { cutoff } => Ok(cutoff),
            found => Err(HilbertError::NotPhonon { index, found }),
        }
    }

    /// Level count of the ion factor at `index`.
    pub fn ion_levels(&self, index: usize) -> Result<usize, HilbertError> {
        match self.factor(index)? {
            Factor::Ion { levels } => Ok(levels),
            found => Err(HilbertError::NotIon { index, found }),
        }
    }

    /// Product of factor dimensions strictly after `index`.
    pub fn stride(&self, index: usize) -> usize {
        self.factors[index + 1..].iter().map(Factor::dim).product()
    }

    /// Flattened index of a product basis state.
    pub fn index_of(&self, levels: &[usize]) -> Result<usize, HilbertError> {
        if levels.len() != self.factors.len() {
            return Err(HilbertError::DimensionMismatch {
                expected: self.factors.len(),
                found: levels.len(),
            });
        }
        let mut idx = 0;
        for (i, (&l, f)) in levels.iter().zip(&self.factors).enumerate() {
            let d = f.dim();
            if l >= d {
                return Err(HilbertError::LevelOutOfRange { index: i, level: l, dim: d });
            }
            idx = idx * d + l;
        }
        Ok(idx)
    }

    /// Inverse of [`index_of`](Self::index_of).
    pub fn levels_of(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.factors.len()];
        for (slot, f) in out.iter_mut().zip(&self.factors).rev() {
            let d = f.dim();
            *slot = index % d;
            index /= d;
        }
        out
    }

    /// Concatenation `self ⊗ other`.
    pub fn tensor(&self, other: &SpaceDescriptor) -> SpaceDescriptor {
        let mut factors = self.factors.clone();
        factors.extend_from_slice(&other.factors);
        SpaceDescriptor { factors }
    }
}

/// Complex amplitudes over a [`SpaceDescriptor`].
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    space: SpaceDescriptor,
    amps: CVector,
}

impl StateVector {
    pub fn new(space: SpaceDescriptor, amps: CVector) -> Result<Self, HilbertError> {
        if amps.len() != space.dim() {
            return Err(HilbertError::DimensionMismatch { expected: space.dim(), found: amps.len() });
        }
        Ok(Self { space, amps })
    }

    /// Product basis state `|l_1⟩ ⊗ |l_2⟩ ⊗ …`.
    pub fn basis(space: &SpaceDescriptor, levels: &[usize]) -> Result<Self, HilbertError> {
        let idx = space.index_of(levels)?;
        let mut amps = CVector::zeros(space.dim());
        amps[idx] = ONE;
        Ok(Self { space: space.clone(), amps })
    }

    /// Product of single-factor states, in factor order.
    pub fn product(locals: &[(Factor, CVector)]) -> Result<Self, HilbertError> {
        let factors: Vec<Factor> = locals.iter().map(|(f, _)| *f).collect();
        let space = SpaceDescriptor::new(factors)?;
        let mut amps = CVector::from_element(1, ONE);
        for (f, v) in locals {
            if v.len() != f.dim() {
                return Err(HilbertError::DimensionMismatch { expected: f.dim(), found: v.len() });
            }
            amps = amps.kronecker(v);
        }
        Ok(Self { space, amps })
    }

    pub fn space(&self) -> &SpaceDescriptor {
        &self.space
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amps
    }

    pub fn into_amplitudes(self) -> CVector {
        self.amps
    }

    pub fn amplitude(&self, levels: &[usize]) -> Result<C64, HilbertError> {
        Ok(self.amps[self.space.index_of(levels)?])
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.amps.norm();
        if n > 0.0 {
            self.amps.unscale_mut(n);
        }
        self
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Result<C64, HilbertError> {
        if self.space != other.space {
            return Err(HilbertError::SpaceMismatch);
        }
        Ok(self.amps.dotc(&other.amps))
    }

    pub fn tensor(&self, other: &StateVector) -> StateVector {
        StateVector { space: self.space.tensor(&other.space), amps: self.amps.kronecker(&other.amps) }
    }

    /// Applies a single-factor operator without building the full matrix.
    pub fn apply_local(&self, factor: usize, local: &CMatrix) -> Result<StateVector, HilbertError> {
        let f = self.space.factor(factor)?;
        let d = f.dim();
        if local.nrows() != d || local.ncols() != d {
            return Err(HilbertError::DimensionMismatch { expected: d, found: local.nrows() });
        }
        let after = self.space.stride(factor);
        let before = self.space.dim() / (d * after);
        let mut out = CVector::zeros(self.amps.len());
        for b in 0..before {
            for k in 0..d {
                for j in 0..d {
                    let m = local[(k, j)];
                    if m == ZERO {
                        continue;
                    }
                    let dst = (b * d + k) * after;
                    let src = (b * d + j) * after;
                    for a in 0..after {
                        out[dst + a] += m * self.amps[src + a];
                    }
                }
            }
        }
        Ok(StateVector { space: self.space.clone(), amps: out })
    }

    /// Population summed over the top two Fock levels of every phonon factor.
    pub fn truncation_leakage(&self) -> f64 {
        let mut leak = 0.0;
        for (i, amp) in self.amps.iter().enumerate() {
            let levels = self.space.levels_of(i);
            let at_edge = self.space.factors.iter().zip(&levels).any(|(f, &l)| match *f {
                Factor::Phonon { cutoff } => l + 1 >= cutoff,
                Factor::Ion { .. } => false,
            });
            if at_edge {
                leak += amp.norm_sqr();
            }
        }
        leak
    }

    /// Populations of each level of one factor (partial trace of `|ψ|²`).
    pub fn factor_populations(&self, factor: usize) -> Result<Vec<f64>, HilbertError> {
        let d = self.space.factor(factor)?.dim();
        let after = self.space.stride(factor);
        let mut pops = vec![0.0; d];
        for (i, amp) in self.amps.iter().enumerate() {
            pops[(i / after) % d] += amp.norm_sqr();
        }
        Ok(pops)
    }
}

/// Dense operator over a [`SpaceDescriptor`].
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    space: SpaceDescriptor,
    matrix: CMatrix,
}

impl Operator {
    pub fn new(space: SpaceDescriptor, matrix: CMatrix) -> Result<Self, HilbertError> {
        let d = space.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(HilbertError::DimensionMismatch { expected: d, found: matrix.nrows() });
        }
        Ok(Self { space, matrix })
    }

    pub fn identity(space: &SpaceDescriptor) -> Self {
        let d = space.dim();
        Self { space: space.clone(), matrix: CMatrix::identity(d, d) }
    }

    pub fn zeros(space: &SpaceDescriptor) -> Self {
        let d = space.dim();
        Self { space: space.clone(), matrix: CMatrix::zeros(d, d) }
    }

    pub fn space(&self) -> &SpaceDescriptor {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn adjoint(&self) -> Operator {
        Operator { space: self.space.clone(), matrix: self.matrix.adjoint() }
    }

    pub fn scale(&self, c: C64) -> Operator {
        Operator { space: self.space.clone(), matrix: &self.matrix * c }
    }

    pub fn scale_real(&self, c: f64) -> Operator {
        self.scale(C64::new(c, 0.0))
    }

    pub fn commutator(&self, other: &Operator) -> Result<Operator, HilbertError> {
        self.check_space(other)?;
        let m = &self.matrix * &other.matrix - &other.matrix * &self.matrix;
        Ok(Operator { space: self.space.clone(), matrix: m })
    }

    /// Largest absolute entry of `self − self†`.
    pub fn hermiticity_defect(&self) -> f64 {
        max_abs(&(&self.matrix - self.matrix.adjoint()))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    pub fn max_abs_diff(&self, other: &Operator) -> Result<f64, HilbertError> {
        self.check_space(other)?;
        Ok(max_abs(&(&self.matrix - &other.matrix)))
    }

    pub fn apply(&self, psi: &StateVector) -> Result<StateVector, HilbertError> {
        if self.space != psi.space {
            return Err(HilbertError::SpaceMismatch);
        }
        Ok(StateVector { space: self.space.clone(), amps: &self.matrix * &psi.amps })
    }

    pub fn tensor(&self, other: &Operator) -> Operator {
        Operator {
            space: self.space.tensor(&other.space),
            matrix: self.matrix.kronecker(&other.matrix),
        }
    }

    pub fn try_add(&self, other: &Operator) -> Result<Operator, HilbertError> {
        self.check_space(other)?;
        Ok(Operator { space: self.space.clone(), matrix: &self.matrix + &other.matrix })
    }

    pub fn try_mul(&self, other: &Operator) -> Result<Operator, HilbertError> {
        self.check_space(other)?;
        Ok(Operator { space: self.space.clone(), matrix: &self.matrix * &other.matrix })
    }

    fn check_space(&self, other: &Operator) -> Result<(), HilbertError> {
        if self.space != other.space {
            Err(HilbertError::SpaceMismatch)
        } else {
            Ok(())
        }
    }
}

// Arithmetic on references panics on mismatched spaces, like matrix shape
// mismatches in nalgebra. Use the `try_*` methods for fallible composition.
impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        self.try_add(rhs).expect("operator spaces differ")
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        assert_eq!(self.space, rhs.space, "operator spaces differ");
        Operator { space: self.space.clone(), matrix: &self.matrix - &rhs.matrix }
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        self.try_mul(rhs).expect("operator spaces differ")
    }
}

impl Mul<C64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: C64) -> Operator {
        self.scale(rhs)
    }
}

impl Mul<f64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: f64) -> Operator {
        self.scale_real(rhs)
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        self.scale_real(-1.0)
    }
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Single-factor building blocks.
pub mod local {
    use super::*;

    /// Truncated annihilation operator on Fock levels `0..=cutoff`.
    pub fn annihilation(cutoff: usize) -> CMatrix {
        let d = cutoff + 1;
        let mut a = CMatrix::zeros(d, d);
        for n in 1..d {
            a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
        }
        a
    }

    pub fn number(cutoff: usize) -> CMatrix {
        let d = cutoff + 1;
        CMatrix::from_diagonal(&CVector::from_iterator(d, (0..d).map(|n| C64::new(n as f64, 0.0))))
    }

    /// `|i⟩⟨j|` on a `d`-dimensional factor.
    pub fn transition(d: usize, i: usize, j: usize) -> CMatrix {
        let mut m = CMatrix::zeros(d, d);
        m[(i, j)] = ONE;
        m
    }

    pub fn projector(d: usize, i: usize) -> CMatrix {
        transition(d, i, i)
    }

    /// `σ⁺ = |0⟩⟨1|` on the lowest two levels.
    pub fn sigma_plus(levels: usize) -> CMatrix {
        transition(levels, 0, 1)
    }

    pub fn sigma_minus(levels: usize) -> CMatrix {
        transition(levels, 1, 0)
    }

    /// `(|1⟩⟨1| − |0⟩⟨0|)/2` on the lowest two levels.
    pub fn sigma_z(levels: usize) -> CMatrix {
        let mut m = CMatrix::zeros(levels, levels);
        m[(1, 1)] = C64::new(0.5, 0.0);
        m[(0, 0)] = C64::new(-0.5, 0.0);
        m
    }

    /// Fock state `|n⟩`.
    pub fn fock(cutoff: usize, n: usize) -> CVector {
        let mut v = CVector::zeros(cutoff + 1);
        v[n] = ONE;
        v
    }

    /// Truncated coherent state from the Poisson series, renormalized.
    pub fn coherent(cutoff: usize, alpha: C64) -> CVector {
        let mut v = CVector::zeros(cutoff + 1);
        let mut term = ONE;
        v[0] = term;
        for n in 1..=cutoff {
            term = term * alpha / (n as f64).sqrt();
            v[n] = term;
        }
        let norm = v.norm();
        v.unscale(norm)
    }

    /// `exp(v a† − v* a)` on the truncated mode.
    pub fn displacement(cutoff: usize, v: C64) -> CMatrix {
        let a = annihilation(cutoff);
        // exp(v a† − v* a) = exp(−i K) with K = i (v a† − v* a) Hermitian.
        let k = (a.adjoint() * v - &a * v.conj()) * I;
        unitary_from_hermitian(&k, 1.0)
    }
}

/// `exp(−i h t)` for Hermitian `h`, via its eigendecomposition.
pub fn unitary_from_hermitian(h: &CMatrix, t: f64) -> CMatrix {
    let n = h.nrows();
    if is_diagonal(h) {
        return CMatrix::from_diagonal(&CVector::from_iterator(
            n,
            (0..n).map(|i| (-I * h[(i, i)].re * t).exp()),
        ));
    }
    let eig = nalgebra::SymmetricEigen::new(h.clone());
    let phases = CVector::from_iterator(n, eig.eigenvalues.iter().map(|&l| (-I * l * t).exp()));
    let v = &eig.eigenvectors;
    let scaled = CMatrix::from_fn(n, n, |r, c| v[(r, c)] * phases[c]);
    scaled * v.adjoint()
}

fn is_diagonal(m: &CMatrix) -> bool {
    m.iter().enumerate().all(|(k, z)| {
        let (r, c) = (k % m.nrows(), k / m.nrows());
        r == c || *z == ZERO
    })
}

/// Embeds a single-factor operator, padding with identities.
pub fn embed(space: &SpaceDescriptor, factor: usize, local: &CMatrix) -> Result<Operator, HilbertError> {
    let d = space.factor(factor)?.dim();
    if local.nrows() != d || local.ncols() != d {
        return Err(HilbertError::DimensionMismatch { expected: d, found: local.nrows() });
    }
    let before: usize = space.factors()[..factor].iter().map(Factor::dim).product();
    let after = space.stride(factor);
    let m = CMatrix::identity(before, before)
        .kronecker(local)
        .kronecker(&CMatrix::identity(after, after));
    Operator::new(space.clone(), m)
}

/// `(a, a†)` for the phonon factor at `mode`.
pub fn ladder(space: &SpaceDescriptor, mode: usize) -> Result<(Operator, Operator), HilbertError> {
    let cutoff = space.phonon_cutoff(mode)?;
    let a = embed(space, mode, &local::annihilation(cutoff))?;
    let ad = a.adjoint();
    Ok((a, ad))
}

pub fn number(space: &SpaceDescriptor, mode: usize) -> Result<Operator, HilbertError> {
    let cutoff = space.phonon_cutoff(mode)?;
    embed(space, mode, &local::number(cutoff))
}

/// Spin operators of one ion, embedded in the composite space.
#[derive(Clone, Debug)]
pub struct SpinOps {
    pub plus: Operator,
    pub minus: Operator,
    pub z: Operator,
}

pub fn spin_ops(space: &SpaceDescriptor, ion: usize) -> Result<SpinOps, HilbertError> {
    let levels = space.ion_levels(ion)?;
    Ok(SpinOps {
        plus: embed(space, ion, &local::sigma_plus(levels))?,
        minus: embed(space, ion, &local::sigma_minus(levels))?,
        z: embed(space, ion, &local::sigma_z(levels))?,
    })
}

/// Collective operators over a set of ions.
#[derive(Clone, Debug)]
pub struct CollectiveSpin {
    pub plus: Operator,
    pub x: Operator,
    pub y: Operator,
}

/// `J⁺ = Σ σ⁺_j`, `J_x = (J⁺ + J⁻)/2`, `J_y = (J⁺ − J⁻)/2i`.
pub fn collective_spin(space: &SpaceDescriptor, ions: &[usize]) -> Result<CollectiveSpin, HilbertError> {
    if ions.is_empty() {
        return Err(HilbertError::EmptySelection);
    }
    let mut plus = Operator::zeros(space);
    for &j in ions {
        plus = &plus + &spin_ops(space, j)?.plus;
    }
    let minus = plus.adjoint();
    let x = (&plus + &minus).scale_real(0.5);
    let y = (&plus - &minus).scale(C64::new(0.0, -0.5));
    Ok(CollectiveSpin { plus, x, y })
}

/// `D(v) = exp(v a† − v* a)` on `mode`. Logs a warning when `|v|² > cutoff/4`.
pub fn displacement(space: &SpaceDescriptor, mode: usize, v: C64) -> Result<Operator, HilbertError> {
    let cutoff = space.phonon_cutoff(mode)?;
    if displacement_truncation_risk(cutoff, v) {
        log::warn!("displacement |v|^2 = {:.3} exceeds cutoff/4 (cutoff {cutoff})", v.norm_sqr());
    }
    embed(space, mode, &local::displacement(cutoff, v))
}

pub fn displacement_truncation_risk(cutoff: usize, v: C64) -> bool {
    v.norm_sqr() > cutoff as f64 / 4.0
}

/// `|⟨ψ|φ⟩|²`.
pub fn fidelity(psi: &StateVector, phi: &StateVector) -> Result<f64, HilbertError> {
    Ok(psi.inner(phi)?.norm_sqr().min(1.0))
}

/// `⟨ψ|A|ψ⟩`.
pub fn expectation(op: &Operator, psi: &StateVector) -> Result<C64, HilbertError> {
    let a_psi = op.apply(psi)?;
    psi.inner(&a_psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mode(cutoff: usize) -> SpaceDescriptor {
        SpaceDescriptor::new(vec![Factor::Phonon { cutoff }]).unwrap()
    }

    #[test]
    fn factor_validation() {
        assert_eq!(SpaceDescriptor::new(vec![]), Err(HilbertError::EmptySpace));
        assert_eq!(
            SpaceDescriptor::new(vec![Factor::Ion { levels: 5 }]),
            Err(HilbertError::BadIonLevels(5))
        );
        assert_eq!(
            SpaceDescriptor::new(vec![Factor::Phonon { cutoff: 0 }]),
            Err(HilbertError::BadCutoff(0))
        );
        let s = SpaceDescriptor::new(vec![Factor::qubit(), Factor::Phonon { cutoff: 4 }]).unwrap();
        assert_eq!(s.dim(), 10);
        assert_eq!(s.levels_of(s.index_of(&[1, 3]).unwrap()), vec![1, 3]);
    }

    #[test]
    fn ladder_action() {
        let s = mode(5);
        let (a, ad) = ladder(&s, 0).unwrap();
        let one = StateVector::basis(&s, &[1]).unwrap();
        let out = a.apply(&one).unwrap();
        assert_abs_diff_eq!(out.amplitude(&[0]).unwrap().re, 1.0, epsilon = 1e-15);
        let three = StateVector::basis(&s, &[3]).unwrap();
        let n3 = (&ad * &a).apply(&three).unwrap();
        assert_abs_diff_eq!(n3.amplitude(&[3]).unwrap().re, 3.0, epsilon = 1e-14);
        // a† annihilates the top state
        let top = StateVector::basis(&s, &[5]).unwrap();
        assert_eq!(ad.apply(&top).unwrap().norm(), 0.0);
    }

    #[test]
    fn canonical_commutator_below_edge() {
        let s = mode(6);
        let (a, ad) = ladder(&s, 0).unwrap();
        let c = a.commutator(&ad).unwrap();
        for n in 0..6 {
            let v = StateVector::basis(&s, &[n]).unwrap();
            let out = c.apply(&v).unwrap();
            // exact up to the rounding of √n·√n
            assert!((out.amplitudes() - v.amplitudes()).norm() < 1e-14);
        }
    }

    #[test]
    fn ladder_on_ion_factor_is_error() {
        let s = SpaceDescriptor::new(vec![Factor::qubit(), Factor::Phonon { cutoff: 3 }]).unwrap();
        assert!(matches!(ladder(&s, 0), Err(HilbertError::NotPhonon { index: 0, .. })));
        assert!(matches!(spin_ops(&s, 1), Err(HilbertError::NotIon { index: 1, .. })));
    }

    #[test]
    fn spin_completeness_and_eigenvalues() {
        let s = SpaceDescriptor::new(vec![Factor::qubit()]).unwrap();
        let sp = spin_ops(&s, 0).unwrap();
        let sum = &(&sp.plus * &sp.minus) + &(&sp.minus * &sp.plus);
        assert_eq!(sum, Operator::identity(&s));
        let e = StateVector::basis(&s, &[1]).unwrap();
        let g = StateVector::basis(&s, &[0]).unwrap();
        assert_eq!(expectation(&sp.z, &e).unwrap().re, 0.5);
        assert_eq!(expectation(&sp.z, &g).unwrap().re, -0.5);
    }

    #[test]
    fn collective_spin_matches_sum_of_singles() {
        let s = SpaceDescriptor::new(vec![Factor::qubit(), Factor::qubit()]).unwrap();
        let j = collective_spin(&s, &[0, 1]).unwrap();
        let y1 = collective_spin(&s, &[0]).unwrap().y;
        let y2 = collective_spin(&s, &[1]).unwrap().y;
        assert!(j.y.max_abs_diff(&(&y1 + &y2)).unwrap() < 1e-15);
        assert!(j.y.is_hermitian(1e-12) && j.x.is_hermitian(1e-12));
        assert_eq!(collective_spin(&s, &[]).unwrap_err(), HilbertError::EmptySelection);
    }

    #[test]
    fn jy_squared_spectrum() {
        let one = SpaceDescriptor::new(vec![Factor::qubit()]).unwrap();
        let jy = collective_spin(&one, &[0]).unwrap().y;
        let jy2 = &jy * &jy;
        assert!(jy2.max_abs_diff(&Operator::identity(&one).scale_real(0.25)).unwrap() < 1e-15);

        let two = SpaceDescriptor::new(vec![Factor::qubit(), Factor::qubit()]).unwrap();
        let jy = collective_spin(&two, &[0, 1]).unwrap().y;
        let jy2 = (&jy * &jy).into_matrix();
        let mut ev: Vec<f64> = nalgebra::SymmetricEigen::new(jy2).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for (got, want) in ev.iter().zip([0.0, 0.0, 1.0, 1.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn disjoint_factors_commute() {
        let s = SpaceDescriptor::new(vec![Factor::qubit(), Factor::qubit(), Factor::Phonon { cutoff: 3 }])
            .unwrap();
        let jy = collective_spin(&s, &[0, 1]).unwrap().y;
        let (a, _) = ladder(&s, 2).unwrap();
        assert_eq!(max_abs(jy.commutator(&a).unwrap().matrix()), 0.0);
        let z1 = spin_ops(&s, 0).unwrap().z;
        let z2 = spin_ops(&s, 1).unwrap().z;
        assert_eq!(max_abs(z1.commutator(&z2).unwrap().matrix()), 0.0);
    }

    #[test]
    fn displacement_identity_and_inverse() {
        let s = mode(20);
        let d0 = displacement(&s, 0, ZERO).unwrap();
        assert!(d0.max_abs_diff(&Operator::identity(&s)).unwrap() < 1e-14);
        let alpha = C64::new(0.3, -0.4);
        let d = displacement(&s, 0, alpha).unwrap();
        let dinv = displacement(&s, 0, -alpha).unwrap();
        // exact inverse, since both are exponentials of ± the same generator
        assert!((&d * &dinv).max_abs_diff(&Operator::identity(&s)).unwrap() < 1e-12);
    }

    #[test]
    fn coherent_mean_occupation() {
        // Oracle: the Poisson series gives ⟨n⟩ = |α|².
        let s = mode(20);
        for alpha in [C64::new(0.5, 0.0), C64::new(1.0, 0.0)] {
            let psi = displacement(&s, 0, alpha)
                .unwrap()
                .apply(&StateVector::basis(&s, &[0]).unwrap())
                .unwrap();
            let n = expectation(&number(&s, 0).unwrap(), &psi).unwrap();
            assert_abs_diff_eq!(n.re, alpha.norm_sqr(), epsilon = 1e-6);
            assert!(n.im.abs() < 1e-10);
            let series = StateVector::new(s.clone(), local::coherent(20, alpha)).unwrap();
            assert!(fidelity(&psi, &series).unwrap() > 1.0 - 1e-9);
        }
    }

    #[test]
    fn compose_identities() {
        let q = SpaceDescriptor::new(vec![Factor::qubit()]).unwrap();
        let m = mode(2);
        let a = spin_ops(&q, 0).unwrap().plus;
        let b = ladder(&m, 0).unwrap().0;
        let ab = a.tensor(&b);
        assert_eq!(ab.dim(), a.dim() * b.dim());
        let lhs = &a.tensor(&Operator::identity(&m)) * &Operator::identity(&q).tensor(&b);
        assert_eq!(lhs, ab);
        let embedded = embed(ab.space(), 0, &local::sigma_plus(2)).unwrap();
        assert_eq!(embedded, a.tensor(&Operator::identity(&m)));
    }

    #[test]
    fn fidelity_basics() {
        let q = SpaceDescriptor::new(vec![Factor::qubit()]).unwrap();
        let zero = StateVector::basis(&q, &[0]).unwrap();
        let one = StateVector::basis(&q, &[1]).unwrap();
        assert_eq!(fidelity(&zero, &zero).unwrap(), 1.0);
        assert_eq!(fidelity(&zero, &one).unwrap(), 0.0);
        let other = StateVector::basis(&mode(2), &[0]).unwrap();
        assert_eq!(fidelity(&zero, &other), Err(HilbertError::SpaceMismatch));
    }

    #[test]
    fn apply_local_matches_embedded() {
        let s = SpaceDescriptor::new(vec![Factor::qubit(), Factor::Phonon { cutoff: 4 }, Factor::qubit()])
            .unwrap();
        let amps = CVector::from_iterator(s.dim(), (0..s.dim()).map(|k| C64::new(k as f64, 1.0 - k as f64)));
        let psi = StateVector::new(s.clone(), amps).unwrap().normalized();
        let d = local::displacement(4, C64::new(0.2, 0.1));
        let fast = psi.apply_local(1, &d).unwrap();
        let slow = embed(&s, 1, &d).unwrap().apply(&psi).unwrap();
        assert!((fast.amplitudes() - slow.amplitudes()).norm() < 1e-14);
    }

    #[test]
    fn leakage_counts_top_two_levels() {
        let s = mode(5);
        let psi = StateVector::basis(&s, &[4]).unwrap();
        assert_eq!(psi.truncation_leakage(), 1.0);
        let psi = StateVector::basis(&s, &[3]).unwrap();
        assert_eq!(psi.truncation_leakage(), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn displacement_unitary_on_safe_subspace(re in -1.0f64..1.0, im in -1.0f64..1.0) {
                let cutoff = 24;
                let v = C64::new(re, im);
                let d = local::displacement(cutoff, v);
                let udu = d.adjoint() * &d;
                let safe = cutoff - (4.0 * v.norm()).ceil() as usize;
                for r in 0..=safe {
                    for c in 0..=safe {
                        let want = if r == c { 1.0 } else { 0.0 };
                        prop_assert!((udu[(r, c)] - C64::new(want, 0.0)).norm() < 1e-9);
                    }
                }
            }

            #[test]
            fn embedding_preserves_norm(k in 0usize..3, seed in 0u64..1000) {
                let s = SpaceDescriptor::new(vec![Factor::qubit(), Factor::Phonon { cutoff: 3 }, Factor::Ion { levels: 3 }]).unwrap();
                let amps = CVector::from_iterator(s.dim(), (0..s.dim()).map(|j| {
                    let x = ((j as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0;
                    C64::new(x - 0.5, 0.3 - x)
                }));
                let psi = StateVector::new(s.clone(), amps).unwrap().normalized();
                let dim = s.factors()[k].dim();
                let h = {
                    let m = CMatrix::from_fn(dim, dim, |r, c| C64::new((r + 2 * c) as f64, r as f64 - c as f64));
                    &m + m.adjoint()
                };
                let u = unitary_from_hermitian(&h, 0.7);
                let out = psi.apply_local(k, &u).unwrap();
                prop_assert!((out.norm() - 1.0).abs() < 1e-12);
            }
        }
    }
}
