//! Time-averaged effective Hamiltonians of strongly detuned interactions.
//!
//! An interaction-picture Hamiltonian written as a sum of harmonic terms
//!
//! ```text
//! H(t) = Σ_m h_m e^{iω_m t} + h.c.,     ω_m pairwise distinct,
//! ```
//!
//! is replaced, for dynamics averaged over times long compared with
//! `2π / min|ω_m ± ω_n|`, by the static second-order generator
//!
//! ```text
//! H_eff = Σ_m [h_m, h_m†] / (ℏ ω_m).
//! ```
//!
//! The route: the formal solution of the Schrödinger equation is iterated
//! once, the first-order term is dropped as rapidly oscillating, the
//! second-order term is made Markovian, and `H_eff(t) = (1/iℏ) H(t) ∫H dt'`
//! with the indefinite integral taken without a constant. Multiplying out
//! the harmonic sums, the non-oscillating (`m = n`) products are
//! `(h_m h_m† − h_m† h_m)/(ℏω_m)`.
//!
//! Note the operator order: with the `e^{+iω_m t}` phase convention the
//! commutator is `[h_m, h_m†]`, which is `−[h_m†, h_m]`. The reversed order
//! belongs to the `e^{−iω_m t}` convention. [`Reducer::reduce`] uses the
//! order that reproduces the exact dynamics (checked against direct
//! integration in the scheme tests).

use std::fmt;

use thiserror::Error;

use crate::hilbert::{
    collective_spin, ladder, number, spin_ops, Factor, HilbertError, Operator, SpaceDescriptor, C64,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EffHamError {
    #[error("term {index} has zero frequency")]
    ZeroFrequency { index: usize },
    #[error("term {index} frequency {omega:.3e} is below the floor {floor:.3e}")]
    BelowFloor { index: usize, omega: f64, floor: f64 },
    #[error("terms {first} ({first_label}) and {second} ({second_label}) have colliding frequencies {omega_first:.6e} and {omega_second:.6e}")]
    FrequencyCollision {
        first: usize,
        second: usize,
        first_label: String,
        second_label: String,
        omega_first: f64,
        omega_second: f64,
    },
    #[error("term {index} lives on a different space")]
    SpaceMismatch { index: usize },
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
}

/// One `h e^{iωt}` component (its Hermitian conjugate is implied).
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicTerm {
    pub h: Operator,
    /// rad/s, nonzero.
    pub omega: f64,
    pub label: String,
}

impl HarmonicTerm {
    pub fn new(label: impl Into<String>, h: Operator, omega: f64) -> Self {
        Self { h, omega, label: label.into() }
    }
}

impl fmt::Display for HarmonicTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} @ {:.6e} rad/s", self.label, self.omega)
    }
}

/// Result of a reduction.
#[derive(Clone, Debug)]
pub struct EffectiveHamiltonian {
    pub op: Operator,
    /// Labels of the terms that entered the sum, in input order.
    pub terms_used: Vec<String>,
    /// `min |ω_m ± ω_n|` over all pairs including `m = n` (i.e. `2|ω_m|`);
    /// infinite for an empty term list.
    pub min_frequency_gap: f64,
    pub warnings: Vec<String>,
}

/// Reduction settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reducer {
    /// ℏ in the units the term operators carry (1 for operators already in
    /// angular-frequency units).
    pub hbar: f64,
    /// Frequencies below `floor_fraction · max|ω|` are rejected.
    pub floor_fraction: f64,
    /// Relative tolerance under which two frequencies count as equal.
    pub collision_tolerance: f64,
}

impl Default for Reducer {
    fn default() -> Self {
        Self { hbar: 1.0, floor_fraction: 1e-6, collision_tolerance: 1e-9 }
    }
}

impl Reducer {
    pub fn with_hbar(hbar: f64) -> Self {
        Self { hbar, ..Self::default() }
    }

    fn validate(&self, space: &SpaceDescriptor, terms: &[HarmonicTerm]) -> Result<(), EffHamError> {
        let max_abs = terms.iter().map(|t| t.omega.abs()).fold(0.0, f64::max);
        let floor = self.floor_fraction * max_abs;
        for (i, t) in terms.iter().enumerate() {
            if t.h.space() != space {
                return Err(EffHamError::SpaceMismatch { index: i });
            }
            if t.omega == 0.0 {
                return Err(EffHamError::ZeroFrequency { index: i });
            }
            if t.omega.abs() < floor {
                return Err(EffHamError::BelowFloor { index: i, omega: t.omega, floor });
            }
        }
        // ω_n = −ω_m is as secular as ω_n = ω_m: h_n e^{-iωt} pairs with h_m†.
        for (i, a) in terms.iter().enumerate() {
            for (j, b) in terms.iter().enumerate().skip(i + 1) {
                let scale = a.omega.abs().max(b.omega.abs());
                let gap = (a.omega - b.omega).abs().min((a.omega + b.omega).abs());
                if gap <= self.collision_tolerance * scale {
                    return Err(EffHamError::FrequencyCollision {
                        first: i,
                        second: j,
                        first_label: a.label.clone(),
                        second_label: b.label.clone(),
                        omega_first: a.omega,
                        omega_second: b.omega,
                    });
                }
            }
        }
        Ok(())
    }

    /// `Σ_m [h_m, h_m†]/(ℏω_m)`.
    pub fn reduce(
        &self,
        space: &SpaceDescriptor,
        terms: &[HarmonicTerm],
    ) -> Result<EffectiveHamiltonian, EffHamError> {
        self.validate(space, terms)?;
        let mut warnings = Vec::new();
        if terms.is_empty() {
            log::warn!("effective Hamiltonian of an empty term list is zero");
            warnings.push("empty term list".to_string());
        }
        let mut op = Operator::zeros(space);
        for t in terms {
            let hd = t.h.adjoint();
            let c = t.h.commutator(&hd)?;
            op = &op + &c.scale_real(1.0 / (self.hbar * t.omega));
        }
        // Rounding leaves an anti-Hermitian residue of order ε·‖h‖²/ω.
        let op = (&op + &op.adjoint()).scale_real(0.5);
        Ok(EffectiveHamiltonian {
            op,
            terms_used: terms.iter().map(|t| t.label.clone()).collect(),
            min_frequency_gap: min_frequency_gap(terms),
            warnings,
        })
    }
}

/// `reduce` with default settings (ℏ = 1).
pub fn reduce(space: &SpaceDescriptor, terms: &[HarmonicTerm]) -> Result<EffectiveHamiltonian, EffHamError> {
    Reducer::default().reduce(space, terms)
}

pub fn min_frequency_gap(terms: &[HarmonicTerm]) -> f64 {
    let mut gap = f64::INFINITY;
    for (i, a) in terms.iter().enumerate() {
        gap = gap.min(2.0 * a.omega.abs());
        for b in &terms[i + 1..] {
            gap = gap.min((a.omega - b.omega).abs()).min((a.omega + b.omega).abs());
        }
    }
    gap
}

/// Term lists for the bichromatic and standing-wave interactions, in units
/// with ℏ = 1 (operators are `H/ℏ`, frequencies in rad per time unit).
pub mod fixtures {
    use super::*;

    /// Bichromatic drive on the ions `ions` coupled to the phonon factor
    /// `mode` of frequency `omega_x`:
    ///
    /// `H = Ω e^{iδt} J_x − Ωη e^{i(δ+ω_x)t} a†J_y − Ωη e^{i(δ−ω_x)t} J_y a + h.c.`
    pub fn bichromatic(
        space: &SpaceDescriptor,
        ions: &[usize],
        mode: usize,
        rabi: f64,
        eta: f64,
        detuning: f64,
        omega_x: f64,
    ) -> Result<Vec<HarmonicTerm>, HilbertError> {
        let j = collective_spin(space, ions)?;
        let (a, ad) = ladder(space, mode)?;
        Ok(vec![
            HarmonicTerm::new("carrier: Ω J_x", j.x.scale_real(rabi), detuning),
            HarmonicTerm::new("blue: −Ωη a†J_y", (&ad * &j.y).scale_real(-rabi * eta), detuning + omega_x),
            HarmonicTerm::new("red: −Ωη J_y a", (&j.y * &a).scale_real(-rabi * eta), detuning - omega_x),
        ])
    }

    /// Only the two motional sidebands of [`bichromatic`].
    pub fn bichromatic_sidebands(
        space: &SpaceDescriptor,
        ions: &[usize],
        mode: usize,
        rabi: f64,
        eta: f64,
        detuning: f64,
        omega_x: f64,
    ) -> Result<Vec<HarmonicTerm>, HilbertError> {
        let mut t = bichromatic(space, ions, mode, rabi, eta, detuning, omega_x)?;
        t.remove(0);
        Ok(t)
    }

    /// Ion `ion` at the node of a detuned standing wave:
    ///
    /// `H = (Ωη/2)(σ⁺a e^{i(Δ−ω_x)t} + σ⁺a† e^{i(Δ+ω_x)t}) + h.c.`
    pub fn standing_wave(
        space: &SpaceDescriptor,
        ion: usize,
        mode: usize,
        rabi: f64,
        eta: f64,
        detuning: f64,
        omega_x: f64,
    ) -> Result<Vec<HarmonicTerm>, HilbertError> {
        let s = spin_ops(space, ion)?;
        let (a, ad) = ladder(space, mode)?;
        let g = 0.5 * rabi * eta;
        Ok(vec![
            HarmonicTerm::new("σ⁺a", (&s.plus * &a).scale_real(g), detuning - omega_x),
            HarmonicTerm::new("σ⁺a†", (&s.plus * &ad).scale_real(g), detuning + omega_x),
        ])
    }
}

/// One identity check: `max |lhs − rhs|` on the subspace below the
/// truncation edge.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub max_deviation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommutatorReport {
    pub checks: Vec<IdentityCheck>,
}

impl CommutatorReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checks.iter().all(|c| c.max_deviation < tol)
    }
}

/// Deviation restricted to basis states whose phonon factors all sit
/// strictly below `cutoff`, where `a a† = n̂ + 1` holds.
fn deviation_below_edge(lhs: &Operator, rhs: &Operator) -> f64 {
    let space = lhs.space();
    let ok: Vec<bool> = (0..space.dim())
        .map(|i| {
            space.levels_of(i).iter().zip(space.factors()).all(|(&l, f)| match *f {
                Factor::Phonon { cutoff } => l < cutoff,
                Factor::Ion { .. } => true,
            })
        })
        .collect();
    let diff = lhs.matrix() - rhs.matrix();
    let mut worst = 0.0f64;
    for r in 0..space.dim() {
        for c in 0..space.dim() {
            if ok[r] && ok[c] {
                worst = worst.max(diff[(r, c)].norm());
            }
        }
    }
    worst
}

/// Numerically verifies the operator identities behind the bichromatic and
/// standing-wave reductions at Fock cutoff `cutoff`:
///
/// - `[J_y a, a†J_y] = J_y²`
/// - `[σ⁻a†, σ⁺a] = σ⁻σ⁺ n̂ − σ⁺σ⁻ (n̂ + 1)`
/// - `[σ⁻a, σ⁺a†] = σ⁻σ⁺ (n̂ + 1) − σ⁺σ⁻ n̂`
pub fn commutator_identities_check(cutoff: usize) -> Result<CommutatorReport, HilbertError> {
    let ms = SpaceDescriptor::new(vec![Factor::qubit(), Factor::qubit(), Factor::Phonon { cutoff }])?;
    let jy = collective_spin(&ms, &[0, 1])?.y;
    let (a, ad) = ladder(&ms, 2)?;
    let lhs = (&jy * &a).commutator(&(&ad * &jy))?;
    let jy_sq = &jy * &jy;

    let sw = SpaceDescriptor::new(vec![Factor::qubit(), Factor::Phonon { cutoff }])?;
    let s = spin_ops(&sw, 0)?;
    let (a1, ad1) = ladder(&sw, 1)?;
    let n = number(&sw, 1)?;
    let id = Operator::identity(&sw);
    let n1 = &n + &id;
    let mp = &s.minus * &s.plus;
    let pm = &s.plus * &s.minus;
    let red = (&s.minus * &ad1).commutator(&(&s.plus * &a1))?;
    let red_rhs = &(&mp * &n) - &(&pm * &n1);
    let blue = (&s.minus * &a1).commutator(&(&s.plus * &ad1))?;
    let blue_rhs = &(&mp * &n1) - &(&pm * &n);

    Ok(CommutatorReport {
        checks: vec![
            IdentityCheck { name: "[J_y a, a†J_y] = J_y²", max_deviation: deviation_below_edge(&lhs, &jy_sq) },
            IdentityCheck {
                name: "[σ⁻a†, σ⁺a] = σ⁻σ⁺n − σ⁺σ⁻(n+1)",
                max_deviation: deviation_below_edge(&red, &red_rhs),
            },
            IdentityCheck {
                name: "[σ⁻a, σ⁺a†] = σ⁻σ⁺(n+1) − σ⁺σ⁻n",
                max_deviation: deviation_below_edge(&blue, &blue_rhs),
            },
        ],
    })
}

/// Coefficient `c` of the best fit `op ≈ c·basis` (Frobenius projection),
/// with the relative residual `‖op − c·basis‖/‖op‖`.
pub fn proportionality(op: &Operator, basis: &Operator) -> (C64, f64) {
    let b = basis.matrix();
    let m = op.matrix();
    let c = b.dotc(m) / b.dotc(b);
    let resid = (m - b * c).norm() / m.norm().max(f64::MIN_POSITIVE);
    (c, resid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{embed, local, max_abs};
    use approx::assert_relative_eq;

    fn ms_space(cutoff: usize) -> SpaceDescriptor {
        SpaceDescriptor::new(vec![Factor::qubit(), Factor::qubit(), Factor::Phonon { cutoff }]).unwrap()
    }

    #[test]
    fn empty_list_gives_zero_with_warning() {
        let s = ms_space(3);
        let r = reduce(&s, &[]).unwrap();
        assert_eq!(r.op, Operator::zeros(&s));
        assert_eq!(r.warnings.len(), 1);
        assert!(r.min_frequency_gap.is_infinite());
    }

    #[test]
    fn duplicate_frequencies_name_the_pair() {
        let s = ms_space(3);
        let t = fixtures::bichromatic_sidebands(&s, &[0, 1], 2, 1.0, 0.1, 5.0, 1.0).unwrap();
        let mut dup = t.clone();
        dup[1].omega = dup[0].omega * (1.0 + 1e-12);
        match reduce(&s, &dup) {
            Err(EffHamError::FrequencyCollision { first: 0, second: 1, first_label, .. }) => {
                assert!(first_label.contains("blue"));
            }
            other => panic!("expected collision, got {other:?}"),
        }
        let mut neg = t.clone();
        neg[1].omega = -neg[0].omega;
        assert!(matches!(reduce(&s, &neg), Err(EffHamError::FrequencyCollision { .. })));
        let mut zero = t;
        zero[0].omega = 0.0;
        assert_eq!(reduce(&s, &zero).unwrap_err(), EffHamError::ZeroFrequency { index: 0 });
    }

    #[test]
    fn frequency_floor() {
        let s = ms_space(2);
        let mut t = fixtures::bichromatic_sidebands(&s, &[0, 1], 2, 1.0, 0.1, 5.0, 1.0).unwrap();
        t[1].omega = 1e-7;
        assert!(matches!(reduce(&s, &t), Err(EffHamError::BelowFloor { index: 1, .. })));
    }

    #[test]
    fn single_standing_wave_term() {
        // h = (Ωη/2)σ⁺a at Δ−ω_x  →  (Ω²η²/4(Δ−ω_x)) [σ⁺a, σ⁻a†]
        let (rabi, eta, delta, wx) = (3.0, 0.2, 40.0, 1.0);
        let s = SpaceDescriptor::new(vec![Factor::qubit(), Factor::Phonon { cutoff: 6 }]).unwrap();
        let terms = fixtures::standing_wave(&s, 0, 1, rabi, eta, delta, wx).unwrap();
        let r = reduce(&s, &terms[..1]).unwrap();
        let sp = spin_ops(&s, 0).unwrap();
        let (a, ad) = ladder(&s, 1).unwrap();
        let structure = (&sp.plus * &a).commutator(&(&sp.minus * &ad)).unwrap();
        let want = structure.scale_real(rabi * rabi * eta * eta / (4.0 * (delta - wx)));
        assert!(r.op.max_abs_diff(&want).unwrap() < 1e-14);
        assert!(r.op.is_hermitian(1e-10));
        assert_eq!(r.min_frequency_gap, 2.0 * (delta - wx));
    }

    #[test]
    fn bichromatic_reduces_to_jy_squared() {
        let (rabi, eta, delta, wx) = (2.0, 0.1, 20.0, 1.0);
        let s = ms_space(8);
        let terms = fixtures::bichromatic(&s, &[0, 1], 2, rabi, eta, delta, wx).unwrap();
        let r = reduce(&s, &terms).unwrap();
        let jy = collective_spin(&s, &[0, 1]).unwrap().y;
        let jy2 = &jy * &jy;
        // below the edge the result is exactly c·J_y²
        let chi = rabi * rabi * eta * eta * 2.0 * wx / ((delta - wx) * (delta + wx));
        let dev = deviation_below_edge(&r.op, &jy2.scale_real(chi));
        assert!(dev < 1e-15, "deviation {dev}");
        assert_eq!(r.terms_used.len(), 3);
        assert_relative_eq!(r.min_frequency_gap, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn identities_hold_below_edge() {
        let report = commutator_identities_check(10).unwrap();
        for c in &report.checks {
            assert!(c.max_deviation < 1e-12, "{}: {}", c.name, c.max_deviation);
        }
        assert!(report.passes(1e-12));
    }

    #[test]
    fn additivity_over_disjoint_lists() {
        let s = ms_space(5);
        let a = fixtures::bichromatic(&s, &[0, 1], 2, 1.5, 0.1, 12.0, 1.0).unwrap();
        let b = fixtures::standing_wave(&s, 1, 2, 2.0, 0.3, 31.0, 1.0).unwrap();
        let both: Vec<_> = a.iter().chain(&b).cloned().collect();
        let sum = &reduce(&s, &a).unwrap().op + &reduce(&s, &b).unwrap().op;
        let joint = reduce(&s, &both).unwrap().op;
        assert!(max_abs(&(joint.matrix() - sum.matrix())) < 1e-15);
    }

    #[test]
    fn hbar_scales_out() {
        let s = SpaceDescriptor::new(vec![Factor::qubit(), Factor::Phonon { cutoff: 3 }]).unwrap();
        let hbar = 1.054_571_817e-34;
        let h = embed(&s, 0, &local::sigma_plus(2)).unwrap().scale_real(hbar * 7.0);
        let t = [HarmonicTerm::new("x", h, 2.0)];
        let si = Reducer::with_hbar(hbar).reduce(&s, &t).unwrap().op.scale_real(1.0 / hbar);
        let natural = reduce(
            &s,
            &[HarmonicTerm::new("x", embed(&s, 0, &local::sigma_plus(2)).unwrap().scale_real(7.0), 2.0)],
        )
        .unwrap()
        .op;
        assert!(si.max_abs_diff(&natural).unwrap() < 1e-12);
    }
}
