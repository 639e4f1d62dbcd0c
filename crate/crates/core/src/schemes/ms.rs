//! Bichromatic two-ion gate driven through virtual phonon excitation.
//!
//! The full interaction
//! `H = Ω e^{iδt} J_x − Ωη e^{i(δ+ω_x)t} a†J_y − Ωη e^{i(δ−ω_x)t} J_y a + h.c.`
//! reduces for large `δ` to `χ J_y²` with
//! `χ = Ω²η²·2ω_x/((δ−ω_x)(δ+ω_x))`, which commutes with `n̂`.

use std::f64::consts::PI;

use crate::dynamics::{evolve_timedep, EvolutionOptions, ParametricHamiltonian, TimeGrid};
use crate::effham::{fixtures, reduce};
use crate::hilbert::{collective_spin, unitary_from_hermitian, CMatrix, Factor, SpaceDescriptor, StateVector};

use super::{block, check_leakage, process_fidelity, DriveKind, GateReport, LaserDrive, SchemeError, SectorFidelity};

/// `Δt·ω_max` used for the exact evolution.
const PHASE_PER_STEP: f64 = 0.04;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateDuration {
    /// `χt = π/2`.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MsSetup {
    pub drive: LaserDrive,
    pub omega_x: f64,
    pub cutoff: usize,
    pub duration: GateDuration,
    /// Bus Fock sectors to test.
    pub sectors: Vec<usize>,
    /// Repeat one exact run at half the step and report the difference.
    pub convergence_check: bool,
}

#[derive(Clone, Debug)]
pub struct MsReport {
    /// Exact evolution against the `exp(−iχtJ_y²)` target.
    pub exact: GateReport,
    /// Effective-Hamiltonian evolution against the same target.
    pub effective: GateReport,
    /// Exact-vs-effective process fidelity per sector.
    pub agreement: Vec<SectorFidelity>,
    /// `1 − min` of `agreement`.
    pub gap: f64,
    pub chi: f64,
    pub duration: f64,
    pub step_halving_infidelity: Option<f64>,
}

/// `χ = Ω²η²·2ω_x/((δ−ω_x)(δ+ω_x))`.
pub fn ms_chi(rabi: f64, eta: f64, detuning: f64, omega_x: f64) -> f64 {
    rabi * rabi * eta * eta * 2.0 * omega_x / ((detuning - omega_x) * (detuning + omega_x))
}

/// `exp(−iθ J_y²)` on two qubits, basis `|q₁q₂⟩` with level 0 = `|g⟩`.
pub fn ms_target(theta: f64) -> CMatrix {
    let space = SpaceDescriptor::new(vec![Factor::qubit(), Factor::qubit()]).expect("two qubits");
    let j = collective_spin(&space, &[0, 1]).expect("two ions");
    unitary_from_hermitian((&j.y * &j.y).matrix(), theta)
}

/// Runs the exact and effective gates on `|q₁q₂⟩⊗|n⟩` for every sector.
pub fn ms_gate(setup: &MsSetup) -> Result<MsReport, SchemeError> {
    let d = &setup.drive;
    d.expect(DriveKind::Bichromatic)?;
    let warning = d.check_detuning(setup.omega_x)?;
    let max_n = setup.sectors.iter().copied().max().unwrap_or(0);
    if setup.sectors.is_empty() || setup.cutoff < max_n + 2 {
        return Err(SchemeError::InvalidParameter { name: "cutoff", value: setup.cutoff as f64 });
    }
    let eta = d.bus_eta();
    let chi = ms_chi(d.rabi, eta, d.detuning, setup.omega_x);
    let duration = match setup.duration {
        GateDuration::Auto => 0.5 * PI / chi,
        GateDuration::Fixed(t) if t > 0.0 => t,
        GateDuration::Fixed(t) => return Err(SchemeError::InvalidParameter { name: "duration", value: t }),
    };

    let space = SpaceDescriptor::new(vec![Factor::qubit(), Factor::qubit(), Factor::Phonon { cutoff: setup.cutoff }])?;
    let terms = fixtures::bichromatic(&space, &[0, 1], 2, d.rabi, eta, d.detuning, setup.omega_x)?;
    let h_eff = reduce(&space, &terms)?;
    let u_eff = unitary_from_hermitian(h_eff.op.matrix(), duration);
    let h = ParametricHamiltonian::new(&space).with_harmonic_terms(&terms);
    let grid = TimeGrid::resolving(duration, h.max_frequency(), PHASE_PER_STEP);
    let target = ms_target(chi * duration);

    let mut exact = GateReport::new("ms exact", duration);
    let mut effective = GateReport::new("ms effective", duration);
    let mut agreement = Vec::new();
    let mut step_halving = None;
    for &n in &setup.sectors {
        let basis: Vec<StateVector> = (0..4)
            .map(|c| StateVector::basis(&space, &[c / 2, c % 2, n]))
            .collect::<Result<_, _>>()?;
        let mut out_exact = Vec::with_capacity(4);
        let mut out_eff = Vec::with_capacity(4);
        for (c, b) in basis.iter().enumerate() {
            let opts = EvolutionOptions { convergence_check: setup.convergence_check && c == 0 && n == setup.sectors[0], ..Default::default() };
            let r = evolve_timedep(&h, b, grid, &opts)?;
            if r.step_halving_infidelity.is_some() {
                step_halving = r.step_halving_infidelity;
            }
            exact.leakage = exact.leakage.max(r.leakage);
            out_exact.push(r.state);
            let e = StateVector::new(space.clone(), &u_eff * b.amplitudes())?;
            effective.leakage = effective.leakage.max(e.truncation_leakage());
            out_eff.push(e);
        }
        let m_exact = block(&basis, &out_exact)?;
        let m_eff = block(&basis, &out_eff)?;
        exact.sectors.push(SectorFidelity { n, fidelity: process_fidelity(&target, &m_exact) });
        effective.sectors.push(SectorFidelity { n, fidelity: process_fidelity(&target, &m_eff) });
        agreement.push(SectorFidelity { n, fidelity: process_fidelity(&m_eff, &m_exact) });
        if exact.final_state.is_none() {
            exact.final_state = Some(out_exact[0].clone());
            effective.final_state = Some(out_eff[0].clone());
        }
        exact.sector_unitaries.push(m_exact);
        effective.sector_unitaries.push(m_eff);
    }
    exact.fidelity = exact.min_sector_fidelity();
    effective.fidelity = effective.min_sector_fidelity();
    if let Some(w) = warning {
        exact.warnings.push(w.clone());
        effective.warnings.push(w);
    }
    effective.warnings.extend(h_eff.warnings);
    check_leakage(exact.leakage)?;
    let gap = 1.0 - agreement.iter().map(|s| s.fidelity).fold(1.0, f64::min);
    Ok(MsReport { exact, effective, agreement, gap, chi, duration, step_halving_infidelity: step_halving })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{CVector, C64};

    /// `χ = 1/20` at gate time 5 trap periods; `Ω = 1` fixed, `η` set by `δ`.
    pub(crate) fn setup(detuning: f64) -> MsSetup {
        let chi = 1.0 / 20.0;
        let rabi = 1.0;
        let eta = (chi * (detuning * detuning - 1.0) / 2.0).sqrt() / rabi;
        MsSetup {
            drive: LaserDrive::new(DriveKind::Bichromatic, rabi, detuning, vec![eta]).unwrap(),
            omega_x: 1.0,
            cutoff: 8,
            duration: GateDuration::Auto,
            sectors: vec![0, 1, 2],
            convergence_check: false,
        }
    }

    #[test]
    fn chi_formula_and_auto_duration() {
        let s = setup(20.0);
        assert!((ms_chi(1.0, s.drive.bus_eta(), 20.0, 1.0) - 0.05).abs() < 1e-15);
        let r = ms_gate(&s).unwrap();
        assert!((r.duration - 10.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn effective_gate_is_number_independent_and_entangling() {
        let r = ms_gate(&setup(20.0)).unwrap();
        for s in &r.effective.sectors {
            assert!(s.fidelity > 1.0 - 1e-12, "{s:?}");
        }
        assert!(r.effective.sector_spread() < 1e-12);
        // |gg⟩ → (|gg⟩ + e^{iφ}|ee⟩)/√2: reduced purity 1/2.
        let psi = r.effective.final_state.unwrap();
        let spin: Vec<C64> = (0..4).map(|c| psi.amplitude(&[c / 2, c % 2, 0]).unwrap()).collect();
        let v = CVector::from_vec(spin);
        let rho00 = v[0].norm_sqr() + v[1].norm_sqr();
        let rho11 = v[2].norm_sqr() + v[3].norm_sqr();
        let rho01 = v[0] * v[2].conj() + v[1] * v[3].conj();
        let purity = rho00 * rho00 + rho11 * rho11 + 2.0 * rho01.norm_sqr();
        assert!((purity - 0.5).abs() < 1e-9, "{purity}");
    }

    #[test]
    fn detuning_guard() {
        let mut s = setup(20.0);
        s.drive.detuning = 2.0;
        assert!(matches!(ms_gate(&s), Err(SchemeError::DetuningTooSmall { .. })));
    }

    #[test]
    fn exact_gate_converges_to_effective() {
        let mut a = setup(20.0);
        a.convergence_check = true;
        let a = ms_gate(&a).unwrap();
        let b = ms_gate(&setup(40.0)).unwrap();
        assert!(a.gap < 1e-2, "gap at 20: {}", a.gap);
        assert!(b.gap < a.gap, "gap at 40: {} vs {}", b.gap, a.gap);
        assert!(a.step_halving_infidelity.unwrap() < 1e-6);
        // sector spread of the exact gate shrinks too
        assert!(b.exact.sector_spread() < a.exact.sector_spread() + 1e-12);
    }
}
