//! Conditional gate from state-dependent momentum kicks.
//!
//! `K = σ⁺ Π_p D_p(iη_p) + σ⁻ Π_p D_p(−iη_p)` displaces the modes in a
//! direction set by the internal state of the kicked ion. `K² = I`, so a
//! second kick after a full motional period undoes the entanglement.

use std::f64::consts::PI;

use crate::chain::IonChain;
use crate::hilbert::{
    displacement_truncation_risk, local, CMatrix, Factor, SpaceDescriptor, StateVector, C64, I, ONE,
};

use super::{block, check_leakage, process_fidelity, GateReport, SchemeError, SectorFidelity};

/// Applies `K` to ion factor `ion`, with `(phonon factor, η_p)` per mode.
pub fn kick(state: &StateVector, ion: usize, modes: &[(usize, f64)]) -> Result<StateVector, SchemeError> {
    apply_kick(state, ion, &kick_displacements(state.space(), modes)?)
}

type Displacements = Vec<(usize, CMatrix, CMatrix)>;

fn kick_displacements(space: &SpaceDescriptor, modes: &[(usize, f64)]) -> Result<Displacements, SchemeError> {
    modes
        .iter()
        .map(|&(m, eta)| {
            let cutoff = space.phonon_cutoff(m)?;
            if displacement_truncation_risk(cutoff, I * eta) {
                log::warn!("kick displacement |η|² = {:.3} exceeds cutoff/4 (cutoff {cutoff})", eta * eta);
            }
            Ok((m, local::displacement(cutoff, I * eta), local::displacement(cutoff, -I * eta)))
        })
        .collect()
}

fn apply_kick(state: &StateVector, ion: usize, disp: &Displacements) -> Result<StateVector, SchemeError> {
    let levels = state.space().ion_levels(ion)?;
    let mut up = state.apply_local(ion, &local::sigma_plus(levels))?;
    let mut down = state.apply_local(ion, &local::sigma_minus(levels))?;
    for (m, plus, minus) in disp {
        up = up.apply_local(*m, plus)?;
        down = down.apply_local(*m, minus)?;
    }
    Ok(StateVector::new(state.space().clone(), up.amplitudes() + down.amplitudes())?)
}

/// Free evolution `exp(−it Σ ω_p n_p)` of the listed `(factor, ω_p)`.
fn free(state: &StateVector, modes: &[(usize, f64)], t: f64) -> Result<StateVector, SchemeError> {
    let mut psi = state.clone();
    for &(m, w) in modes {
        let cutoff = psi.space().phonon_cutoff(m)?;
        let phases = CMatrix::from_diagonal(&crate::hilbert::CVector::from_iterator(
            cutoff + 1,
            (0..=cutoff).map(|n| C64::from_polar(1.0, -w * t * n as f64)),
        ));
        psi = psi.apply_local(m, &phases)?;
    }
    Ok(psi)
}

/// Centroid distance between the two kicked branches at each ion, in
/// metres, after free evolution for `t` seconds. `modes` pairs each phonon
/// factor of `state` with its 1-based chain mode index.
pub fn branch_separation(
    chain: &IonChain,
    state: &StateVector,
    ion: usize,
    modes: &[(usize, usize)],
    t: f64,
) -> Result<Vec<f64>, SchemeError> {
    let specs = chain.normal_modes()?;
    let levels = state.space().ion_levels(ion)?;
    let mut alphas: Vec<Vec<C64>> = Vec::new();
    let mut residual: f64 = 0.0;
    for b in 0..2 {
        let branch = state.apply_local(ion, &local::projector(levels, b))?;
        let w = branch.norm().powi(2);
        if w < 1e-12 {
            return Err(SchemeError::NotBranchForm(1.0));
        }
        let mut per_mode = Vec::new();
        for &(m, _) in modes {
            let cutoff = state.space().phonon_cutoff(m)?;
            let a = branch.apply_local(m, &local::annihilation(cutoff))?;
            let alpha = branch.inner(&a)? / w;
            let n = a.norm().powi(2) / w;
            residual = residual.max((n - alpha.norm_sqr()).abs());
            per_mode.push(alpha);
        }
        alphas.push(per_mode);
    }
    if residual > 1e-6 {
        return Err(SchemeError::NotBranchForm(residual));
    }
    let mut out = vec![0.0; chain.n()];
    for (k, &(_, p)) in modes.iter().enumerate() {
        let spec = specs.get(p.wrapping_sub(1)).ok_or(SchemeError::InvalidParameter { name: "mode", value: p as f64 })?;
        let x0 = chain.zero_point_extent(spec.omega);
        let d = (alphas[0][k] - alphas[1][k]) * C64::from_polar(1.0, -spec.omega * t);
        for (n, x) in out.iter_mut().enumerate() {
            *x += spec.b[n] * x0 * 2.0 * d.re;
        }
    }
    Ok(out.into_iter().map(f64::abs).collect())
}

/// Parameters of the kick gate, in units where `ω_x = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct KickGateSetup {
    /// `(ω_p, η_p)` of the kicked ion for each enabled mode.
    pub modes: Vec<(f64, f64)>,
    pub cutoff: usize,
    /// When the branch-selective flip is applied.
    pub flip_time: f64,
    /// Latest time considered for the second kick.
    pub max_wait: f64,
    /// Revival fidelity needed to accept a recombination time.
    pub threshold: f64,
    /// Disable to check that the bare kick sequence is the identity.
    pub apply_flip: bool,
}

impl KickGateSetup {
    pub fn single_mode(eta: f64, cutoff: usize) -> Self {
        Self {
            modes: vec![(1.0, eta)],
            cutoff,
            flip_time: PI / 2.0,
            max_wait: 20.0 * 2.0 * PI,
            threshold: 0.999,
            apply_flip: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KickGateReport {
    pub gate: GateReport,
    /// Time of the second kick, if a revival above threshold was found.
    pub revival_time: Option<f64>,
    pub best_revival_time: f64,
    pub best_revival_fidelity: f64,
    /// Mean `Σ_p ⟨n_p⟩` left on the modes, averaged over the basis inputs.
    pub residual_excitation: f64,
}

struct KickSystem {
    space: SpaceDescriptor,
    kicks: Displacements,
    freqs: Vec<(usize, f64)>,
    basis: Vec<StateVector>,
}

impl KickSystem {
    fn new(setup: &KickGateSetup) -> Result<Self, SchemeError> {
        let mut factors = vec![Factor::qubit(), Factor::qubit()];
        factors.extend(setup.modes.iter().map(|_| Factor::Phonon { cutoff: setup.cutoff }));
        let space = SpaceDescriptor::new(factors)?;
        let etas: Vec<(usize, f64)> = setup.modes.iter().enumerate().map(|(i, m)| (i + 2, m.1)).collect();
        let kicks = kick_displacements(&space, &etas)?;
        let freqs = setup.modes.iter().enumerate().map(|(i, m)| (i + 2, m.0)).collect();
        let mut basis = Vec::new();
        for c in 0..2 {
            for t in 0..2 {
                let mut lv = vec![c, t];
                lv.extend(setup.modes.iter().map(|_| 0));
                basis.push(StateVector::basis(&space, &lv)?);
            }
        }
        Ok(Self { space, kicks, freqs, basis })
    }

    /// Branch-selective flip: ion 2 is flipped in the branch where ion 1
    /// reads `|0⟩` after the kick, i.e. the branch that started in `|1⟩`.
    fn flip(&self, psi: &StateVector) -> Result<StateVector, SchemeError> {
        let flipped = psi
            .apply_local(0, &local::projector(2, 0))?
            .apply_local(1, &(local::sigma_plus(2) + local::sigma_minus(2)))?;
        let kept = psi.apply_local(0, &local::projector(2, 1))?;
        Ok(StateVector::new(self.space.clone(), flipped.amplitudes() + kept.amplitudes())?)
    }

    /// States just after the flip, one per basis input.
    fn prepare(&self, setup: &KickGateSetup) -> Result<Vec<StateVector>, SchemeError> {
        self.basis
            .iter()
            .map(|b| {
                let psi = free(&apply_kick(b, 0, &self.kicks)?, &self.freqs, setup.flip_time)?;
                if setup.apply_flip { self.flip(&psi) } else { Ok(psi) }
            })
            .collect()
    }

    fn finish(&self, mid: &[StateVector], setup: &KickGateSetup, t: f64) -> Result<Vec<StateVector>, SchemeError> {
        mid.iter().map(|psi| apply_kick(&free(psi, &self.freqs, t - setup.flip_time)?, 0, &self.kicks)).collect()
    }

    fn target(&self, setup: &KickGateSetup) -> CMatrix {
        let mut t = CMatrix::identity(4, 4);
        if setup.apply_flip {
            t[(2, 2)] = C64::new(0.0, 0.0);
            t[(3, 3)] = C64::new(0.0, 0.0);
            t[(2, 3)] = ONE;
            t[(3, 2)] = ONE;
        }
        t
    }

    fn fidelity_at(&self, mid: &[StateVector], setup: &KickGateSetup, t: f64) -> Result<f64, SchemeError> {
        let out = self.finish(mid, setup, t)?;
        Ok(process_fidelity(&self.target(setup), &block(&self.basis, &out)?))
    }
}

/// Kick, wait, flip ion 2 on one branch, wait for recombination, kick again.
/// The recombination time is the best revival in `[flip_time, max_wait]`.
pub fn kick_gate(setup: &KickGateSetup) -> Result<KickGateReport, SchemeError> {
    if setup.modes.is_empty() {
        return Err(SchemeError::InvalidParameter { name: "modes", value: 0.0 });
    }
    if !(setup.flip_time >= 0.0 && setup.max_wait > setup.flip_time) {
        return Err(SchemeError::InvalidParameter { name: "max_wait", value: setup.max_wait });
    }
    let sys = KickSystem::new(setup)?;
    let mid = sys.prepare(setup)?;

    // Coarse scan, then golden-section refinement around the best cells.
    let w_max = setup.modes.iter().map(|m| m.0).fold(0.0, f64::max);
    let eta_max = setup.modes.iter().map(|m| m.1.abs()).fold(0.0, f64::max).max(0.1);
    let step = (0.05 / (w_max * eta_max)).min(0.05);
    let n = ((setup.max_wait - setup.flip_time) / step).ceil() as usize;
    let mut scan = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = (setup.flip_time + k as f64 * step).min(setup.max_wait);
        scan.push((t, sys.fidelity_at(&mid, setup, t)?));
    }
    let mut peaks: Vec<usize> = (0..scan.len())
        .filter(|&k| {
            let f = scan[k].1;
            (k == 0 || scan[k - 1].1 <= f) && (k + 1 == scan.len() || scan[k + 1].1 <= f)
        })
        .collect();
    peaks.sort_by(|a, b| scan[*b].1.total_cmp(&scan[*a].1));
    let top = peaks.first().map(|&k| scan[k].1).unwrap_or(0.0);
    let keep = peaks.iter().take_while(|&&k| scan[k].1 >= top - 1e-2).count().max(8);
    peaks.truncate(keep.min(64));
    let mut candidates = vec![scan[0]];
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    for k in peaks {
        let (mut lo, mut hi) = (scan[k.saturating_sub(1)].0, scan[(k + 1).min(scan.len() - 1)].0);
        let mut x1 = hi - golden * (hi - lo);
        let mut x2 = lo + golden * (hi - lo);
        let (mut f1, mut f2) = (sys.fidelity_at(&mid, setup, x1)?, sys.fidelity_at(&mid, setup, x2)?);
        for _ in 0..60 {
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + golden * (hi - lo);
                f2 = sys.fidelity_at(&mid, setup, x2)?;
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - golden * (hi - lo);
                f1 = sys.fidelity_at(&mid, setup, x1)?;
            }
        }
        candidates.extend([(x1, f1), (x2, f2), scan[k]]);
    }
    // Earliest time among the (numerically) best.
    let best_f = candidates.iter().map(|c| c.1).fold(0.0, f64::max);
    let best_t = candidates.iter().filter(|c| c.1 >= best_f - 1e-9).map(|c| c.0).fold(f64::INFINITY, f64::min);

    let mut gate = GateReport::new("kick", best_t);
    let revival_time = if best_f >= setup.threshold {
        Some(best_t)
    } else {
        let msg = format!(
            "no revival above {} within t ≤ {:.4}; best {:.6} at t = {:.4}",
            setup.threshold, setup.max_wait, best_f, best_t
        );
        log::warn!("{msg}");
        gate.warnings.push(msg);
        None
    };
    let out = sys.finish(&mid, setup, best_t)?;
    let m = block(&sys.basis, &out)?;
    gate.fidelity = process_fidelity(&sys.target(setup), &m);
    gate.sectors.push(SectorFidelity { n: 0, fidelity: gate.fidelity });
    gate.sector_unitaries.push(m);
    gate.leakage = out.iter().map(StateVector::truncation_leakage).fold(0.0, f64::max);
    let mut excitation = 0.0;
    for psi in &out {
        for &(f, _) in &sys.freqs {
            let pops = psi.factor_populations(f)?;
            excitation += pops.iter().enumerate().map(|(n, p)| n as f64 * p).sum::<f64>();
        }
    }
    gate.final_state = out.into_iter().next();
    check_leakage(gate.leakage)?;
    Ok(KickGateReport {
        gate,
        revival_time,
        best_revival_time: best_t,
        best_revival_fidelity: best_f,
        residual_excitation: excitation / 4.0,
    })
}
