//! Phonon-number-dependent Stark shift, adiabatic passages and the
//! controlled-phase gate built from them.
//!
//! The target ion is a qubit (`|g⟩ = 0`, `|e⟩ = 1`). The control ion has four
//! levels: the qubit `|0⟩, |1⟩`, a storage level `|2⟩` and the intermediate
//! `|3⟩` of the passage.

use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;

use crate::chain::IonChain;
use crate::dynamics::{
    evolve_timedep, EvolutionOptions, ParametricHamiltonian, PulseEnvelope, PulseShape, TimeGrid,
};
use crate::effham::fixtures;
use crate::hilbert::{
    embed, ladder, local, number, spin_ops, CMatrix, CVector, Factor, Operator, SpaceDescriptor, StateVector, C64,
    ONE,
};

use super::{block, check_leakage, process_fidelity, DriveKind, GateReport, LaserDrive, SchemeError, SectorFidelity};

const PHASE_PER_STEP: f64 = 0.04;

/// Minimum detuning (in units of ω_x) for the integrated phase gate.
pub const MIN_STARK_DETUNING: f64 = 10.0;

/// Diagonal operator with entry `f(levels)` on every basis state.
fn diagonal(space: &SpaceDescriptor, f: impl Fn(&[usize]) -> C64) -> Operator {
    let d = CVector::from_iterator(space.dim(), (0..space.dim()).map(|i| f(&space.levels_of(i))));
    Operator::new(space.clone(), CMatrix::from_diagonal(&d)).expect("dimension matches")
}

/// `S_t = exp[−iπ n̂(σ_z + 1/2)]` for qubit factor `ion` and phonon factor
/// `mode` of `space`: `(−1)ⁿ` on `|e⟩|n⟩`, 1 on `|g⟩|n⟩`.
pub fn st_operator(space: &SpaceDescriptor, ion: usize, mode: usize) -> Result<Operator, SchemeError> {
    space.ion_levels(ion)?;
    space.phonon_cutoff(mode)?;
    Ok(diagonal(space, |lv| if lv[ion] == 1 && lv[mode] % 2 == 1 { -ONE } else { ONE }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepMode {
    Analytic,
    Integrated,
}

/// Standing-wave Stark-shift gate parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DhmSetup {
    pub drive: LaserDrive,
    pub omega_x: f64,
    /// Highest bus Fock number checked.
    pub max_n: usize,
    pub cutoff: usize,
}

impl DhmSetup {
    /// `τ = πΔ/(Ω²η²)`.
    pub fn duration(&self) -> f64 {
        let g = self.drive.rabi * self.drive.bus_eta();
        PI * self.drive.detuning / (g * g)
    }

    fn validate(&self, mode: StepMode) -> Result<(), SchemeError> {
        self.drive.expect(DriveKind::StandingWaveNode)?;
        if self.cutoff < self.max_n + 3 {
            return Err(SchemeError::InvalidParameter { name: "cutoff", value: self.cutoff as f64 });
        }
        if mode == StepMode::Integrated && self.drive.detuning < MIN_STARK_DETUNING * self.omega_x {
            return Err(SchemeError::DetuningTooSmall {
                detuning: self.drive.detuning,
                limit: MIN_STARK_DETUNING * self.omega_x,
            });
        }
        Ok(())
    }

    /// Standing-wave interaction on (`ion`, `mode`) of `space`, with the
    /// level shift `(Ω²η²/2Δ)(n̂ − σ_z)` removed by a compensating static term.
    pub fn hamiltonian(&self, space: &SpaceDescriptor, ion: usize, mode: usize) -> Result<ParametricHamiltonian, SchemeError> {
        let d = &self.drive;
        let eta = d.bus_eta();
        let terms = fixtures::standing_wave(space, ion, mode, d.rabi, eta, d.detuning, self.omega_x)?;
        let shift = d.rabi * d.rabi * eta * eta / (2.0 * d.detuning);
        let comp = (&number(space, mode)? - &spin_ops(space, ion)?.z).scale_real(-shift);
        Ok(ParametricHamiltonian::new(space).with_harmonic_terms(&terms).with_static(&comp))
    }
}

/// The phase gate, built analytically or by integrating the standing-wave
/// interaction for `τ`. Returns the operator on `[qubit, mode]` and a report
/// with one `2×2` block per Fock sector `n ≤ max_n`.
pub fn dhm_phase_gate(setup: &DhmSetup, mode: StepMode) -> Result<(Operator, GateReport), SchemeError> {
    setup.validate(mode)?;
    let space = SpaceDescriptor::new(vec![Factor::qubit(), Factor::Phonon { cutoff: setup.cutoff }])?;
    let ideal = st_operator(&space, 0, 1)?;
    let duration = setup.duration();
    let realized = match mode {
        StepMode::Analytic => ideal.clone(),
        StepMode::Integrated => {
            let h = setup.hamiltonian(&space, 0, 1)?;
            let grid = TimeGrid::resolving(duration, h.max_frequency(), PHASE_PER_STEP);
            let mut m = CMatrix::zeros(space.dim(), space.dim());
            for c in 0..space.dim() {
                let b = StateVector::basis(&space, &space.levels_of(c))?;
                let r = evolve_timedep(&h, &b, grid, &EvolutionOptions::default())?;
                m.set_column(c, r.state.amplitudes());
            }
            Operator::new(space.clone(), m)?
        }
    };
    let mut report = GateReport::new(if mode == StepMode::Analytic { "S_t analytic" } else { "S_t integrated" }, duration);
    let mut basis = Vec::new();
    for n in 0..=setup.max_n {
        let sector: Vec<StateVector> =
            (0..2).map(|s| StateVector::basis(&space, &[s, n])).collect::<Result<_, _>>()?;
        let out: Vec<StateVector> = sector.iter().map(|b| realized.apply(b)).collect::<Result<_, _>>()?;
        report.leakage = out.iter().map(StateVector::truncation_leakage).fold(report.leakage, f64::max);
        let m = block(&sector, &out)?;
        let want = block(&sector, &sector.iter().map(|b| ideal.apply(b)).collect::<Result<Vec<_>, _>>()?)?;
        report.sectors.push(SectorFidelity { n, fidelity: process_fidelity(&want, &m) });
        report.sector_unitaries.push(m);
        basis.extend(sector);
    }
    let outs: Vec<StateVector> = basis.iter().map(|b| realized.apply(b)).collect::<Result<_, _>>()?;
    let wants: Vec<StateVector> = basis.iter().map(|b| ideal.apply(b)).collect::<Result<_, _>>()?;
    report.fidelity = process_fidelity(&block(&basis, &wants)?, &block(&basis, &outs)?);
    check_leakage(report.leakage)?;
    Ok((realized, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Passage {
    /// `A⁺: |1⟩|n⟩ → |2⟩|n+1⟩`, Stokes before pump.
    Forward,
    /// `A⁻: |2⟩|n+1⟩ → |1⟩|n⟩`, pump before Stokes.
    Backward,
}

/// Pump (`|1⟩ ↔ |3⟩`) and Stokes (`|2⟩|n+1⟩ ↔ |3⟩|n⟩`) envelopes. The Stokes
/// value is the sideband Rabi frequency at `n = 0`, `Ω_S η`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StirapPulses {
    pub pump: PulseEnvelope,
    pub stokes: PulseEnvelope,
    /// One-photon detuning `Δ` of `|3⟩`.
    pub detuning: f64,
}

impl StirapPulses {
    /// Gaussians of width `T/8` whose centres are `0.225·T` apart inside
    /// `[0, T]`, in the counter-intuitive order for `direction`.
    pub fn counterintuitive(peak: f64, duration: f64, detuning: f64, direction: Passage) -> Result<Self, SchemeError> {
        if !(duration > 0.0) {
            return Err(SchemeError::InvalidParameter { name: "duration", value: duration });
        }
        let shape = PulseShape::Gaussian { sigma: duration / 8.0 };
        let delay = 0.225 * duration;
        let early = PulseEnvelope::new(shape, peak, 0.0, duration - delay)?;
        let late = PulseEnvelope::new(shape, peak, delay, duration)?;
        let (stokes, pump) = match direction {
            Passage::Forward => (early, late),
            Passage::Backward => (late, early),
        };
        Ok(Self { pump, stokes, detuning })
    }

    pub fn duration(&self) -> f64 {
        self.pump.end.max(self.stokes.end) - self.pump.start.min(self.stokes.start)
    }

    pub fn start(&self) -> f64 {
        self.pump.start.min(self.stokes.start)
    }

    /// `T·Ω_peak` with the weaker of the two peaks.
    pub fn adiabaticity(&self) -> f64 {
        self.duration() * self.pump.peak.min(self.stokes.peak)
    }

    /// Passage Hamiltonian on control factor `ion` and phonon factor `mode`.
    pub fn hamiltonian(&self, space: &SpaceDescriptor, ion: usize, mode: usize) -> Result<ParametricHamiltonian, SchemeError> {
        let levels = space.ion_levels(ion)?;
        if levels != 4 {
            return Err(SchemeError::InvalidParameter { name: "control levels", value: levels as f64 });
        }
        let (a, _) = ladder(space, mode)?;
        let p31 = embed(space, ion, &local::transition(4, 3, 1))?;
        let p32 = embed(space, ion, &local::transition(4, 3, 2))?;
        let pump = &p31 + &p31.adjoint();
        let stokes_op = &p32 * &a;
        let stokes = &stokes_op + &stokes_op.adjoint();
        let (pe, se) = (self.pump, self.stokes);
        let cutoff = space.phonon_cutoff(mode)? as f64;
        let rate = pe.max_rate().max(se.max_rate());
        let strongest = pe.peak.max(se.peak * cutoff.sqrt());
        Ok(ParametricHamiltonian::new(space)
            .with_static(&embed(space, ion, &local::projector(4, 3))?.scale_real(self.detuning))
            .with_term(&pump, Arc::new(move |t| C64::new(0.5 * pe.value(t), 0.0)))
            .with_term(&stokes, Arc::new(move |t| C64::new(0.5 * se.value(t), 0.0)))
            .with_max_frequency(rate.max(strongest).max(self.detuning.abs())))
    }
}

/// Minimum `T·Ω_peak` below which adiabaticity is flagged.
pub const ADIABATICITY_WARNING: f64 = 20.0;

#[derive(Clone, Debug)]
pub struct PassageOutcome {
    pub state: StateVector,
    /// Largest population of `|3⟩` during the passage.
    pub max_intermediate: f64,
    pub leakage: f64,
    pub warnings: Vec<String>,
}

/// Integrates one passage on `psi0`.
pub fn stirap_transfer(
    pulses: &StirapPulses,
    psi0: &StateVector,
    ion: usize,
    mode: usize,
) -> Result<PassageOutcome, SchemeError> {
    let space = psi0.space();
    let h = pulses.hamiltonian(space, ion, mode)?;
    let t0 = pulses.start();
    let t1 = t0 + pulses.duration();
    let steps = ((t1 - t0) * h.max_frequency() / PHASE_PER_STEP).ceil() as usize;
    let opts = EvolutionOptions {
        observables: vec![embed(space, ion, &local::projector(4, 3))?],
        sample_every: 1,
        ..Default::default()
    };
    let r = evolve_timedep(&h, psi0, TimeGrid::new(t0, t1, steps), &opts)?;
    let mut warnings = Vec::new();
    if pulses.adiabaticity() < ADIABATICITY_WARNING {
        let msg = format!("T·Ω_peak = {:.3} < {ADIABATICITY_WARNING}; adiabaticity at risk", pulses.adiabaticity());
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(PassageOutcome {
        max_intermediate: r.samples.iter().map(|s| s.values[0]).fold(0.0, f64::max),
        leakage: r.leakage,
        state: r.state,
        warnings,
    })
}

/// Transfer settings shared by the passage reports.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StirapSetup {
    pub peak: f64,
    pub duration: f64,
    pub detuning: f64,
    pub cutoff: usize,
}

fn control_space(cutoff: usize) -> Result<SpaceDescriptor, SchemeError> {
    Ok(SpaceDescriptor::new(vec![Factor::Ion { levels: 4 }, Factor::Phonon { cutoff }])?)
}

/// `A⁺` (or `A⁻`) on `|1⟩|n⟩` (or `|2⟩|n+1⟩`) for each `n`; sector
/// fidelity is the population reaching the partner state.
pub fn stirap_report(setup: &StirapSetup, direction: Passage, sectors: &[usize]) -> Result<GateReport, SchemeError> {
    let space = control_space(setup.cutoff)?;
    let pulses = StirapPulses::counterintuitive(setup.peak, setup.duration, setup.detuning, direction)?;
    let name = if direction == Passage::Forward { "A+" } else { "A-" };
    let mut report = GateReport::new(name, pulses.duration());
    for &n in sectors {
        let (from, to) = match direction {
            Passage::Forward => ([1, n], [2, n + 1]),
            Passage::Backward => ([2, n + 1], [1, n]),
        };
        let out = stirap_transfer(&pulses, &StateVector::basis(&space, &from)?, 0, 1)?;
        let f = out.state.amplitude(&to)?.norm_sqr().min(1.0);
        report.sectors.push(SectorFidelity { n, fidelity: f });
        report.leakage = report.leakage.max(out.leakage);
        for w in out.warnings {
            if !report.warnings.contains(&w) {
                report.warnings.push(w);
            }
        }
        if report.final_state.is_none() {
            report.final_state = Some(out.state);
        }
    }
    report.fidelity = report.min_sector_fidelity();
    check_leakage(report.leakage)?;
    Ok(report)
}

/// `A⁻∘A⁺` on `|1⟩|n⟩`; sector fidelity is the return probability.
pub fn stirap_round_trip(setup: &StirapSetup, sectors: &[usize]) -> Result<GateReport, SchemeError> {
    let space = control_space(setup.cutoff)?;
    let fwd = StirapPulses::counterintuitive(setup.peak, setup.duration, setup.detuning, Passage::Forward)?;
    let bwd = StirapPulses::counterintuitive(setup.peak, setup.duration, setup.detuning, Passage::Backward)?;
    let mut report = GateReport::new("A- A+", fwd.duration() + bwd.duration());
    for &n in sectors {
        let b = StateVector::basis(&space, &[1, n])?;
        let mid = stirap_transfer(&fwd, &b, 0, 1)?;
        let out = stirap_transfer(&bwd, &mid.state, 0, 1)?;
        let f = b.inner(&out.state)?.norm_sqr().min(1.0);
        report.sectors.push(SectorFidelity { n, fidelity: f });
        report.leakage = report.leakage.max(mid.leakage).max(out.leakage);
    }
    report.fidelity = report.min_sector_fidelity();
    check_leakage(report.leakage)?;
    Ok(report)
}

/// Ideal passage on (`ion`, `mode`): `|1⟩|n⟩ → −|2⟩|n+1⟩`,
/// `|2⟩|n+1⟩ → |1⟩|n⟩`, identity elsewhere. `A⁻` is its adjoint.
pub fn ideal_passage(space: &SpaceDescriptor, ion: usize, mode: usize, direction: Passage) -> Result<Operator, SchemeError> {
    if space.ion_levels(ion)? != 4 {
        return Err(SchemeError::InvalidParameter { name: "control levels", value: space.ion_levels(ion)? as f64 });
    }
    let cutoff = space.phonon_cutoff(mode)?;
    let dim = space.dim();
    let mut m = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        let lv = space.levels_of(i);
        let (level, n) = (lv[ion], lv[mode]);
        let partner = |l: usize, k: usize| {
            let mut p = lv.clone();
            p[ion] = l;
            p[mode] = k;
            space.index_of(&p).expect("valid levels")
        };
        if level == 1 && n < cutoff {
            m[(partner(2, n + 1), i)] = -ONE;
        } else if level == 2 && n >= 1 {
            m[(partner(1, n - 1), i)] = ONE;
        } else {
            m[(i, i)] = ONE;
        }
    }
    let op = Operator::new(space.clone(), m)?;
    Ok(match direction {
        Passage::Forward => op,
        Passage::Backward => op.adjoint(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrotStep {
    /// Stark-shift phase gate on the target.
    St,
    /// `A⁺` on the control.
    APlus,
    /// `A⁻` on the control.
    AMinus,
}

impl FromStr for CrotStep {
    type Err = SchemeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "S_t" | "St" | "S" => Ok(Self::St),
            "A+" | "A+_c" | "Aplus" => Ok(Self::APlus),
            "A-" | "A-_c" | "Aminus" => Ok(Self::AMinus),
            other => Err(SchemeError::UndefinedStep(other.to_string())),
        }
    }
}

impl std::fmt::Display for CrotStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::St => "S_t",
            Self::APlus => "A+",
            Self::AMinus => "A-",
        })
    }
}

pub fn parse_program<S: AsRef<str>>(steps: &[S]) -> Result<Vec<CrotStep>, SchemeError> {
    steps.iter().map(|s| s.as_ref().parse()).collect()
}

/// `[S_t, A⁺, S_t, A⁻]`: the controlled phase is independent of the bus
/// occupation.
pub fn default_program() -> Vec<CrotStep> {
    vec![CrotStep::St, CrotStep::APlus, CrotStep::St, CrotStep::AMinus]
}

/// `[A⁺, S_t, A⁻]`: leaves an occupation-dependent phase.
pub fn single_s_program() -> Vec<CrotStep> {
    vec![CrotStep::APlus, CrotStep::St, CrotStep::AMinus]
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrotSetup {
    pub program: Vec<CrotStep>,
    pub st_mode: StepMode,
    pub passage_mode: StepMode,
    pub sectors: Vec<usize>,
    pub cutoff: usize,
    /// Used when `st_mode` is integrated.
    pub dhm: Option<DhmSetup>,
    /// Used when `passage_mode` is integrated.
    pub stirap: Option<StirapSetup>,
}

impl CrotSetup {
    pub fn analytic(program: Vec<CrotStep>, sectors: Vec<usize>) -> Self {
        let cutoff = sectors.iter().copied().max().unwrap_or(0) + 3;
        Self { program, st_mode: StepMode::Analytic, passage_mode: StepMode::Analytic, sectors, cutoff, dhm: None, stirap: None }
    }
}

/// Factor order `[control (4 levels), target qubit, bus]`.
pub fn crot_space(cutoff: usize) -> Result<SpaceDescriptor, SchemeError> {
    Ok(SpaceDescriptor::new(vec![Factor::Ion { levels: 4 }, Factor::qubit(), Factor::Phonon { cutoff }])?)
}

enum Stage {
    Matrix(Operator),
    Evolve(ParametricHamiltonian, TimeGrid),
}

fn stages(setup: &CrotSetup, space: &SpaceDescriptor) -> Result<Vec<Stage>, SchemeError> {
    let missing = |name| SchemeError::InvalidParameter { name, value: f64::NAN };
    setup
        .program
        .iter()
        .map(|step| match (step, setup.st_mode, setup.passage_mode) {
            (CrotStep::St, StepMode::Analytic, _) => Ok(Stage::Matrix(st_operator(space, 1, 2)?)),
            (CrotStep::St, StepMode::Integrated, _) => {
                let dhm = setup.dhm.as_ref().ok_or(missing("dhm"))?;
                dhm.drive.expect(DriveKind::StandingWaveNode)?;
                if dhm.drive.detuning < MIN_STARK_DETUNING * dhm.omega_x {
                    return Err(SchemeError::DetuningTooSmall { detuning: dhm.drive.detuning, limit: MIN_STARK_DETUNING * dhm.omega_x });
                }
                let h = dhm.hamiltonian(space, 1, 2)?;
                let grid = TimeGrid::resolving(dhm.duration(), h.max_frequency(), PHASE_PER_STEP);
                Ok(Stage::Evolve(h, grid))
            }
            (CrotStep::APlus | CrotStep::AMinus, _, StepMode::Analytic) => {
                let dir = if *step == CrotStep::APlus { Passage::Forward } else { Passage::Backward };
                Ok(Stage::Matrix(ideal_passage(space, 0, 2, dir)?))
            }
            (CrotStep::APlus | CrotStep::AMinus, _, StepMode::Integrated) => {
                let s = setup.stirap.as_ref().ok_or(missing("stirap"))?;
                let dir = if *step == CrotStep::APlus { Passage::Forward } else { Passage::Backward };
                let p = StirapPulses::counterintuitive(s.peak, s.duration, s.detuning, dir)?;
                let h = p.hamiltonian(space, 0, 2)?;
                let steps = (p.duration() * h.max_frequency() / PHASE_PER_STEP).ceil() as usize;
                Ok(Stage::Evolve(h, TimeGrid::new(p.start(), p.start() + p.duration(), steps)))
            }
        })
        .collect()
}

fn run_stages(stages: &[Stage], psi0: &StateVector) -> Result<StateVector, SchemeError> {
    let mut psi = psi0.clone();
    for s in stages {
        psi = match s {
            Stage::Matrix(op) => op.apply(&psi)?,
            Stage::Evolve(h, grid) => evolve_timedep(h, &psi, *grid, &EvolutionOptions::default())?.state,
        };
    }
    Ok(psi)
}

/// Applies the program to `psi0`, which must live on [`crot_space`].
pub fn run_program(setup: &CrotSetup, psi0: &StateVector) -> Result<StateVector, SchemeError> {
    run_stages(&stages(setup, psi0.space())?, psi0)
}

/// `diag(1, 1, 1, −1)` in the basis `{0g, 0e, 1g, 1e}`.
pub fn controlled_z() -> CMatrix {
    let mut m = CMatrix::identity(4, 4);
    m[(3, 3)] = -ONE;
    m
}

/// Runs the program on `|c⟩|t⟩|n⟩` for each sector and compares the
/// `4×4` block with the controlled-Z.
pub fn crot_sequence(setup: &CrotSetup) -> Result<GateReport, SchemeError> {
    let space = crot_space(setup.cutoff)?;
    let max_n = setup.sectors.iter().copied().max().unwrap_or(0);
    if setup.cutoff < max_n + 2 {
        return Err(SchemeError::InvalidParameter { name: "cutoff", value: setup.cutoff as f64 });
    }
    let stages = stages(setup, &space)?;
    let target = controlled_z();
    let name: Vec<String> = setup.program.iter().map(ToString::to_string).collect();
    let mut report = GateReport::new(&name.join(" "), 0.0);
    for &n in &setup.sectors {
        let basis: Vec<StateVector> =
            (0..4).map(|k| StateVector::basis(&space, &[k / 2, k % 2, n])).collect::<Result<_, _>>()?;
        let out: Vec<StateVector> = basis.iter().map(|b| run_stages(&stages, b)).collect::<Result<_, _>>()?;
        report.leakage = out.iter().map(StateVector::truncation_leakage).fold(report.leakage, f64::max);
        let m = block(&basis, &out)?;
        report.sectors.push(SectorFidelity { n, fidelity: process_fidelity(&target, &m) });
        report.sector_unitaries.push(m);
    }
    report.fidelity = report.min_sector_fidelity();
    check_leakage(report.leakage)?;
    Ok(report)
}

/// Spurious phase from populated non-bus modes during `S_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectatorReport {
    /// Relative phase between `|e⟩` and `|g⟩`, radians.
    pub phase_error: f64,
    /// `1 − |Tr(S†S′)/2|²` on the target qubit, `sin²(Δφ/2)`.
    pub fidelity_loss: f64,
}

/// From `Ĥ_eff = −(Ω²/2Δ) Σ_p η_p²(2n̂_p + 1) σ_z` over `τ = πΔ/(Ω²η_bus²)`:
/// `Δφ = π Σ_{p≠bus} (η_p²/η_bus²) n_p`.
pub fn spectator_phase_from_etas(eta_bus: f64, spectators: &[(f64, usize)]) -> Result<SpectatorReport, SchemeError> {
    if eta_bus == 0.0 || !eta_bus.is_finite() {
        return Err(SchemeError::InvalidParameter { name: "eta_bus", value: eta_bus });
    }
    let phase: f64 = spectators.iter().map(|&(eta, n)| PI * (eta * eta) / (eta_bus * eta_bus) * n as f64).sum();
    Ok(SpectatorReport { phase_error: phase, fidelity_loss: (0.5 * phase).sin().powi(2) })
}

/// Same, with Lamb–Dicke ratios for `target_ion` taken from the chain:
/// `η_p ∝ b⁽ᵖ⁾_n/√ω_p`. `populations` lists `(p, n_p)` for spectators.
pub fn spectator_phase_error(
    chain: &IonChain,
    target_ion: usize,
    bus_mode: usize,
    populations: &[(usize, usize)],
) -> Result<SpectatorReport, SchemeError> {
    let modes = chain.normal_modes()?;
    let eta = |p: usize| -> Result<f64, SchemeError> {
        let m = modes.get(p.wrapping_sub(1)).ok_or(SchemeError::InvalidParameter { name: "mode", value: p as f64 })?;
        let b = *m.b.get(target_ion).ok_or(SchemeError::InvalidParameter { name: "target_ion", value: target_ion as f64 })?;
        Ok(b / m.frequency_ratio.sqrt())
    };
    let bus = eta(bus_mode)?;
    let spectators = populations
        .iter()
        .filter(|(p, _)| *p != bus_mode)
        .map(|&(p, n)| Ok((eta(p)?, n)))
        .collect::<Result<Vec<_>, SchemeError>>()?;
    spectator_phase_from_etas(bus, &spectators)
}
