//! Per-scheme parameter schemas and runners.

use std::f64::consts::PI;

use phonon_bus::chain::{equilibrium_positions, ChainError, IonChain};
use phonon_bus::dynamics::{DynamicsError, NoiseField, NoiseModel};
use phonon_bus::hilbert::CMatrix;
use phonon_bus::schemes::{
    crot_sequence, dhm_phase_gate, kick_gate, ms_gate, parse_program, simulate_heating, spectator_phase_error,
    spectator_phase_from_etas, stirap_report, stirap_round_trip, CrotSetup, DhmSetup, DriveKind, GateDuration,
    HeatingSetup, KickGateSetup, LaserDrive, ModeInit, MsSetup, Passage, SchemeError, StepMode, StirapSetup,
};
use phonon_bus::units::{ATOMIC_MASS_UNIT, ELEMENTARY_CHARGE, HBAR};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::config::Units;
use crate::output::{Cell, Table};
use crate::{CliError, Scheme};

/// Ion used to give natural-unit heating runs a physical scale; results
/// in natural units do not depend on it.
const REFERENCE_MASS_U: f64 = 40.0;
const REFERENCE_OMEGA: f64 = 2.0 * PI * 1e6;

pub struct PointResult {
    pub tables: Vec<Table>,
    pub warnings: Vec<String>,
}

pub fn scheme_error(e: SchemeError) -> CliError {
    let numerical = match &e {
        SchemeError::Leakage { .. } | SchemeError::NotBranchForm(_) => true,
        SchemeError::Dynamics(d) => dynamics_numerical(d),
        SchemeError::Chain(c) => chain_numerical(c),
        _ => false,
    };
    if numerical { CliError::Numerical(e.to_string()) } else { CliError::Config(e.to_string()) }
}

fn dynamics_numerical(d: &DynamicsError) -> bool {
    matches!(
        d,
        DynamicsError::NormDrift(_)
            | DynamicsError::NotHermitian(_)
            | DynamicsError::UnderResolved { .. }
            | DynamicsError::TrialFailed { .. }
    )
}

fn chain_numerical(c: &ChainError) -> bool {
    matches!(c, ChainError::NoConvergence { .. } | ChainError::NegativeEigenvalue(_) | ChainError::ComModeMismatch(_))
}

fn chain_error(e: ChainError) -> CliError {
    if chain_numerical(&e) { CliError::Numerical(e.to_string()) } else { CliError::Config(e.to_string()) }
}

fn parse<P: DeserializeOwned>(scheme: Scheme, params: &Map<String, Value>) -> Result<P, CliError> {
    serde_json::from_value(Value::Object(params.clone()))
        .map_err(|e| CliError::Config(format!("params for {}: {e}", scheme.name())))
}

fn positive(name: &str, x: f64) -> Result<f64, CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(CliError::Config(format!("{name} must be positive and finite, got {x}")))
    }
}

/// `ω_x` in rad/s under SI units, 1 under natural units.
fn trap_scale(units: Units, omega_x: Option<f64>) -> Result<f64, CliError> {
    match (units, omega_x) {
        (Units::Natural, None) => Ok(1.0),
        (Units::Natural, Some(_)) => {
            Err(CliError::Config("omega_x is only accepted with units = \"si\"; natural units fix ω_x = 1".into()))
        }
        (Units::Si, None) => Err(CliError::Config("units = \"si\" requires omega_x (rad/s)".into())),
        (Units::Si, Some(w)) => positive("omega_x", w),
    }
}

fn si_only(units: Units, name: &str, value: Option<f64>, default: f64) -> Result<f64, CliError> {
    match (units, value) {
        (Units::Natural, Some(_)) => Err(CliError::Config(format!("{name} is only accepted with units = \"si\""))),
        (_, Some(v)) => positive(name, v),
        (_, None) => Ok(default),
    }
}

fn default_n() -> usize {
    2
}
fn one_usize() -> usize {
    1
}
fn three_usize() -> usize {
    3
}
fn default_trials() -> usize {
    200
}
fn default_heat_cutoff() -> usize {
    12
}
fn default_samples() -> usize {
    20
}
fn default_heat_modes() -> Vec<usize> {
    vec![1]
}
fn unit() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn kick_cutoff() -> usize {
    24
}
fn kick_threshold() -> f64 {
    0.999
}
fn ms_detuning() -> f64 {
    20.0
}
fn ms_cutoff() -> usize {
    8
}
fn low_sectors() -> Vec<usize> {
    vec![0, 1, 2]
}
fn dhm_rabi() -> f64 {
    25.0
}
fn dhm_eta() -> f64 {
    0.1
}
fn dhm_detuning() -> f64 {
    50.0
}
fn stirap_duration() -> f64 {
    100.0
}
fn stirap_cutoff() -> usize {
    6
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Step {
    Analytic,
    #[default]
    Integrated,
}

impl From<Step> for StepMode {
    fn from(s: Step) -> Self {
        match s {
            Step::Analytic => StepMode::Analytic,
            Step::Integrated => StepMode::Integrated,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Model {
    #[default]
    Ou,
    Piecewise,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModesParams {
    #[serde(default = "default_n")]
    n: usize,
    mass_u: Option<f64>,
    omega_x: Option<f64>,
    charge_e: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeatParams {
    #[serde(default = "one_usize")]
    n: usize,
    e_rms: f64,
    coherence_time: f64,
    duration: f64,
    #[serde(default = "default_heat_modes")]
    modes: Vec<usize>,
    #[serde(default)]
    fock: usize,
    #[serde(default)]
    model: Model,
    #[serde(default = "default_trials")]
    trials: usize,
    #[serde(default = "default_heat_cutoff")]
    cutoff: usize,
    #[serde(default = "default_samples")]
    samples: usize,
    /// Growth rates are fitted over `t ≥ fit_from`.
    #[serde(default)]
    fit_from: f64,
    mass_u: Option<f64>,
    omega_x: Option<f64>,
    charge_e: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KickParams {
    #[serde(default = "unit")]
    eta: f64,
    /// `[ω_p, η_p]` per mode; defaults to the single mode `[ω_x, eta]`.
    modes: Option<Vec<[f64; 2]>>,
    #[serde(default = "kick_cutoff")]
    cutoff: usize,
    flip_time: Option<f64>,
    max_wait: Option<f64>,
    #[serde(default = "kick_threshold")]
    threshold: f64,
    #[serde(default = "yes")]
    flip: bool,
    omega_x: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MsParams {
    #[serde(default = "unit")]
    rabi: f64,
    eta: Option<f64>,
    /// Target coupling; `eta` is derived from it when not given.
    chi: Option<f64>,
    #[serde(default = "ms_detuning")]
    detuning: f64,
    #[serde(default = "ms_cutoff")]
    cutoff: usize,
    #[serde(default = "low_sectors")]
    sectors: Vec<usize>,
    duration: Option<f64>,
    #[serde(default)]
    convergence_check: bool,
    omega_x: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DhmParams {
    #[serde(default = "dhm_rabi")]
    rabi: f64,
    #[serde(default = "dhm_eta")]
    eta: f64,
    #[serde(default = "dhm_detuning")]
    detuning: f64,
    #[serde(default = "three_usize")]
    max_n: usize,
    cutoff: Option<usize>,
    #[serde(default)]
    step: Step,
    omega_x: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StirapParams {
    #[serde(default = "unit")]
    peak: f64,
    #[serde(default = "stirap_duration")]
    duration: f64,
    #[serde(default)]
    detuning: f64,
    #[serde(default = "stirap_cutoff")]
    cutoff: usize,
    #[serde(default = "low_sectors")]
    sectors: Vec<usize>,
    omega_x: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DhmDrive {
    #[serde(default = "dhm_rabi")]
    rabi: f64,
    #[serde(default = "dhm_eta")]
    eta: f64,
    #[serde(default = "dhm_detuning")]
    detuning: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StirapDrive {
    #[serde(default = "unit")]
    peak: f64,
    #[serde(default = "stirap_duration")]
    duration: f64,
    #[serde(default)]
    detuning: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CrotParams {
    program: Option<Vec<String>>,
    #[serde(default = "analytic")]
    st_step: Step,
    #[serde(default = "analytic")]
    passage_step: Step,
    sectors: Option<Vec<usize>>,
    cutoff: Option<usize>,
    dhm: Option<DhmDrive>,
    stirap: Option<StirapDrive>,
    omega_x: Option<f64>,
}

fn analytic() -> Step {
    Step::Analytic
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpectatorParams {
    #[serde(default = "three_usize")]
    n: usize,
    #[serde(default)]
    target_ion: usize,
    #[serde(default = "one_usize")]
    bus_mode: usize,
    /// `[p, n_p]` for populated spectator modes.
    populations: Option<Vec<[usize; 2]>>,
    eta_bus: Option<f64>,
    /// `[η_p, n_p]` for spectators given directly.
    spectators: Option<Vec<[f64; 2]>>,
}

/// A validated point, ready to run.
pub enum Job {
    Modes { chain: IonChain, si: bool },
    Heat(Box<HeatJob>),
    Kick { setup: KickGateSetup, scale: f64 },
    Ms { setup: MsSetup, scale: f64 },
    Dhm { setup: DhmSetup, step: StepMode, scale: f64 },
    Stirap { setup: StirapSetup, sectors: Vec<usize>, scale: f64 },
    Crot(Box<CrotSetup>),
    Spectator(SpectatorJob),
}

pub struct HeatJob {
    chain: IonChain,
    noise: NoiseField,
    setup: HeatingSetup,
    fit_from: f64,
    /// Multiplies seconds into reported time units.
    time_unit: f64,
}

pub enum SpectatorJob {
    Chain { chain: IonChain, target_ion: usize, bus_mode: usize, populations: Vec<(usize, usize)> },
    Etas { eta_bus: f64, spectators: Vec<(f64, usize)> },
}

pub fn prepare(scheme: Scheme, units: Units, params: &Map<String, Value>) -> Result<Job, CliError> {
    match scheme {
        Scheme::Modes => {
            let p: ModesParams = parse(scheme, params)?;
            let w = trap_scale(units, p.omega_x)?;
            let mass = si_only(units, "mass_u", p.mass_u, REFERENCE_MASS_U)? * ATOMIC_MASS_UNIT;
            let charge = si_only(units, "charge_e", p.charge_e, 1.0)? * ELEMENTARY_CHARGE;
            let chain = IonChain::with_charge(p.n, mass, charge, w).map_err(chain_error)?;
            Ok(Job::Modes { chain, si: units == Units::Si })
        }
        Scheme::Heat => prepare_heat(scheme, units, params),
        Scheme::Kick => {
            let p: KickParams = parse(scheme, params)?;
            let w = trap_scale(units, p.omega_x)?;
            let modes = p.modes.unwrap_or_else(|| vec![[w, p.eta]]);
            let setup = KickGateSetup {
                modes: modes.iter().map(|m| (m[0] / w, m[1])).collect(),
                cutoff: p.cutoff,
                flip_time: p.flip_time.map_or(PI / 2.0, |t| t * w),
                max_wait: p.max_wait.map_or(40.0 * PI, |t| t * w),
                threshold: p.threshold,
                apply_flip: p.flip,
            };
            Ok(Job::Kick { setup, scale: w })
        }
        Scheme::Ms => {
            let p: MsParams = parse(scheme, params)?;
            let w = trap_scale(units, p.omega_x)?;
            let (rabi, detuning) = (p.rabi / w, p.detuning / w);
            let eta = match (p.eta, p.chi) {
                (Some(_), Some(_)) => return Err(CliError::Config("give either eta or chi, not both".into())),
                (Some(e), None) => e,
                (None, chi) => {
                    let chi = positive("chi", chi.unwrap_or(0.05 * w))? / w;
                    let d2 = detuning * detuning - 1.0;
                    if d2 > 0.0 { (chi * d2 / 2.0).sqrt() / rabi } else { 0.0 }
                }
            };
            let drive = LaserDrive::new(DriveKind::Bichromatic, rabi, detuning, vec![eta]).map_err(scheme_error)?;
            let duration = match p.duration {
                Some(t) => GateDuration::Fixed(t * w),
                None => GateDuration::Auto,
            };
            let setup = MsSetup {
                drive,
                omega_x: 1.0,
                cutoff: p.cutoff,
                duration,
                sectors: p.sectors,
                convergence_check: p.convergence_check,
            };
            Ok(Job::Ms { setup, scale: w })
        }
        Scheme::Dhm => {
            let p: DhmParams = parse(scheme, params)?;
            let w = trap_scale(units, p.omega_x)?;
            let drive = LaserDrive::new(DriveKind::StandingWaveNode, p.rabi / w, p.detuning / w, vec![p.eta])
                .map_err(scheme_error)?;
            let setup = DhmSetup { drive, omega_x: 1.0, max_n: p.max_n, cutoff: p.cutoff.unwrap_or(p.max_n + 4) };
            Ok(Job::Dhm { setup, step: p.step.into(), scale: w })
        }
        Scheme::Stirap => {
            let p: StirapParams = parse(scheme, params)?;
            let w = trap_scale(units, p.omega_x)?;
            if p.sectors.is_empty() {
                return Err(CliError::Config("sectors must not be empty".into()));
            }
            let setup = StirapSetup { peak: p.peak / w, duration: p.duration * w, detuning: p.detuning / w, cutoff: p.cutoff };
            Ok(Job::Stirap { setup, sectors: p.sectors, scale: w })
        }
        Scheme::Crot => {
            let p: CrotParams = parse(scheme, params)?;
            let w = trap_scale(units, p.omega_x)?;
            let program = match p.program {
                Some(steps) => parse_program(&steps).map_err(scheme_error)?,
                None => phonon_bus::schemes::default_program(),
            };
            let sectors = p.sectors.unwrap_or_else(|| (0..=5).collect());
            let mut setup = CrotSetup::analytic(program, sectors);
            if let Some(c) = p.cutoff {
                setup.cutoff = c;
            }
            setup.st_mode = p.st_step.into();
            setup.passage_mode = p.passage_step.into();
            let max_n = setup.sectors.iter().copied().max().unwrap_or(0);
            let d = p.dhm.unwrap_or(DhmDrive { rabi: dhm_rabi() * w, eta: dhm_eta(), detuning: dhm_detuning() * w });
            let drive = LaserDrive::new(DriveKind::StandingWaveNode, d.rabi / w, d.detuning / w, vec![d.eta])
                .map_err(scheme_error)?;
            setup.dhm = Some(DhmSetup { drive, omega_x: 1.0, max_n, cutoff: setup.cutoff });
            let s = p.stirap.unwrap_or(StirapDrive { peak: w, duration: stirap_duration() / w, detuning: 0.0 });
            setup.stirap = Some(StirapSetup { peak: s.peak / w, duration: s.duration * w, detuning: s.detuning / w, cutoff: setup.cutoff });
            Ok(Job::Crot(Box::new(setup)))
        }
        Scheme::Spectator => {
            let p: SpectatorParams = parse(scheme, params)?;
            match (p.eta_bus, p.spectators, p.populations) {
                (Some(eta_bus), spectators, None) => {
                    let spectators = spectators
                        .unwrap_or_default()
                        .iter()
                        .map(|s| {
                            if s[1] >= 0.0 && s[1].fract() == 0.0 {
                                Ok((s[0], s[1] as usize))
                            } else {
                                Err(CliError::Config(format!("spectator occupation {} is not a non-negative integer", s[1])))
                            }
                        })
                        .collect::<Result<_, _>>()?;
                    Ok(Job::Spectator(SpectatorJob::Etas { eta_bus, spectators }))
                }
                (None, None, populations) => {
                    let chain = IonChain::new(p.n, REFERENCE_MASS_U * ATOMIC_MASS_UNIT, REFERENCE_OMEGA).map_err(chain_error)?;
                    let populations = populations.unwrap_or_else(|| vec![[2, 1]]).iter().map(|x| (x[0], x[1])).collect();
                    Ok(Job::Spectator(SpectatorJob::Chain { chain, target_ion: p.target_ion, bus_mode: p.bus_mode, populations }))
                }
                _ => Err(CliError::Config(
                    "give either eta_bus with spectators, or populations for a chain, not a mix".into(),
                )),
            }
        }
    }
}

fn prepare_heat(scheme: Scheme, units: Units, params: &Map<String, Value>) -> Result<Job, CliError> {
    let p: HeatParams = parse(scheme, params)?;
    let (chain, noise, duration, time_unit) = match units {
        Units::Natural => {
            trap_scale(units, p.omega_x)?;
            si_only(units, "mass_u", p.mass_u, 0.0)?;
            si_only(units, "charge_e", p.charge_e, 0.0)?;
            let chain = IonChain::new(p.n, REFERENCE_MASS_U * ATOMIC_MASS_UNIT, REFERENCE_OMEGA).map_err(chain_error)?;
            // field giving one ion unit coupling: q E₀/√(2Mℏω_x) = ω_x
            let e0 = (2.0 * chain.mass() * HBAR * REFERENCE_OMEGA).sqrt() * REFERENCE_OMEGA / chain.charge();
            let noise = NoiseField::new(p.e_rms * e0, p.coherence_time / REFERENCE_OMEGA, 0).map_err(|e| scheme_error(e.into()))?;
            (chain, noise, p.duration / REFERENCE_OMEGA, REFERENCE_OMEGA)
        }
        Units::Si => {
            let w = trap_scale(units, p.omega_x)?;
            let mass = si_only(units, "mass_u", p.mass_u, REFERENCE_MASS_U)? * ATOMIC_MASS_UNIT;
            let charge = si_only(units, "charge_e", p.charge_e, 1.0)? * ELEMENTARY_CHARGE;
            let chain = IonChain::with_charge(p.n, mass, charge, w).map_err(chain_error)?;
            let noise = NoiseField::new(p.e_rms, p.coherence_time, 0).map_err(|e| scheme_error(e.into()))?;
            (chain, noise, p.duration, 1.0)
        }
    };
    let noise = match p.model {
        Model::Ou => noise,
        Model::Piecewise => noise.with_model(NoiseModel::PiecewiseConstant),
    };
    positive("duration", duration)?;
    if p.modes.is_empty() || p.modes.iter().any(|&m| m == 0 || m > p.n) {
        return Err(CliError::Config(format!("modes {:?} must lie in 1..={}", p.modes, p.n)));
    }
    if p.trials < 2 {
        return Err(CliError::Config(format!("trials must be at least 2, got {}", p.trials)));
    }
    if p.fock > p.cutoff {
        return Err(CliError::Config(format!("fock {} exceeds cutoff {}", p.fock, p.cutoff)));
    }
    let setup = HeatingSetup {
        modes: p.modes.iter().map(|&m| (m, ModeInit::Fock(p.fock))).collect(),
        duration,
        trials: p.trials,
        cutoff: p.cutoff,
        samples: p.samples,
        threads: None,
    };
    Ok(Job::Heat(Box::new(HeatJob { chain, noise, setup, fit_from: p.fit_from / time_unit, time_unit })))
}

fn sector_phase(m: &CMatrix, k: usize) -> f64 {
    (m[(k, k)] / m[(0, 0)]).arg()
}

fn offdiag(m: &CMatrix) -> f64 {
    let mut s = 0.0;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if r != c {
                s += m[(r, c)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

impl Job {
    pub fn run(&self, seed: u64) -> Result<PointResult, CliError> {
        let mut warnings = Vec::new();
        let tables = match self {
            Job::Modes { chain, si } => {
                let modes = chain.normal_modes().map_err(chain_error)?;
                let mut t = Table::new("modes", &["p", "frequency_ratio", "omega", "component_sum"]);
                let mut v = Table::new("vectors", &["p", "ion", "b"]);
                for m in &modes {
                    let omega = if *si { m.omega } else { m.frequency_ratio };
                    t.push(vec![m.p.into(), m.frequency_ratio.into(), omega.into(), m.component_sum().into()]);
                    for (i, b) in m.b.iter().enumerate() {
                        v.push(vec![m.p.into(), (i + 1).into(), (*b).into()]);
                    }
                }
                let u = if *si { chain.positions() } else { equilibrium_positions(chain.n()) }.map_err(chain_error)?;
                let mut pos = Table::new("positions", &["ion", "position"]);
                for (i, x) in u.iter().enumerate() {
                    pos.push(vec![(i + 1).into(), (*x).into()]);
                }
                vec![t, v, pos]
            }
            Job::Heat(h) => {
                let noise = NoiseField { seed, ..h.noise };
                let run = simulate_heating(&h.chain, &noise, &h.setup).map_err(scheme_error)?;
                warnings.extend(run.tau.warnings.iter().cloned());
                let mut cols = vec!["t".to_string()];
                for p in &run.modes {
                    cols.push(format!("n_p{p}"));
                    cols.push(format!("stderr_p{p}"));
                }
                let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
                let mut occ = Table::new("occupation", &cols);
                for (k, t) in run.times.iter().enumerate() {
                    let mut row: Vec<Cell> = vec![(t * h.time_unit).into()];
                    for i in 0..run.modes.len() {
                        row.push(run.mean[i][k].into());
                        row.push(run.stderr[i][k].into());
                    }
                    occ.push(row);
                }
                let mut rate = Table::new("rate", &["p", "growth_rate", "inverse_tau_n"]);
                let inv_tau = if run.tau.is_infinite() { 0.0 } else { 1.0 / run.tau.tau };
                for (i, p) in run.modes.iter().enumerate() {
                    rate.push(vec![(*p).into(), (run.growth_rate(i, h.fit_from) / h.time_unit).into(), (inv_tau / h.time_unit).into()]);
                }
                vec![occ, rate]
            }
            Job::Kick { setup, scale } => {
                let r = kick_gate(setup).map_err(scheme_error)?;
                warnings.extend(r.gate.warnings.iter().cloned());
                let mut t = Table::new(
                    "kick",
                    &["fidelity", "revival_found", "best_revival_time", "best_revival_fidelity", "residual_excitation", "leakage"],
                );
                t.push(vec![
                    r.gate.fidelity.into(),
                    usize::from(r.revival_time.is_some()).into(),
                    (r.best_revival_time / scale).into(),
                    r.best_revival_fidelity.into(),
                    r.residual_excitation.into(),
                    r.gate.leakage.into(),
                ]);
                let mut tt = Table::new("truth_table", &["input", "output", "probability"]);
                let labels = ["00", "01", "10", "11"];
                let m = &r.gate.sector_unitaries[0];
                for (c, lc) in labels.iter().enumerate() {
                    for (o, lo) in labels.iter().enumerate() {
                        tt.push(vec![(*lc).into(), (*lo).into(), m[(o, c)].norm_sqr().into()]);
                    }
                }
                vec![t, tt]
            }
            Job::Ms { setup, scale } => {
                let r = ms_gate(setup).map_err(scheme_error)?;
                warnings.extend(r.exact.warnings.iter().cloned());
                let mut t = Table::new(
                    "ms",
                    &[
                        "chi",
                        "eta",
                        "duration",
                        "gap",
                        "exact_fidelity",
                        "effective_fidelity",
                        "exact_spread",
                        "effective_spread",
                        "leakage",
                        "step_halving_infidelity",
                    ],
                );
                t.push(vec![
                    (r.chi * scale).into(),
                    setup.drive.bus_eta().into(),
                    (r.duration / scale).into(),
                    r.gap.into(),
                    r.exact.fidelity.into(),
                    r.effective.fidelity.into(),
                    r.exact.sector_spread().into(),
                    r.effective.sector_spread().into(),
                    r.exact.leakage.into(),
                    r.step_halving_infidelity.unwrap_or(f64::NAN).into(),
                ]);
                let mut s = Table::new("sectors", &["n", "exact", "effective", "agreement"]);
                for ((e, f), a) in r.exact.sectors.iter().zip(&r.effective.sectors).zip(&r.agreement) {
                    s.push(vec![e.n.into(), e.fidelity.into(), f.fidelity.into(), a.fidelity.into()]);
                }
                vec![t, s]
            }
            Job::Dhm { setup, step, scale } => {
                let (_, r) = dhm_phase_gate(setup, *step).map_err(scheme_error)?;
                let mut t = Table::new("dhm", &["duration", "fidelity", "leakage"]);
                t.push(vec![(r.duration / scale).into(), r.fidelity.into(), r.leakage.into()]);
                let mut s = Table::new("sectors", &["n", "fidelity", "phase_e"]);
                for (sec, m) in r.sectors.iter().zip(&r.sector_unitaries) {
                    s.push(vec![sec.n.into(), sec.fidelity.into(), sector_phase(m, 1).into()]);
                }
                vec![t, s]
            }
            Job::Stirap { setup, sectors, scale } => {
                let fwd = stirap_report(setup, Passage::Forward, sectors).map_err(scheme_error)?;
                let bwd = stirap_report(setup, Passage::Backward, sectors).map_err(scheme_error)?;
                let rt = stirap_round_trip(setup, sectors).map_err(scheme_error)?;
                for w in fwd.warnings.iter().chain(&bwd.warnings).chain(&rt.warnings) {
                    if !warnings.contains(w) {
                        warnings.push(w.clone());
                    }
                }
                let mut t = Table::new(
                    "stirap",
                    &["duration", "forward_fidelity", "forward_spread", "backward_fidelity", "round_trip_fidelity", "leakage"],
                );
                t.push(vec![
                    (fwd.duration / scale).into(),
                    fwd.fidelity.into(),
                    fwd.sector_spread().into(),
                    bwd.fidelity.into(),
                    rt.fidelity.into(),
                    fwd.leakage.max(bwd.leakage).max(rt.leakage).into(),
                ]);
                let mut s = Table::new("sectors", &["n", "forward", "backward", "round_trip"]);
                for ((f, b), r) in fwd.sectors.iter().zip(&bwd.sectors).zip(&rt.sectors) {
                    s.push(vec![f.n.into(), f.fidelity.into(), b.fidelity.into(), r.fidelity.into()]);
                }
                vec![t, s]
            }
            Job::Crot(setup) => {
                let r = crot_sequence(setup).map_err(scheme_error)?;
                let mut t = Table::new("crot", &["program", "fidelity", "leakage"]);
                t.push(vec![r.name.as_str().into(), r.fidelity.into(), r.leakage.into()]);
                let mut s =
                    Table::new("sectors", &["n", "fidelity", "phase_0g", "phase_0e", "phase_1g", "phase_1e", "offdiag"]);
                for (sec, m) in r.sectors.iter().zip(&r.sector_unitaries) {
                    let mut row: Vec<Cell> = vec![sec.n.into(), sec.fidelity.into()];
                    row.extend((0..4).map(|k| Cell::from(sector_phase(m, k))));
                    row.push(offdiag(m).into());
                    s.push(row);
                }
                vec![t, s]
            }
            Job::Spectator(job) => {
                let r = match job {
                    SpectatorJob::Chain { chain, target_ion, bus_mode, populations } => {
                        spectator_phase_error(chain, *target_ion, *bus_mode, populations)
                    }
                    SpectatorJob::Etas { eta_bus, spectators } => spectator_phase_from_etas(*eta_bus, spectators),
                }
                .map_err(scheme_error)?;
                let mut t = Table::new("spectator", &["phase_error", "fidelity_loss"]);
                t.push(vec![r.phase_error.into(), r.fidelity_loss.into()]);
                vec![t]
            }
        };
        Ok(PointResult { tables, warnings })
    }
}
