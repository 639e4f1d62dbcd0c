//! Motional heating of a chain by a spatially uniform stochastic field.
//!
//! Each mode sees `H_p = i(u_p a†_p − u_p* a_p)` with
//! `u_p(t) = (iq/√(2Mℏω_p)) Σ_n b⁽ᵖ⁾_n E(t) e^{iω_p t}`. Internally time is
//! measured in units of `1/ω_x`. The modes are driven independently and
//! start in product states, so each trajectory evolves them one at a time.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::chain::IonChain;
use crate::dynamics::{
    evolve_timedep, interpolate, monte_carlo, sample_field, EvolutionOptions, NoiseField,
    ParametricHamiltonian, TimeGrid, Trial,
};
use crate::hilbert::{ladder, local, number, Factor, SpaceDescriptor, StateVector, C64};
use crate::units::HBAR;

use super::{check_leakage, SchemeError};

/// `τ_N` with any advisory warnings.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatingTime {
    /// Seconds; `f64::INFINITY` for a silent field.
    pub tau: f64,
    pub warnings: Vec<String>,
}

impl HeatingTime {
    pub fn is_infinite(&self) -> bool {
        self.tau.is_infinite()
    }
}

/// Time for the COM occupation to grow by one quantum,
/// `τ_N = Mℏω_x/(N q² E_rms² T)` (SI).
pub fn heating_time(chain: &IonChain, noise: &NoiseField) -> HeatingTime {
    let mut warnings = Vec::new();
    let periods = noise.coherence_time * chain.omega_x() / (2.0 * PI);
    if periods < 10.0 {
        let msg = format!("coherence time spans only {periods:.3} trap periods (< 10)");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if noise.e_rms == 0.0 {
        return HeatingTime { tau: f64::INFINITY, warnings };
    }
    let q = chain.charge();
    let tau = chain.mass() * HBAR * chain.omega_x()
        / (chain.n() as f64 * q * q * noise.e_rms * noise.e_rms * noise.coherence_time);
    HeatingTime { tau, warnings }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModeInit {
    Fock(usize),
    Coherent(C64),
}

/// Which modes to simulate and how long.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatingSetup {
    /// `(p, initial state)`, `p` 1-based.
    pub modes: Vec<(usize, ModeInit)>,
    /// Seconds.
    pub duration: f64,
    pub trials: usize,
    pub cutoff: usize,
    /// Number of sampling intervals; `samples + 1` time points are reported.
    pub samples: usize,
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatingRun {
    /// Seconds.
    pub times: Vec<f64>,
    pub modes: Vec<usize>,
    /// `mean[i][k]` is `⟨n_p⟩` of `modes[i]` at `times[k]`.
    pub mean: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub tau: HeatingTime,
}

impl HeatingRun {
    /// Least-squares slope of `⟨n⟩(t)` for mode index `i` over `t ≥ t_min`, per second.
    pub fn growth_rate(&self, i: usize, t_min: f64) -> f64 {
        let pts: Vec<(f64, f64)> =
            self.times.iter().zip(&self.mean[i]).filter(|(t, _)| **t >= t_min).map(|(t, n)| (*t, *n)).collect();
        let k = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let mn = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mn)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        sxy / sxx
    }
}

struct Prepared {
    couplings: Vec<(f64, f64)>,
    grid: TimeGrid,
    sample_every: usize,
    noise: NoiseField,
    dt: f64,
}

fn prepare(chain: &IonChain, noise: &NoiseField, setup: &HeatingSetup) -> Result<Prepared, SchemeError> {
    if !(setup.duration > 0.0) {
        return Err(SchemeError::InvalidParameter { name: "duration", value: setup.duration });
    }
    if setup.samples == 0 {
        return Err(SchemeError::InvalidParameter { name: "samples", value: 0.0 });
    }
    let modes = chain.normal_modes()?;
    let wx = chain.omega_x();
    let mut couplings = Vec::new();
    for &(p, _) in &setup.modes {
        let m = modes
            .get(p.wrapping_sub(1))
            .ok_or(SchemeError::InvalidParameter { name: "mode", value: p as f64 })?;
        // κ_p in units of ω_x per (V/m)
        let kappa = chain.charge() * m.component_sum() / (2.0 * chain.mass() * HBAR * m.omega).sqrt() / wx;
        couplings.push((kappa, m.frequency_ratio));
    }
    let r_max = couplings.iter().map(|c| c.1).fold(0.0, f64::max);
    let coherence = noise.coherence_time * wx;
    let duration = setup.duration * wx;
    let dt_target = (0.04 / r_max.max(1e-300)).min(coherence / 20.0);
    let mut steps = (duration / dt_target).ceil() as usize;
    steps = steps.div_ceil(setup.samples) * setup.samples;
    let grid = TimeGrid::new(0.0, duration, steps);
    let scaled = NoiseField { coherence_time: coherence, ..*noise };
    Ok(Prepared { couplings, grid, sample_every: steps / setup.samples, noise: scaled, dt: grid.dt() })
}

fn initial(cutoff: usize, init: ModeInit) -> Result<StateVector, SchemeError> {
    let space = SpaceDescriptor::new(vec![Factor::Phonon { cutoff }])?;
    let v = match init {
        ModeInit::Fock(n) if n <= cutoff => local::fock(cutoff, n),
        ModeInit::Fock(n) => return Err(SchemeError::InvalidParameter { name: "fock", value: n as f64 }),
        ModeInit::Coherent(a) => local::coherent(cutoff, a),
    };
    Ok(StateVector::new(space, v)?)
}

/// One trajectory: `⟨n_p⟩` at the sample points for each requested mode,
/// concatenated mode by mode.
fn trajectory(prep: &Prepared, setup: &HeatingSetup, trial: Trial) -> Result<Vec<f64>, SchemeError> {
    let (seed, stream) = trial.noise_stream();
    let noise = NoiseField { seed, ..prep.noise };
    let field = Arc::new(sample_field(&noise, prep.dt, prep.grid.end, stream)?);
    let mut out = Vec::new();
    for (&(kappa, r), &(_, init)) in prep.couplings.iter().zip(&setup.modes) {
        let psi0 = initial(setup.cutoff, init)?;
        let space = psi0.space().clone();
        let (a, ad) = ladder(&space, 0)?;
        let dt = prep.dt;
        let (f1, f2) = (field.clone(), field.clone());
        // H = −κE(t)(e^{irt} a† + e^{−irt} a)
        let h = ParametricHamiltonian::new(&space)
            .with_term(&ad, Arc::new(move |t| -kappa * interpolate(&f1, dt, t) * C64::from_polar(1.0, r * t)))
            .with_term(&a, Arc::new(move |t| -kappa * interpolate(&f2, dt, t) * C64::from_polar(1.0, -r * t)))
            .with_max_frequency(r);
        let opts = EvolutionOptions {
            observables: vec![number(&space, 0)?],
            sample_every: prep.sample_every,
            ..Default::default()
        };
        let res = evolve_timedep(&h, &psi0, prep.grid, &opts)?;
        check_leakage(res.leakage)?;
        out.extend(res.samples.iter().map(|s| s.values[0]));
    }
    Ok(out)
}

/// Monte Carlo average of the mode occupations. Trial `k` draws its field
/// from stream `k` of `noise.seed`.
pub fn simulate_heating(chain: &IonChain, noise: &NoiseField, setup: &HeatingSetup) -> Result<HeatingRun, SchemeError> {
    let prep = prepare(chain, noise, setup)?;
    let summary = monte_carlo(
        |trial| {
            trajectory(&prep, setup, trial).map_err(|e| match e {
                SchemeError::Dynamics(d) => d,
                other => crate::dynamics::DynamicsError::TrialFailed { trial: trial.index, message: other.to_string() },
            })
        },
        setup.trials,
        noise.seed,
        setup.threads,
    )?;
    let points = setup.samples + 1;
    let wx = chain.omega_x();
    let times = (0..points).map(|k| (k * prep.sample_every) as f64 * prep.dt / wx).collect();
    let split = |v: &[f64]| v.chunks(points).map(|c| c.to_vec()).collect::<Vec<_>>();
    Ok(HeatingRun {
        times,
        modes: setup.modes.iter().map(|m| m.0).collect(),
        mean: split(&summary.mean),
        stderr: split(&summary.stderr),
        tau: heating_time(chain, noise),
    })
}

/// Single-trajectory oracle: the exact coherent amplitude
/// `α_p(t) = ∫₀ᵗ u_p dt′` of mode `p` for trial `index`, by fine
/// trapezoidal quadrature of the same sampled field. Time in seconds.
pub fn exact_displacement(
    chain: &IonChain,
    noise: &NoiseField,
    setup: &HeatingSetup,
    mode_index: usize,
    index: usize,
) -> Result<C64, SchemeError> {
    let prep = prepare(chain, noise, setup)?;
    let (kappa, r) = prep.couplings[mode_index];
    let field = sample_field(&prep.noise, prep.dt, prep.grid.end, index as u64)?;
    let sub = 64;
    let h = prep.dt / sub as f64;
    let n = prep.grid.steps * sub;
    let u = |t: f64| C64::new(0.0, kappa) * interpolate(&field, prep.dt, t) * C64::from_polar(1.0, r * t);
    let mut acc = 0.5 * (u(0.0) + u(prep.grid.end));
    for k in 1..n {
        acc += u(k as f64 * h);
    }
    Ok(acc * h)
}
