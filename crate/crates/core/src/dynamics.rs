//! Unitary evolution, stochastic field sampling and Monte Carlo averaging.
//!
//! All Hamiltonians here are in angular-frequency units (`H/ℏ`), so the
//! propagator is `exp(−iHt)`.
//!
//! Time-dependent evolution uses the exponential midpoint rule: on each grid
//! cell the Hamiltonian is frozen at the cell midpoint and its exponential
//! is applied exactly (truncated Taylor series of the action, summed to
//! machine precision). Each step is unitary to rounding and the global error
//! is second order in the step.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::effham::HarmonicTerm;
use crate::hilbert::{
    unitary_from_hermitian, CVector, HilbertError, Operator, SpaceDescriptor, StateVector, C64, I,
    NORM_TOLERANCE, ONE, ZERO,
};

/// `Δt · ω_max` must stay below this.
pub const MAX_PHASE_PER_STEP: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("Hamiltonian is not Hermitian (max |H − H†| = {0:.3e})")]
    NotHermitian(f64),
    #[error("grid under-resolves ω_max = {omega_max:.6e}: Δt·ω_max = {product:.3e} ≥ {limit}")]
    UnderResolved { omega_max: f64, product: f64, limit: f64 },
    #[error("norm drifted by {0:.3e}, beyond tolerance")]
    NormDrift(f64),
    #[error("noise sampling step {dt:.3e} exceeds coherence_time/20 = {limit:.3e}")]
    NoiseStepTooCoarse { dt: f64, limit: f64 },
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("Monte Carlo needs at least 2 trials, got {0}")]
    TooFewTrials(usize),
    #[error("trial {trial} failed: {message}")]
    TrialFailed { trial: usize, message: String },
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
}

/// Compressed sparse rows.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseMatrix {
    pub fn from_operator(op: &Operator) -> Self {
        let m = op.matrix();
        let dim = m.nrows();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for r in 0..dim {
            for c in 0..dim {
                let v = m[(r, c)];
                if v != ZERO {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { dim, row_ptr, cols, vals }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `out += c · A x`.
    fn mul_add(&self, c: C64, x: &[C64], out: &mut [C64]) {
        for r in 0..self.dim {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            out[r] += c * acc;
        }
    }

    /// Per-row absolute sums (an ∞-norm bound contribution).
    fn row_abs_sums(&self, out: &mut [f64], scale: f64) {
        for r in 0..self.dim {
            let s: f64 = self.vals[self.row_ptr[r]..self.row_ptr[r + 1]].iter().map(|v| v.norm()).sum();
            out[r] += scale * s;
        }
    }
}

pub type Coefficient = Arc<dyn Fn(f64) -> C64 + Send + Sync>;

/// `H(t) = Σ_k c_k(t) A_k`; the caller guarantees Hermiticity of the sum
/// (checked at the start of each evolution).
#[derive(Clone)]
pub struct ParametricHamiltonian {
    space: SpaceDescriptor,
    terms: Vec<(SparseMatrix, Operator, Coefficient)>,
    max_frequency: f64,
}

impl std::fmt::Debug for ParametricHamiltonian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParametricHamiltonian")
            .field("space", &self.space)
            .field("terms", &self.terms.len())
            .field("max_frequency", &self.max_frequency)
            .finish()
    }
}

impl ParametricHamiltonian {
    pub fn new(space: &SpaceDescriptor) -> Self {
        Self { space: space.clone(), terms: Vec::new(), max_frequency: 0.0 }
    }

    /// Static contribution.
    pub fn with_static(self, op: &Operator) -> Self {
        self.with_term(op, Arc::new(|_| ONE))
    }

    pub fn with_term(mut self, op: &Operator, coefficient: Coefficient) -> Self {
        assert_eq!(op.space(), &self.space, "term lives on a different space");
        self.terms.push((SparseMatrix::from_operator(op), op.clone(), coefficient));
        self
    }

    /// Adds `h e^{iωt} + h† e^{−iωt}` for each harmonic term.
    pub fn with_harmonic_terms(mut self, terms: &[HarmonicTerm]) -> Self {
        for t in terms {
            let w = t.omega;
            self = self
                .with_term(&t.h, Arc::new(move |s| (I * w * s).exp()))
                .with_term(&t.h.adjoint(), Arc::new(move |s| (-I * w * s).exp()));
            self.max_frequency = self.max_frequency.max(w.abs());
        }
        self
    }

    /// Declares the fastest time variation of the coefficients.
    pub fn with_max_frequency(mut self, omega: f64) -> Self {
        self.max_frequency = self.max_frequency.max(omega.abs());
        self
    }

    pub fn space(&self) -> &SpaceDescriptor {
        &self.space
    }

    pub fn max_frequency(&self) -> f64 {
        self.max_frequency
    }

    /// Dense `H(t)`.
    pub fn at(&self, t: f64) -> Operator {
        let mut h = Operator::zeros(&self.space);
        for (_, op, c) in &self.terms {
            h = &h + &op.scale(c(t));
        }
        h
    }

    fn coefficients(&self, t: f64) -> Vec<C64> {
        self.terms.iter().map(|(_, _, c)| c(t)).collect()
    }

    fn apply(&self, coeffs: &[C64], x: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = ZERO);
        for ((m, _, _), &c) in self.terms.iter().zip(coeffs) {
            if c != ZERO {
                m.mul_add(c, x, out);
            }
        }
    }

    fn inf_norm_bound(&self, coeffs: &[C64]) -> f64 {
        let mut rows = vec![0.0; self.space.dim()];
        for ((m, _, _), c) in self.terms.iter().zip(coeffs) {
            m.row_abs_sums(&mut rows, c.norm());
        }
        rows.into_iter().fold(0.0, f64::max)
    }
}

/// Uniform grid on `[start, end]` with `steps` cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(start: f64, end: f64, steps: usize) -> Self {
        Self { start, end, steps: steps.max(1) }
    }

    /// Smallest grid over `[0, duration]` with `Δt·omega_max ≤ phase`.
    pub fn resolving(duration: f64, omega_max: f64, phase: f64) -> Self {
        let steps = ((duration * omega_max / phase).ceil() as usize).max(1);
        Self::new(0.0, duration, steps)
    }

    pub fn dt(&self) -> f64 {
        (self.end - self.start) / self.steps as f64
    }

    pub fn halved(&self) -> Self {
        Self { steps: self.steps * 2, ..*self }
    }
}

#[derive(Clone, Debug)]
pub struct EvolutionOptions {
    /// Hermitian observables sampled as `Re⟨ψ|O|ψ⟩`.
    pub observables: Vec<Operator>,
    /// Sample every `sample_every` steps (and always at the end); 0 disables.
    pub sample_every: usize,
    pub norm_tolerance: f64,
    /// Re-run with half the step and report the final-state infidelity.
    pub convergence_check: bool,
}

impl Default for EvolutionOptions {
    fn default() -> Self {
        Self { observables: Vec::new(), sample_every: 0, norm_tolerance: NORM_TOLERANCE, convergence_check: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct EvolutionResult {
    pub state: StateVector,
    pub samples: Vec<Sample>,
    /// Population on the top two Fock levels of any mode.
    pub leakage: f64,
    pub steps: usize,
    pub norm_drift: f64,
    /// `1 − |⟨ψ_Δt|ψ_Δt/2⟩|²` when requested.
    pub step_halving_infidelity: Option<f64>,
}

fn hermitian_check(h: &Operator) -> Result<(), DynamicsError> {
    let scale = crate::hilbert::max_abs(h.matrix()).max(1.0);
    let defect = h.hermiticity_defect();
    if defect > 1e-10 * scale {
        return Err(DynamicsError::NotHermitian(defect));
    }
    Ok(())
}

fn sample(observables: &[SparseMatrix], psi: &[C64], t: f64, scratch: &mut [C64]) -> Sample {
    let values = observables
        .iter()
        .map(|o| {
            scratch.iter_mut().for_each(|z| *z = ZERO);
            o.mul_add(ONE, psi, scratch);
            psi.iter().zip(scratch.iter()).map(|(a, b)| (a.conj() * b).re).sum()
        })
        .collect();
    Sample { t, values }
}

fn finish(
    psi: StateVector,
    samples: Vec<Sample>,
    steps: usize,
    tol: f64,
) -> Result<EvolutionResult, DynamicsError> {
    let drift = (psi.norm() - 1.0).abs();
    if drift > tol {
        return Err(DynamicsError::NormDrift(drift));
    }
    let leakage = psi.truncation_leakage();
    Ok(EvolutionResult { state: psi, samples, leakage, steps, norm_drift: drift, step_halving_infidelity: None })
}

/// `ψ(t) = exp(−iHt) ψ0`.
pub fn evolve_static(h: &Operator, psi0: &StateVector, t: f64) -> Result<EvolutionResult, DynamicsError> {
    if h.space() != psi0.space() {
        return Err(HilbertError::SpaceMismatch.into());
    }
    hermitian_check(h)?;
    let u = unitary_from_hermitian(h.matrix(), t);
    let psi = StateVector::new(psi0.space().clone(), u * psi0.amplitudes())?;
    finish(psi, Vec::new(), 1, NORM_TOLERANCE)
}

/// Exact action of `exp(−i H dt)` on `psi` with `H` frozen (coefficients
/// `coeffs`), by scaled Taylor summation.
fn step_exponential(
    h: &ParametricHamiltonian,
    coeffs: &[C64],
    dt: f64,
    psi: &mut Vec<C64>,
    term: &mut Vec<C64>,
    next: &mut Vec<C64>,
) {
    let norm_bound = h.inf_norm_bound(coeffs) * dt.abs();
    let substeps = (norm_bound / 0.5).ceil().max(1.0) as usize;
    let tau = dt / substeps as f64;
    for _ in 0..substeps {
        term.copy_from_slice(psi);
        for k in 1..=60 {
            h.apply(coeffs, term, next);
            let f = -I * (tau / k as f64);
            let mut tn = 0.0;
            for (t, n) in term.iter_mut().zip(next.iter()) {
                *t = f * n;
                tn += t.norm_sqr();
            }
            for (p, t) in psi.iter_mut().zip(term.iter()) {
                *p += t;
            }
            if tn.sqrt() < 1e-17 {
                break;
            }
        }
    }
}

fn run_grid(
    h: &ParametricHamiltonian,
    psi0: &StateVector,
    grid: TimeGrid,
    options: &EvolutionOptions,
) -> Result<EvolutionResult, DynamicsError> {
    let dt = grid.dt();
    let product = dt.abs() * h.max_frequency();
    if product >= MAX_PHASE_PER_STEP {
        return Err(DynamicsError::UnderResolved {
            omega_max: h.max_frequency(),
            product,
            limit: MAX_PHASE_PER_STEP,
        });
    }
    hermitian_check(&h.at(grid.start + 0.5 * dt))?;

    let n = psi0.space().dim();
    let observables: Vec<SparseMatrix> = options.observables.iter().map(SparseMatrix::from_operator).collect();
    let mut psi: Vec<C64> = psi0.amplitudes().iter().copied().collect();
    let (mut term, mut next, mut scratch) = (vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]);
    let mut samples = Vec::new();
    let sampling = options.sample_every > 0 && !observables.is_empty();
    if sampling {
        samples.push(sample(&observables, &psi, grid.start, &mut scratch));
    }
    for k in 0..grid.steps {
        let t_mid = grid.start + (k as f64 + 0.5) * dt;
        let coeffs = h.coefficients(t_mid);
        step_exponential(h, &coeffs, dt, &mut psi, &mut term, &mut next);
        if sampling && ((k + 1) % options.sample_every == 0 || k + 1 == grid.steps) {
            let t = grid.start + (k + 1) as f64 * dt;
            samples.push(sample(&observables, &psi, t, &mut scratch));
        }
    }
    let state = StateVector::new(psi0.space().clone(), CVector::from_vec(psi))?;
    finish(state, samples, grid.steps, options.norm_tolerance)
}

/// Evolves under `H(t)` on `grid` with the exponential midpoint rule.
pub fn evolve_timedep(
    h: &ParametricHamiltonian,
    psi0: &StateVector,
    grid: TimeGrid,
    options: &EvolutionOptions,
) -> Result<EvolutionResult, DynamicsError> {
    if h.space() != psi0.space() {
        return Err(HilbertError::SpaceMismatch.into());
    }
    let mut result = run_grid(h, psi0, grid, options)?;
    if options.convergence_check {
        let plain = EvolutionOptions { observables: Vec::new(), convergence_check: false, ..options.clone() };
        let fine = run_grid(h, psi0, grid.halved(), &plain)?;
        let f = crate::hilbert::fidelity(&result.state, &fine.state)?;
        result.step_halving_infidelity = Some((1.0 - f).max(0.0));
    }
    Ok(result)
}

/// Envelope shape of a laser pulse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PulseShape {
    /// On for all times.
    Constant,
    /// `sin²` rise over `ramp` after `start`, flat top, `sin²` fall over
    /// `ramp` before `end`. `ramp = (end − start)/2` gives a single `sin²` bump.
    Sin2Ramp { ramp: f64 },
    /// Gaussian of width `sigma` centred in `[start, end]`, offset and
    /// rescaled so that it reaches zero continuously at both ends.
    Gaussian { sigma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PulseEnvelope {
    pub shape: PulseShape,
    /// Peak Rabi frequency.
    pub peak: f64,
    pub start: f64,
    pub end: f64,
}

impl PulseEnvelope {
    pub fn new(shape: PulseShape, peak: f64, start: f64, end: f64) -> Result<Self, DynamicsError> {
        if !(peak >= 0.0 && peak.is_finite()) {
            return Err(DynamicsError::InvalidParameter { name: "peak", value: peak });
        }
        if !(end > start) {
            return Err(DynamicsError::InvalidParameter { name: "end", value: end });
        }
        match shape {
            PulseShape::Sin2Ramp { ramp } if !(ramp > 0.0 && 2.0 * ramp <= (end - start) * (1.0 + 1e-12)) => {
                return Err(DynamicsError::InvalidParameter { name: "ramp", value: ramp });
            }
            PulseShape::Gaussian { sigma } if !(sigma > 0.0) => {
                return Err(DynamicsError::InvalidParameter { name: "sigma", value: sigma });
            }
            _ => {}
        }
        Ok(Self { shape, peak, start, end })
    }

    pub fn value(&self, t: f64) -> f64 {
        match self.shape {
            PulseShape::Constant => self.peak,
            _ if t <= self.start || t >= self.end => 0.0,
            PulseShape::Sin2Ramp { ramp } => {
                let rise = ((t - self.start) / ramp).min(1.0);
                let fall = ((self.end - t) / ramp).min(1.0);
                let s = (0.5 * std::f64::consts::PI * rise.min(fall)).sin();
                self.peak * s * s
            }
            PulseShape::Gaussian { sigma } => {
                let c = 0.5 * (self.start + self.end);
                let edge = (-(0.5 * (self.end - self.start) / sigma).powi(2) / 2.0).exp();
                let g = (-((t - c) / sigma).powi(2) / 2.0).exp();
                self.peak * (g - edge) / (1.0 - edge)
            }
        }
    }

    /// Rough upper bound on the rate of change `|dΩ/dt|/Ω_peak`, for grid
    /// sizing.
    pub fn max_rate(&self) -> f64 {
        match self.shape {
            PulseShape::Constant => 0.0,
            PulseShape::Sin2Ramp { ramp } => std::f64::consts::PI / ramp,
            PulseShape::Gaussian { sigma } => 1.0 / sigma,
        }
    }
}

/// Statistical model of the stray field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseModel {
    /// Gaussian, exponential autocorrelation `σ² e^{−|τ|/T}`.
    OrnsteinUhlenbeck,
    /// Independent Gaussian values held for windows of length `T`, with a
    /// uniformly random window phase; triangular autocorrelation.
    PiecewiseConstant,
}

/// Spatially uniform stochastic field `E_x(t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseField {
    /// RMS amplitude, in whatever field unit the caller uses.
    pub e_rms: f64,
    /// Coherence time `T`, same time unit as the sampling step.
    pub coherence_time: f64,
    pub model: NoiseModel,
    pub seed: u64,
}

impl NoiseField {
    pub fn new(e_rms: f64, coherence_time: f64, seed: u64) -> Result<Self, DynamicsError> {
        if !(e_rms >= 0.0 && e_rms.is_finite()) {
            return Err(DynamicsError::InvalidParameter { name: "e_rms", value: e_rms });
        }
        if !(coherence_time > 0.0 && coherence_time.is_finite()) {
            return Err(DynamicsError::InvalidParameter { name: "coherence_time", value: coherence_time });
        }
        Ok(Self { e_rms, coherence_time, model: NoiseModel::OrnsteinUhlenbeck, seed })
    }

    pub fn with_model(mut self, model: NoiseModel) -> Self {
        self.model = model;
        self
    }

    /// Autocorrelation `⟨E(t)E(t+τ)⟩`.
    pub fn autocorrelation(&self, tau: f64) -> f64 {
        let s2 = self.e_rms * self.e_rms;
        let x = tau.abs() / self.coherence_time;
        match self.model {
            NoiseModel::OrnsteinUhlenbeck => s2 * (-x).exp(),
            NoiseModel::PiecewiseConstant => s2 * (1.0 - x).max(0.0),
        }
    }

    /// Two-sided power spectral density `∫ ⟨E(0)E(τ)⟩ e^{iωτ} dτ`.
    pub fn spectral_density(&self, omega: f64) -> f64 {
        let s2 = self.e_rms * self.e_rms;
        let t = self.coherence_time;
        match self.model {
            NoiseModel::OrnsteinUhlenbeck => s2 * 2.0 * t / (1.0 + (omega * t).powi(2)),
            NoiseModel::PiecewiseConstant => {
                let x = 0.5 * omega * t;
                let sinc = if x == 0.0 { 1.0 } else { x.sin() / x };
                s2 * t * sinc * sinc
            }
        }
    }
}

/// The RNG for stream `stream_id` of `seed`.
pub fn stream_rng(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Seed for item `index` of a batch run under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    stream_rng(master, index).random()
}

/// Samples `E_x` at `t_k = k·dt`, `k = 0..=⌈duration/dt⌉`. Fully determined
/// by `(noise.seed, stream_id)`.
pub fn sample_field(noise: &NoiseField, dt: f64, duration: f64, stream_id: u64) -> Result<Vec<f64>, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::InvalidParameter { name: "dt", value: dt });
    }
    let limit = noise.coherence_time / 20.0;
    if dt > limit * (1.0 + 1e-12) {
        return Err(DynamicsError::NoiseStepTooCoarse { dt, limit });
    }
    let count = (duration / dt - 1e-9).ceil().max(0.0) as usize + 1;
    if noise.e_rms == 0.0 {
        return Ok(vec![0.0; count]);
    }
    let mut rng = stream_rng(noise.seed, stream_id);
    let sigma = noise.e_rms;
    let mut out = Vec::with_capacity(count);
    match noise.model {
        NoiseModel::OrnsteinUhlenbeck => {
            // Exact transition kernel of the stationary OU process.
            let rho = (-dt / noise.coherence_time).exp();
            let kick = sigma * (1.0 - rho * rho).sqrt();
            let mut x = sigma * rng.sample::<f64, _>(StandardNormal);
            out.push(x);
            for _ in 1..count {
                x = rho * x + kick * rng.sample::<f64, _>(StandardNormal);
                out.push(x);
            }
        }
        NoiseModel::PiecewiseConstant => {
            let t = noise.coherence_time;
            let offset: f64 = rng.random::<f64>() * t;
            let mut window = usize::MAX;
            let mut value = 0.0;
            for k in 0..count {
                let w = ((k as f64 * dt + offset) / t).floor() as usize;
                if w != window {
                    window = w;
                    value = sigma * rng.sample::<f64, _>(StandardNormal);
                }
                out.push(value);
            }
        }
    }
    Ok(out)
}

/// Linear interpolation of a series sampled at `k·dt`.
pub fn interpolate(series: &[f64], dt: f64, t: f64) -> f64 {
    let x = (t / dt).max(0.0);
    let k = x.floor() as usize;
    if k + 1 >= series.len() {
        return *series.last().unwrap_or(&0.0);
    }
    let f = x - k as f64;
    series[k] * (1.0 - f) + series[k + 1] * f
}

/// Identity of one Monte Carlo trajectory. Its random stream is derived
/// only from `(master_seed, index)`: stream `index` of the ChaCha8
/// generator seeded with `master_seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trial {
    pub index: usize,
    pub master_seed: u64,
}

impl Trial {
    pub fn rng(&self) -> ChaCha8Rng {
        stream_rng(self.master_seed, self.index as u64)
    }

    /// Seed/stream pair for noise sampled within this trial.
    pub fn noise_stream(&self) -> (u64, u64) {
        (self.master_seed, self.index as u64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloSummary {
    pub trials: usize,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Neumaier-compensated sum in slice order.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Runs `experiment` for `trials` trajectories and averages the returned
/// observable vectors. With `threads = Some(k)` a dedicated pool of `k`
/// workers is used; results are gathered by trial index and reduced in that
/// order, so the output does not depend on scheduling.
pub fn monte_carlo<F>(
    experiment: F,
    trials: usize,
    master_seed: u64,
    threads: Option<usize>,
) -> Result<MonteCarloSummary, DynamicsError>
where
    F: Fn(Trial) -> Result<Vec<f64>, DynamicsError> + Send + Sync,
{
    if trials < 2 {
        return Err(DynamicsError::TooFewTrials(trials));
    }
    let run = || -> Vec<Result<Vec<f64>, DynamicsError>> {
        (0..trials).into_par_iter().map(|index| experiment(Trial { index, master_seed })).collect()
    };
    let results = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| DynamicsError::TrialFailed { trial: 0, message: e.to_string() })?
            .install(run),
        None => run(),
    };
    let rows: Vec<Vec<f64>> = results
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| match e {
                DynamicsError::TrialFailed { .. } => e,
                other => DynamicsError::TrialFailed { trial: i, message: other.to_string() },
            })
        })
        .collect::<Result<_, _>>()?;
    let width = rows[0].len();
    let n = trials as f64;
    let mut mean = Vec::with_capacity(width);
    let mut stderr = Vec::with_capacity(width);
    for j in 0..width {
        let m = compensated_sum(rows.iter().map(|r| r[j])) / n;
        let var = compensated_sum(rows.iter().map(|r| (r[j] - m).powi(2))) / (n - 1.0);
        mean.push(m);
        stderr.push((var / n).sqrt());
    }
    Ok(MonteCarloSummary { trials, mean, stderr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{fidelity, ladder, local, number, Factor};
    use approx::assert_abs_diff_eq;

    fn mode(cutoff: usize) -> SpaceDescriptor {
        SpaceDescriptor::new(vec![Factor::Phonon { cutoff }]).unwrap()
    }

    fn coherent(cutoff: usize, alpha: C64) -> StateVector {
        StateVector::new(mode(cutoff), local::coherent(cutoff, alpha)).unwrap()
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let s = mode(5);
        let psi = coherent(5, C64::new(0.3, 0.1));
        let r = evolve_static(&Operator::zeros(&s), &psi, 3.0).unwrap();
        assert_eq!(r.state, psi);
    }

    #[test]
    fn oscillator_rotates_coherent_state() {
        // exp(−iωt a†a)|α⟩ = |α e^{−iωt}⟩
        let (w, t, alpha) = (1.3, 0.9, C64::new(0.5, 0.0));
        let h = number(&mode(20), 0).unwrap().scale_real(w);
        let r = evolve_static(&h, &coherent(20, alpha), t).unwrap();
        let want = coherent(20, alpha * (-I * w * t).exp());
        assert!(fidelity(&r.state, &want).unwrap() > 1.0 - 1e-6);
    }

    #[test]
    fn static_group_property() {
        let s = mode(6);
        let (a, ad) = ladder(&s, 0).unwrap();
        let h = &(&ad * &a) + &(&a + &ad).scale_real(0.4);
        let psi = coherent(6, C64::new(0.2, -0.1));
        let once = evolve_static(&h, &psi, 1.7).unwrap().state;
        let half = evolve_static(&h, &psi, 0.6).unwrap().state;
        let twice = evolve_static(&h, &half, 1.1).unwrap().state;
        assert!((once.amplitudes() - twice.amplitudes()).norm() < 1e-10);
    }

    #[test]
    fn non_hermitian_rejected() {
        let s = mode(3);
        let (a, _) = ladder(&s, 0).unwrap();
        let psi = StateVector::basis(&s, &[0]).unwrap();
        assert!(matches!(evolve_static(&a, &psi, 1.0), Err(DynamicsError::NotHermitian(_))));
    }

    #[test]
    fn constant_timedep_matches_static() {
        let s = mode(8);
        let (a, ad) = ladder(&s, 0).unwrap();
        let h = &(&ad * &a).scale_real(0.7) + &(&a + &ad).scale_real(0.3);
        let psi = coherent(8, C64::new(0.1, 0.2));
        let ph = ParametricHamiltonian::new(&s).with_static(&h).with_max_frequency(1.0);
        let grid = TimeGrid::resolving(2.0, 1.0, 0.04);
        let r = evolve_timedep(&ph, &psi, grid, &EvolutionOptions::default()).unwrap();
        let exact = evolve_static(&h, &psi, 2.0).unwrap().state;
        assert!(1.0 - fidelity(&r.state, &exact).unwrap() < 1e-8);
    }

    // H = i(u a† − u* a) with u = u0 e^{iωt} displaces the vacuum to
    // α(t) = ∫u dt = u0 (e^{iωt} − 1)/(iω).
    fn drive(s: &SpaceDescriptor, u0: C64, w: f64) -> ParametricHamiltonian {
        let (a, ad) = ladder(s, 0).unwrap();
        ParametricHamiltonian::new(s)
            .with_term(&ad, Arc::new(move |t| I * u0 * (I * w * t).exp()))
            .with_term(&a, Arc::new(move |t| -I * (u0 * (I * w * t).exp()).conj()))
            .with_max_frequency(w)
    }

    #[test]
    fn driven_oscillator_matches_exact_displacement() {
        let (u0, w, t) = (C64::new(0.3, 0.0), 1.0, 5.0);
        let s = mode(16);
        let psi0 = StateVector::basis(&s, &[0]).unwrap();
        let grid = TimeGrid::resolving(t, w, 0.01);
        let r = evolve_timedep(&drive(&s, u0, w), &psi0, grid, &EvolutionOptions::default()).unwrap();
        let alpha = u0 * ((I * w * t).exp() - ONE) / (I * w);
        let want = coherent(16, alpha);
        assert!(1.0 - fidelity(&r.state, &want).unwrap() < 1e-6);
    }

    #[test]
    fn second_order_convergence() {
        let (u0, w, t) = (C64::new(0.4, 0.0), 1.0, 4.0);
        let s = mode(16);
        let (a, ad) = ladder(&s, 0).unwrap();
        // Non-commuting pieces so that the midpoint rule carries real error.
        let h = drive(&s, u0, w).with_static(&(&ad * &a).scale_real(0.5));
        let psi0 = StateVector::basis(&s, &[0]).unwrap();
        let reference = evolve_timedep(&h, &psi0, TimeGrid::new(0.0, t, 16000), &EvolutionOptions::default())
            .unwrap()
            .state;
        let errs: Vec<f64> = [100, 200, 400, 800]
            .iter()
            .map(|&n| {
                let r = evolve_timedep(&h, &psi0, TimeGrid::new(0.0, t, n), &EvolutionOptions::default()).unwrap();
                (r.state.amplitudes() - reference.amplitudes()).norm()
            })
            .collect();
        let slope = (errs[0].ln() - errs[3].ln()) / 8f64.ln();
        assert!((slope - 2.0).abs() < 0.3, "slope {slope}, errors {errs:?}");
    }

    #[test]
    fn under_resolved_grid_rejected() {
        let s = mode(4);
        let h = drive(&s, C64::new(0.1, 0.0), 10.0);
        let psi0 = StateVector::basis(&s, &[0]).unwrap();
        let err = evolve_timedep(&h, &psi0, TimeGrid::new(0.0, 1.0, 100), &EvolutionOptions::default());
        assert!(matches!(err, Err(DynamicsError::UnderResolved { omega_max, .. }) if omega_max == 10.0));
    }

    #[test]
    fn samples_and_step_halving() {
        let s = mode(12);
        let h = drive(&s, C64::new(0.2, 0.0), 1.0);
        let psi0 = StateVector::basis(&s, &[0]).unwrap();
        let opts = EvolutionOptions {
            observables: vec![number(&s, 0).unwrap()],
            sample_every: 10,
            convergence_check: true,
            ..Default::default()
        };
        let r = evolve_timedep(&h, &psi0, TimeGrid::new(0.0, 2.0, 100), &opts).unwrap();
        assert_eq!(r.samples.len(), 11);
        assert_eq!(r.samples[0].values[0], 0.0);
        assert!(r.step_halving_infidelity.unwrap() < 1e-6);
        assert!(r.norm_drift < 1e-12);
    }

    #[test]
    fn envelopes_are_continuous_and_non_negative() {
        let shapes = [PulseShape::Sin2Ramp { ramp: 2.0 }, PulseShape::Sin2Ramp { ramp: 5.0 }, PulseShape::Gaussian { sigma: 1.5 }];
        for shape in shapes {
            let p = PulseEnvelope::new(shape, 3.0, 0.0, 10.0).unwrap();
            let mut prev = p.value(-1.0);
            for k in 0..=12000 {
                let v = p.value(-1.0 + k as f64 * 1e-3);
                assert!(v >= 0.0 && v <= 3.0 + 1e-12);
                assert!((v - prev).abs() < 1e-2, "{shape:?} jumps at step {k}");
                prev = v;
            }
            assert_abs_diff_eq!(p.value(5.0), 3.0, epsilon = 1e-12);
        }
        assert_eq!(PulseEnvelope::new(PulseShape::Constant, 2.0, 0.0, 1.0).unwrap().value(7.0), 2.0);
        assert!(PulseEnvelope::new(PulseShape::Sin2Ramp { ramp: 6.0 }, 1.0, 0.0, 10.0).is_err());
        assert!(PulseEnvelope::new(PulseShape::Constant, -1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn silent_field_is_zero_and_streams_are_deterministic() {
        let quiet = NoiseField::new(0.0, 1.0, 7).unwrap();
        assert!(sample_field(&quiet, 0.01, 3.0, 0).unwrap().iter().all(|&x| x == 0.0));
        let noisy = NoiseField::new(2.0, 1.0, 7).unwrap();
        let a = sample_field(&noisy, 0.01, 3.0, 4).unwrap();
        let b = sample_field(&noisy, 0.01, 3.0, 4).unwrap();
        let c = sample_field(&noisy, 0.01, 3.0, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 301);
        assert!(matches!(
            sample_field(&noisy, 0.1, 3.0, 0),
            Err(DynamicsError::NoiseStepTooCoarse { .. })
        ));
        assert_eq!(derive_seed(7, 2), derive_seed(7, 2));
        assert_ne!(derive_seed(7, 2), derive_seed(7, 3));
        assert_ne!(derive_seed(7, 2), derive_seed(8, 2));
    }

    #[test]
    fn ou_stationary_statistics() {
        let noise = NoiseField::new(1.5, 1.0, 11).unwrap();
        let dt = 0.05;
        let xs = sample_field(&noise, dt, dt * 1e6, 0).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((var / 2.25 - 1.0).abs() < 0.02, "variance {var}");
        // lag-T autocorrelation ≈ σ² e^{-1}
        let lag = 20;
        let cov = xs.windows(lag + 1).map(|w| (w[0] - mean) * (w[lag] - mean)).sum::<f64>() / (n - lag as f64);
        assert!((cov / noise.autocorrelation(1.0) - 1.0).abs() < 0.05, "cov {cov}");
    }

    #[test]
    fn piecewise_constant_statistics() {
        let noise = NoiseField::new(1.0, 1.0, 3).unwrap().with_model(NoiseModel::PiecewiseConstant);
        let dt = 0.05;
        let xs = sample_field(&noise, dt, 2e4, 1).unwrap();
        let n = xs.len() as f64;
        let var = xs.iter().map(|x| x * x).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
        assert_abs_diff_eq!(noise.autocorrelation(0.5), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn deterministic_experiment_has_zero_stderr() {
        let s = monte_carlo(|_| Ok(vec![1.5, -2.0]), 10, 1, None).unwrap();
        assert_eq!(s.mean, vec![1.5, -2.0]);
        assert_eq!(s.stderr, vec![0.0, 0.0]);
        assert!(matches!(monte_carlo(|_| Ok(vec![0.0]), 1, 1, None), Err(DynamicsError::TooFewTrials(1))));
    }

    #[test]
    fn monte_carlo_is_thread_count_independent() {
        let exp = |t: Trial| -> Result<Vec<f64>, DynamicsError> {
            let mut rng = t.rng();
            let x: f64 = rng.sample(StandardNormal);
            Ok(vec![x, x * x * 1e-3 + 1e8])
        };
        let one = monte_carlo(exp, 500, 42, Some(1)).unwrap();
        let many = monte_carlo(exp, 500, 42, Some(7)).unwrap();
        let default = monte_carlo(exp, 500, 42, None).unwrap();
        assert_eq!(one, many);
        assert_eq!(one, default);
    }

    #[test]
    fn failing_trial_is_reported() {
        let r = monte_carlo(
            |t| if t.index == 3 { Err(DynamicsError::NormDrift(1.0)) } else { Ok(vec![0.0]) },
            5,
            0,
            Some(2),
        );
        assert!(matches!(r, Err(DynamicsError::TrialFailed { trial: 3, .. })));
    }

    #[test]
    fn stderr_halves_when_trials_quadruple() {
        // Doubling the trials divides the standard error by √2; compare
        // stderr(4n)·2 against stderr(n) across independent replicas with a
        // χ²-style band (variance ratio of sample variances, 95%).
        let exp = |t: Trial| -> Result<Vec<f64>, DynamicsError> {
            let mut rng = t.rng();
            Ok(vec![rng.sample::<f64, _>(StandardNormal)])
        };
        let small = monte_carlo(exp, 400, 1, None).unwrap().stderr[0];
        let large = monte_carlo(exp, 800, 2, None).unwrap().stderr[0];
        let ratio = small / large;
        // Each stderr estimate has relative sd ≈ 1/√(2n); 95% band on the ratio.
        let band = 1.96 * (1.0 / 800.0 + 1.0 / 1600.0f64).sqrt();
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < band, "ratio {ratio}");
    }
}
