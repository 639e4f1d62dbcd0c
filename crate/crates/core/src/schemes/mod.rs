//! Heating experiments and gate schemes built on the lower layers.
//!
//! Gate schemes work in whatever consistent unit system the caller picks
//! (typically ℏ = 1 and ω_x = 1); heating takes SI chains and fields.

use thiserror::Error;

use crate::chain::ChainError;
use crate::dynamics::DynamicsError;
use crate::effham::EffHamError;
use crate::hilbert::{CMatrix, HilbertError, StateVector, C64};

mod adiabatic;
mod heating;
mod kick;
mod ms;

pub use adiabatic::*;
pub use heating::*;
pub use kick::*;
pub use ms::*;

/// Population allowed on the top two Fock levels of any mode.
pub const LEAKAGE_LIMIT: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("drive kind {found:?} cannot be used here, expected {expected:?}")]
    WrongDriveKind { expected: DriveKind, found: DriveKind },
    #[error("detuning {detuning} is within {limit} of resonance; effective regime invalid")]
    DetuningTooSmall { detuning: f64, limit: f64 },
    #[error("truncation leakage {leakage:.3e} exceeds {limit:.0e}; raise the cutoff")]
    Leakage { leakage: f64, limit: f64 },
    #[error("state is not in two-branch coherent form (residual {0:.3e})")]
    NotBranchForm(f64),
    #[error("undefined program step {0:?}")]
    UndefinedStep(String),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    EffHam(#[from] EffHamError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DriveKind {
    TravelingWave,
    StandingWaveNode,
    Bichromatic,
}

/// A laser drive: Rabi frequency, detuning and Lamb–Dicke parameter(s).
#[derive(Clone, Debug, PartialEq)]
pub struct LaserDrive {
    pub kind: DriveKind,
    pub rabi: f64,
    pub detuning: f64,
    /// One entry per mode, or a single bus-mode value.
    pub eta: Vec<f64>,
}

impl LaserDrive {
    pub fn new(kind: DriveKind, rabi: f64, detuning: f64, eta: Vec<f64>) -> Result<Self, SchemeError> {
        if !(rabi > 0.0 && rabi.is_finite()) {
            return Err(SchemeError::InvalidParameter { name: "rabi", value: rabi });
        }
        if !detuning.is_finite() {
            return Err(SchemeError::InvalidParameter { name: "detuning", value: detuning });
        }
        if eta.is_empty() || eta.iter().any(|e| !e.is_finite()) {
            return Err(SchemeError::InvalidParameter { name: "eta", value: eta.first().copied().unwrap_or(f64::NAN) });
        }
        Ok(Self { kind, rabi, detuning, eta })
    }

    pub fn bus_eta(&self) -> f64 {
        self.eta[0]
    }

    /// Guard for effective-Hamiltonian regimes: `|detuning| > 3ω_x` or an
    /// error; a warning is returned below `10ω_x`.
    pub fn check_detuning(&self, omega_x: f64) -> Result<Option<String>, SchemeError> {
        let d = self.detuning.abs();
        if d <= 3.0 * omega_x {
            return Err(SchemeError::DetuningTooSmall { detuning: self.detuning, limit: 3.0 * omega_x });
        }
        if d < 10.0 * omega_x {
            let msg = format!("detuning {} is below 10 ω_x; effective Hamiltonian only approximate", self.detuning);
            log::warn!("{msg}");
            return Ok(Some(msg));
        }
        Ok(None)
    }

    fn expect(&self, kind: DriveKind) -> Result<(), SchemeError> {
        if self.kind != kind {
            return Err(SchemeError::WrongDriveKind { expected: kind, found: self.kind });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SectorFidelity {
    /// Bus Fock number.
    pub n: usize,
    pub fidelity: f64,
}

/// Outcome of one gate simulation.
#[derive(Clone, Debug)]
pub struct GateReport {
    pub name: String,
    /// Fidelity to the declared target, in `[0, 1]`.
    pub fidelity: f64,
    pub duration: f64,
    pub sectors: Vec<SectorFidelity>,
    pub leakage: f64,
    pub final_state: Option<StateVector>,
    /// Realized unitary on the reported subspace, one block per sector.
    pub sector_unitaries: Vec<CMatrix>,
    pub warnings: Vec<String>,
}

impl GateReport {
    fn new(name: &str, duration: f64) -> Self {
        Self {
            name: name.to_string(),
            fidelity: 0.0,
            duration,
            sectors: Vec::new(),
            leakage: 0.0,
            final_state: None,
            sector_unitaries: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn min_sector_fidelity(&self) -> f64 {
        self.sectors.iter().map(|s| s.fidelity).fold(1.0, f64::min)
    }

    pub fn sector_spread(&self) -> f64 {
        let max = self.sectors.iter().map(|s| s.fidelity).fold(f64::MIN, f64::max);
        let min = self.sectors.iter().map(|s| s.fidelity).fold(f64::MAX, f64::min);
        if self.sectors.is_empty() { 0.0 } else { max - min }
    }
}

pub(crate) fn check_leakage(leakage: f64) -> Result<(), SchemeError> {
    if leakage > LEAKAGE_LIMIT {
        return Err(SchemeError::Leakage { leakage, limit: LEAKAGE_LIMIT });
    }
    Ok(())
}

/// `|Tr(T†M)/d|²`, clamped to `[0, 1]`.
pub fn process_fidelity(target: &CMatrix, realized: &CMatrix) -> f64 {
    let d = target.nrows() as f64;
    let tr: C64 = target.iter().zip(realized.iter()).map(|(t, m)| t.conj() * m).sum();
    (tr.norm_sqr() / (d * d)).clamp(0.0, 1.0)
}

/// `M_rc = ⟨basis_r|out_c⟩` for `out_c = U|basis_c⟩`.
pub(crate) fn block(basis: &[StateVector], outputs: &[StateVector]) -> Result<CMatrix, HilbertError> {
    let d = basis.len();
    let mut m = CMatrix::zeros(d, d);
    for (c, out) in outputs.iter().enumerate() {
        for (r, b) in basis.iter().enumerate() {
            m[(r, c)] = b.inner(out)?;
        }
    }
    Ok(m)
}
