//! Numerical toolkit for trapped-ion quantum logic over collective phonon
//! modes: ion-chain normal modes, effective Hamiltonians of detuned
//! interactions, unitary and stochastic dynamics, and gate schemes that
//! tolerate or avoid motional heating.

pub mod hilbert;
pub mod chain;
pub mod effham;
pub mod dynamics;
pub mod schemes;
pub mod units;
