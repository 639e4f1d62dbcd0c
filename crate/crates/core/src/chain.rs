//! Equilibrium configuration and axial normal modes of a linear ion chain.
//!
//! Positions are dimensionless, in units of
//! `ℓ = (e²/4πε₀Mω_x²)^{1/3}`. The force-balance equations
//! `u_m = Σ_{n≠m} sgn(m−n)/(u_m−u_n)²` are solved by damped Newton
//! iteration; the Jacobian of that system is exactly the coupling matrix
//! whose eigenvectors are the collective modes.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::units::{ELEMENTARY_CHARGE, HBAR, VACUUM_PERMITTIVITY};

const MAX_NEWTON_ITERATIONS: usize = 200;
const FORCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("invalid chain parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("ion count must be at least 1")]
    NoIons,
    #[error("equilibrium solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("coupling matrix has non-positive eigenvalue {0:.3e}; equilibrium is unstable")]
    NegativeEigenvalue(f64),
    #[error("eigenvector deviates from the center-of-mass form by {0:.3e}")]
    ComModeMismatch(f64),
    #[error("ion-count range must cover at least [{min}, {max}]")]
    RangeTooNarrow { min: usize, max: usize },
}

/// N ions of equal mass and charge in a harmonic axial well.
#[derive(Clone, Debug, PartialEq)]
pub struct IonChain {
    n: usize,
    mass: f64,
    charge: f64,
    omega_x: f64,
}

impl IonChain {
    /// `mass` in kg, `omega_x` in rad/s; charge defaults to `e`.
    pub fn new(n: usize, mass: f64, omega_x: f64) -> Result<Self, ChainError> {
        Self::with_charge(n, mass, ELEMENTARY_CHARGE, omega_x)
    }

    pub fn with_charge(n: usize, mass: f64, charge: f64, omega_x: f64) -> Result<Self, ChainError> {
        if n == 0 {
            return Err(ChainError::NoIons);
        }
        for (name, value) in [("mass", mass), ("charge", charge), ("omega_x", omega_x)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ChainError::InvalidParameter { name, value });
            }
        }
        Ok(Self { n, mass, charge, omega_x })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn charge(&self) -> f64 {
        self.charge
    }

    pub fn omega_x(&self) -> f64 {
        self.omega_x
    }

    /// `ℓ = (q²/4πε₀Mω_x²)^{1/3}` in metres.
    pub fn length_scale(&self) -> f64 {
        let k = self.charge * self.charge / (4.0 * std::f64::consts::PI * VACUUM_PERMITTIVITY);
        (k / (self.mass * self.omega_x * self.omega_x)).cbrt()
    }

    /// Zero-point extent `√(ℏ/2Mω)` of a mode at angular frequency `omega`.
    pub fn zero_point_extent(&self, omega: f64) -> f64 {
        (HBAR / (2.0 * self.mass * omega)).sqrt()
    }

    /// Equilibrium positions in metres.
    pub fn positions(&self) -> Result<Vec<f64>, ChainError> {
        let l = self.length_scale();
        Ok(equilibrium_positions(self.n)?.into_iter().map(|u| u * l).collect())
    }

    pub fn normal_modes(&self) -> Result<Vec<ModeSpec>, ChainError> {
        normal_modes(self)
    }
}

/// One axial collective mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSpec {
    /// 1-based mode index in order of increasing frequency.
    pub p: usize,
    /// rad/s.
    pub omega: f64,
    /// `ω_p/ω_x = √λ_p`.
    pub frequency_ratio: f64,
    /// Normalized eigenvector, one entry per ion.
    pub b: Vec<f64>,
}

impl ModeSpec {
    pub fn component_sum(&self) -> f64 {
        self.b.iter().sum()
    }
}

/// Net dimensionless force on each ion; zero at equilibrium.
pub fn force_residual(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    (0..n)
        .map(|m| {
            let coulomb: f64 = (0..n)
                .filter(|&k| k != m)
                .map(|k| {
                    let d = u[m] - u[k];
                    d.signum() / (d * d)
                })
                .sum();
            u[m] - coulomb
        })
        .collect()
}

/// Second derivatives of the dimensionless potential at `u`.
pub fn coupling_matrix(u: &[f64]) -> DMatrix<f64> {
    let n = u.len();
    let mut a = DMatrix::zeros(n, n);
    for m in 0..n {
        let mut diag = 1.0;
        for k in 0..n {
            if k != m {
                let inv3 = 1.0 / (u[m] - u[k]).abs().powi(3);
                a[(m, k)] = -2.0 * inv3;
                diag += 2.0 * inv3;
            }
        }
        a[(m, m)] = diag;
    }
    a
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Sorted dimensionless equilibrium positions of `n` ions.
pub fn equilibrium_positions(n: usize) -> Result<Vec<f64>, ChainError> {
    if n == 0 {
        return Err(ChainError::NoIons);
    }
    if n == 1 {
        return Ok(vec![0.0]);
    }
    // Uniform spacing with the approximate central separation 2.018 n^-0.559.
    let spacing = 2.018 * (n as f64).powf(-0.559);
    let centre = (n as f64 - 1.0) / 2.0;
    let mut u: Vec<f64> = (0..n).map(|m| (m as f64 - centre) * spacing).collect();
    let mut f = force_residual(&u);
    let mut res = max_norm(&f);

    for _ in 0..MAX_NEWTON_ITERATIONS {
        if res < FORCE_TOLERANCE {
            return Ok(symmetrize(u));
        }
        let jac = coupling_matrix(&u);
        let rhs = DVector::from_iterator(n, f.iter().map(|x| -x));
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or(ChainError::NoConvergence { iterations: 0, residual: res })?;

        // Backtrack until the residual drops and the ordering is preserved.
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(x, s)| x + lambda * s).collect();
            let ordered = trial.windows(2).all(|w| w[1] > w[0]);
            if ordered {
                let ft = force_residual(&trial);
                let rt = max_norm(&ft);
                if rt < res || lambda < 1e-6 {
                    u = trial;
                    f = ft;
                    res = rt;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-10 {
                return Err(ChainError::NoConvergence { iterations: 0, residual: res });
            }
        }
    }
    if res < FORCE_TOLERANCE {
        Ok(symmetrize(u))
    } else {
        Err(ChainError::NoConvergence { iterations: MAX_NEWTON_ITERATIONS, residual: res })
    }
}

// Enforce exact antisymmetry u_m = −u_{N+1−m}; the Newton fixed point is
// symmetric to rounding, this only removes the rounding.
fn symmetrize(u: Vec<f64>) -> Vec<f64> {
    let n = u.len();
    let mut out = u.clone();
    for m in 0..n {
        out[m] = 0.5 * (u[m] - u[n - 1 - m]);
    }
    out
}

/// Axial normal modes sorted by frequency; mode 1 is the center-of-mass mode.
pub fn normal_modes(chain: &IonChain) -> Result<Vec<ModeSpec>, ChainError> {
    let n = chain.n();
    let u = equilibrium_positions(n)?;
    let eig = SymmetricEigen::new(coupling_matrix(&u));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    let com = 1.0 / (n as f64).sqrt();
    let mut modes = Vec::with_capacity(n);
    for (p0, &k) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[k];
        if lambda <= 0.0 {
            return Err(ChainError::NegativeEigenvalue(lambda));
        }
        let mut b: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        if let Some(first) = b.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                b.iter_mut().for_each(|x| *x = -*x);
            }
        }
        let (ratio, b) = if p0 == 0 {
            // The COM mode is exactly (1,…,1)/√N with λ = 1; replace the
            // numerical vector after checking it.
            let dev = b.iter().fold(0.0f64, |acc, x| acc.max((x - com).abs()));
            if dev > 1e-8 || (lambda - 1.0).abs() > 1e-8 {
                return Err(ChainError::ComModeMismatch(dev.max((lambda - 1.0).abs())));
            }
            (1.0, vec![com; n])
        } else {
            (lambda.sqrt(), b)
        };
        modes.push(ModeSpec { p: p0 + 1, omega: chain.omega_x() * ratio, frequency_ratio: ratio, b });
    }
    Ok(modes)
}

/// `η_{p,n} = k_eff √(ℏ/2Mω_p) b⁽ᵖ⁾_n` for every ion.
pub fn lamb_dicke(chain: &IonChain, mode: &ModeSpec, k_eff: f64) -> Vec<f64> {
    let x0 = chain.zero_point_extent(mode.omega);
    mode.b.iter().map(|b| k_eff * x0 * b).collect()
}

/// Power-law fit of the minimum adjacent spacing against ion number.
#[derive(Clone, Debug, PartialEq)]
pub struct SpacingFit {
    pub exponent: f64,
    pub prefactor: f64,
    /// RMS residual of the log-log fit.
    pub residual: f64,
    /// `(N, minimum dimensionless spacing)` samples.
    pub samples: Vec<(usize, f64)>,
}

pub fn min_spacing(n: usize) -> Result<f64, ChainError> {
    let u = equilibrium_positions(n)?;
    Ok(u.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min))
}

/// Least-squares slope of `ln(min spacing)` against `ln N` over `n_min..=n_max`.
pub fn spacing_exponent(n_min: usize, n_max: usize) -> Result<SpacingFit, ChainError> {
    if n_min > 2 || n_max < 40 {
        return Err(ChainError::RangeTooNarrow { min: 2, max: 40 });
    }
    let samples: Vec<(usize, f64)> = (n_min.max(2)..=n_max)
        .map(|n| min_spacing(n).map(|s| (n, s)))
        .collect::<Result<_, _>>()?;
    let xs: Vec<f64> = samples.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|(_, s)| s.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / k)
        .sqrt();
    Ok(SpacingFit { exponent: slope, prefactor: intercept.exp(), residual, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::ATOMIC_MASS_UNIT;
    use approx::assert_relative_eq;

    fn ca40(n: usize) -> IonChain {
        IonChain::new(n, 40.0 * ATOMIC_MASS_UNIT, 2.0 * std::f64::consts::PI * 500e3).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert_eq!(IonChain::new(0, 1.0, 1.0), Err(ChainError::NoIons));
        assert!(matches!(
            IonChain::new(2, 1.0, -1.0),
            Err(ChainError::InvalidParameter { name: "omega_x", .. })
        ));
        assert!(matches!(IonChain::new(2, f64::NAN, 1.0), Err(ChainError::InvalidParameter { .. })));
    }

    #[test]
    fn small_chains_match_closed_forms() {
        assert_eq!(equilibrium_positions(1).unwrap(), vec![0.0]);
        // 2u = 1/(2u)²  →  u = (1/4)^{1/3}
        let u2 = equilibrium_positions(2).unwrap();
        assert_relative_eq!(u2[1], 0.25f64.cbrt(), max_relative = 1e-13);
        assert_relative_eq!(u2[0], -0.25f64.cbrt(), max_relative = 1e-13);
        // outer ion: u = 1/u² + 1/(2u)²  →  u³ = 5/4
        let u3 = equilibrium_positions(3).unwrap();
        assert_eq!(u3[1], 0.0);
        assert_relative_eq!(u3[2], 1.25f64.cbrt(), max_relative = 1e-13);
    }

    #[test]
    fn force_balance_up_to_one_hundred_ions() {
        for n in [4, 10, 25, 50, 100] {
            let u = equilibrium_positions(n).unwrap();
            assert!(max_norm(&force_residual(&u)) < 1e-12, "N = {n}");
            for m in 0..n {
                assert_eq!(u[m], -u[n - 1 - m]);
            }
        }
    }

    #[test]
    fn mode_frequencies_small_chains() {
        let m2 = normal_modes(&ca40(2)).unwrap();
        assert_eq!(m2[0].frequency_ratio, 1.0);
        assert_relative_eq!(m2[1].frequency_ratio, 3f64.sqrt(), max_relative = 1e-10);
        let m3 = normal_modes(&ca40(3)).unwrap();
        assert_relative_eq!(m3[1].frequency_ratio, 3f64.sqrt(), max_relative = 1e-10);
        assert_relative_eq!(m3[2].frequency_ratio, (29.0f64 / 5.0).sqrt(), max_relative = 1e-10);
        assert_eq!(m3[0].omega, ca40(3).omega_x());
    }

    #[test]
    fn eigenvectors_orthonormal_and_decoupled() {
        for n in [2, 3, 7, 20] {
            let modes = normal_modes(&ca40(n)).unwrap();
            for (i, p) in modes.iter().enumerate() {
                for (j, q) in modes.iter().enumerate() {
                    let dot: f64 = p.b.iter().zip(&q.b).map(|(a, b)| a * b).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-10);
                }
                if p.p == 1 {
                    assert_relative_eq!(p.component_sum(), (n as f64).sqrt(), max_relative = 1e-14);
                } else {
                    assert!(p.component_sum().abs() < 1e-10);
                    assert!(p.b.iter().find(|x| x.abs() > 1e-12).unwrap() > &0.0);
                }
            }
            assert!(modes.windows(2).all(|w| w[1].omega > w[0].omega));
        }
    }

    #[test]
    fn lamb_dicke_parameters() {
        let chain = ca40(3);
        let modes = chain.normal_modes().unwrap();
        let k = 2.0 * std::f64::consts::PI / 729e-9;
        let eta1 = lamb_dicke(&chain, &modes[0], k);
        let want = k * (HBAR / (2.0 * 3.0 * chain.mass() * chain.omega_x())).sqrt();
        for e in &eta1 {
            assert_relative_eq!(*e, want, max_relative = 1e-14);
        }
        for m in &modes[1..] {
            let eta = lamb_dicke(&chain, m, k);
            assert!(eta.iter().sum::<f64>().abs() < 1e-10 * want);
        }
        // η ∝ 1/√ω_p
        let e2 = lamb_dicke(&chain, &modes[1], k);
        let ratio = (e2[0] / modes[1].b[0]) / (eta1[0] / modes[0].b[0]);
        assert_relative_eq!(ratio, 1.0 / modes[1].frequency_ratio.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn spacing_is_scale_invariant_and_decreasing() {
        assert!(min_spacing(3).unwrap() < min_spacing(2).unwrap());
        let a = IonChain::new(5, 1e-25, 1e6).unwrap();
        let b = IonChain::new(5, 1e-25, 2e6).unwrap();
        let (pa, pb) = (a.positions().unwrap(), b.positions().unwrap());
        for (x, y) in pa.iter().zip(&pb) {
            assert_relative_eq!(x / a.length_scale(), y / b.length_scale(), max_relative = 1e-14);
        }
        assert!(matches!(spacing_exponent(2, 30), Err(ChainError::RangeTooNarrow { .. })));
    }
}
