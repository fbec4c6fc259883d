//! Weak `Ĵz` measurement with Gaussian Kraus operators, the outcome-conditioned
//! feedback rotation, the kicked-top Floquet map and the outcome-averaged
//! (dephased) map on density matrices.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, SymmetricEigen, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Lane, Streams};
use crate::spin::{collective_op, expectations, Axis, DickeState, Spin};
use crate::Complex64;

/// Squared-norm floor below which a Kraus branch is treated as impossible.
pub const DEGENERATE_NORM_SQ: f64 = 1e-300;

/// Largest `J` for which dense density matrices are offered.
pub const MAX_DENSE_J: f64 = 200.0;

/// How the measurement outcome enters the feedback rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackPolicy {
    /// Measure `Ĵz`, then twist by `(k/J)·m`.
    #[default]
    Outcome,
    /// No measurement; twist by the exact `(k/J)·⟨Ĵz⟩`.
    MeanField,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Twist strength.
    pub k: f64,
    /// Rotation angle about `y` (radians).
    pub p: f64,
    /// Meter resolution, in units of `Ĵz` eigenvalues.
    pub sigma: f64,
    /// Ensemble size; `J = N/2`.
    pub n: u64,
    pub n_steps: usize,
    #[serde(default)]
    pub policy: FeedbackPolicy,
}

impl ProtocolParams {
    pub fn new(k: f64, sigma: f64, n: u64, n_steps: usize) -> Result<Self> {
        let params = Self {
            k,
            p: FRAC_PI_2,
            sigma,
            n,
            n_steps,
            policy: FeedbackPolicy::Outcome,
        };
        params.validate()?;
        Ok(params)
    }

    /// Sets `sigma = ratio · √J`.
    pub fn with_sigma_over_sqrt_j(mut self, ratio: f64) -> Self {
        self.sigma = ratio * self.j().sqrt();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param(format!("sigma = {} must be positive", self.sigma)));
        }
        if self.n == 0 {
            return Err(Error::param("ensemble size N must be at least 1"));
        }
        if !self.k.is_finite() || !self.p.is_finite() {
            return Err(Error::param("k and p must be finite"));
        }
        Ok(())
    }

    pub fn j(&self) -> f64 {
        self.n as f64 / 2.0
    }

    pub fn spin(&self) -> Result<Spin> {
        Spin::from_ensemble(self.n)
    }

    /// Dephasing rate of the averaged map, always recomputed.
    pub fn gamma(&self) -> f64 {
        self.k * self.k * self.sigma * self.sigma / (2.0 * self.j() * self.j())
            + 1.0 / (8.0 * self.sigma * self.sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementOutcome {
    pub m: f64,
}

/// Draws `m` with density `P_m = ⟨ψ|K̂_m†K̂_m|ψ⟩`.
///
/// The density is the mixture `Σ |c_{m_z}|² 𝒩(m_z, σ²)`, sampled exactly by
/// picking a Dicke label and then adding meter noise.
pub fn sample_outcome<R: Rng + ?Sized>(state: &DickeState, sigma: f64, rng: &mut R) -> MeasurementOutcome {
    let u: f64 = rng.random::<f64>() * state.norm_sqr();
    let spin = state.spin();
    let mut acc = 0.0;
    let mut label = spin.m(spin.dim() - 1);
    for (i, c) in state.amplitudes().iter().enumerate() {
        acc += c.norm_sqr();
        if u < acc {
            label = spin.m(i);
            break;
        }
    }
    let noise: f64 = rng.sample(StandardNormal);
    MeasurementOutcome {
        m: label + sigma * noise,
    }
}

/// Outcome density `P_m` including the Gaussian prefactor.
pub fn outcome_density(state: &DickeState, m: f64, sigma: f64) -> f64 {
    let spin = state.spin();
    let norm = 1.0 / (2.0 * PI * sigma * sigma).sqrt();
    state
        .amplitudes()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let d = spin.m(i) - m;
            c.norm_sqr() * norm * (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .sum()
}

/// Diagonal of `K̂_m = (2πσ²)^{-1/4} exp(−(Ĵz − m)²/4σ²)` in the Dicke basis.
pub fn kraus_diagonal(spin: Spin, m: f64, sigma: f64) -> Vec<f64> {
    let pref = (2.0 * PI * sigma * sigma).powf(-0.25);
    let inv = 1.0 / (4.0 * sigma * sigma);
    spin.ms().map(|mz| pref * (-(mz - m) * (mz - m) * inv).exp()).collect()
}

/// Multiplies each amplitude by `exp(−(m_z − m)²/4σ²)` and renormalizes.
///
/// Returns the squared norm before renormalization, which is `P_m` without
/// the `(2πσ²)^{-1/2}` prefactor.
pub fn apply_kraus_in_place(state: &mut DickeState, m: f64, sigma: f64) -> Result<f64> {
    if !m.is_finite() {
        return Err(Error::param(format!("outcome m = {m} is not finite")));
    }
    let spin = state.spin();
    let inv = 1.0 / (4.0 * sigma * sigma);
    for (i, c) in state.amplitudes_mut().iter_mut().enumerate() {
        let d = spin.m(i) - m;
        *c *= (-d * d * inv).exp();
    }
    let norm_sq = state.norm_sqr();
    if !(norm_sq >= DEGENERATE_NORM_SQ) {
        return Err(Error::DegenerateOutcome { outcome: m, norm_sq });
    }
    state.normalize();
    Ok(norm_sq)
}

pub fn apply_kraus(state: &DickeState, m: f64, sigma: f64) -> Result<DickeState> {
    let mut out = state.clone();
    apply_kraus_in_place(&mut out, m, sigma)?;
    Ok(out)
}

/// `exp(i p Ĵy) · exp(i (k/J) m Ĵz)`.
pub fn feedback_unitary(state: &mut DickeState, m: f64, params: &ProtocolParams) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::param(format!("outcome m = {m} is not finite")));
    }
    let twist = params.k * m / state.spin().j();
    state.apply_diagonal_phase(|mz| twist * mz);
    state.rotate_in_place(Axis::Y, params.p)
}

/// One protocol step: sample, condition, feed back.
pub fn trajectory_step<R: Rng + ?Sized>(
    state: &DickeState,
    params: &ProtocolParams,
    rng: &mut R,
) -> Result<(DickeState, MeasurementOutcome)> {
    let mut next = state.clone();
    let outcome = match params.policy {
        FeedbackPolicy::Outcome => {
            let outcome = sample_outcome(state, params.sigma, rng);
            apply_kraus_in_place(&mut next, outcome.m, params.sigma)?;
            outcome
        }
        FeedbackPolicy::MeanField => {
            let mz = expectations(state).n.z * state.spin().j();
            MeasurementOutcome { m: mz }
        }
    };
    feedback_unitary(&mut next, outcome.m, params)?;
    Ok((next, outcome))
}

/// Protocol step with a prescribed outcome instead of a sampled one.
pub fn conditioned_step(state: &DickeState, m: f64, params: &ProtocolParams) -> Result<DickeState> {
    let mut next = apply_kraus(state, m, params.sigma)?;
    feedback_unitary(&mut next, m, params)?;
    Ok(next)
}

pub fn gamma_rate(k: f64, sigma: f64, j: f64) -> Result<f64> {
    if !(sigma > 0.0) || !(j > 0.0) {
        return Err(Error::param(format!("gamma_rate needs sigma > 0 and J > 0 (got {sigma}, {j})")));
    }
    Ok(k * k * sigma * sigma / (2.0 * j * j) + 1.0 / (8.0 * sigma * sigma))
}

/// Mixed collective-spin state.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    spin: Spin,
    rho: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn new(spin: Spin, rho: DMatrix<Complex64>) -> Result<Self> {
        if spin.j() > MAX_DENSE_J {
            return Err(Error::param(format!(
                "dense density matrices are limited to J <= {MAX_DENSE_J} (got {})",
                spin.j()
            )));
        }
        if rho.nrows() != spin.dim() || rho.ncols() != spin.dim() {
            return Err(Error::param("density matrix shape does not match 2J+1"));
        }
        Ok(Self { spin, rho })
    }

    pub fn from_pure(state: &DickeState) -> Result<Self> {
        Self::new(state.spin(), state.projector())
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.rho
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.rho
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    pub fn purity(&self) -> f64 {
        self.rho.iter().map(|x| x.norm_sqr()).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.rho - self.rho.adjoint()).iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let herm = (&self.rho + self.rho.adjoint()) * Complex64::new(0.5, 0.0);
        SymmetricEigen::new(herm).eigenvalues.iter().copied().collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Trace 1 within 1e−10, Hermitian within 1e−12, eigenvalues ≥ −1e−10.
    pub fn validate(&self) -> Result<()> {
        let tr = self.trace();
        if (tr - 1.0).abs() > 1e-10 {
            return Err(Error::NumericalDegeneracy(format!("trace {tr} differs from 1")));
        }
        let h = self.hermiticity_error();
        if h > 1e-12 {
            return Err(Error::NumericalDegeneracy(format!("hermiticity error {h:e}")));
        }
        let ev = self.min_eigenvalue();
        if ev < -1e-10 {
            return Err(Error::NumericalDegeneracy(format!("negative eigenvalue {ev:e}")));
        }
        Ok(())
    }

    /// Symmetrizes and rescales to unit trace.
    pub fn renormalize(&mut self) {
        self.rho = (&self.rho + self.rho.adjoint()) * Complex64::new(0.5, 0.0);
        let tr = self.trace();
        self.rho /= Complex64::new(tr, 0.0);
    }

    /// `⟨Ĵ⟩ / J`.
    pub fn bloch(&self) -> Vector3<f64> {
        let j = self.spin.j();
        let mean = |axis| {
            let op = collective_op(axis, self.spin);
            let n = self.spin.dim();
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..n {
                for c in r.saturating_sub(1)..(r + 2).min(n) {
                    acc += op.element(r, c) * self.rho[(c, r)];
                }
            }
            acc.re / j
        };
        Vector3::new(mean(Axis::X), mean(Axis::Y), mean(Axis::Z))
    }

    /// `½‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &DensityMatrix) -> Result<f64> {
        if self.spin != other.spin {
            return Err(Error::param("trace distance between different spins"));
        }
        let diff = &self.rho - &other.rho;
        let diff = (&diff + diff.adjoint()) * Complex64::new(0.5, 0.0);
        Ok(0.5 * SymmetricEigen::new(diff).eigenvalues.iter().map(|e| e.abs()).sum::<f64>())
    }

    /// `U ρ U†`.
    pub fn conjugate(&self, u: &DMatrix<Complex64>) -> DensityMatrix {
        DensityMatrix {
            spin: self.spin,
            rho: u * &self.rho * u.adjoint(),
        }
    }
}

/// Dense `exp(i p Ĵy) exp(i (k/2J) Ĵz²)`.
pub fn qkt_floquet_matrix(spin: Spin, k: f64, p: f64) -> Result<DMatrix<Complex64>> {
    let n = spin.dim();
    let j = spin.j();
    let mut u = DMatrix::zeros(n, n);
    for col in 0..n {
        let mut e = DickeState::dicke(spin, spin.m(col))?;
        let m = spin.m(col);
        e.amplitudes_mut()[col] = Complex64::from_polar(1.0, k * m * m / (2.0 * j));
        e.rotate_in_place(Axis::Y, p)?;
        u.set_column(col, &nalgebra::DVector::from_column_slice(e.amplitudes()));
    }
    Ok(u)
}

/// States on which the kicked-top Floquet operator can act.
pub trait FloquetEvolve: Sized {
    /// Applies `exp(i(k/2J)Ĵz²)` followed by `exp(ipĴy)`.
    fn qkt_floquet_apply(&self, k: f64, p: f64) -> Result<Self>;
}

impl FloquetEvolve for DickeState {
    fn qkt_floquet_apply(&self, k: f64, p: f64) -> Result<Self> {
        let mut out = self.clone();
        let j = self.spin().j();
        out.apply_diagonal_phase(|m| k * m * m / (2.0 * j));
        out.rotate_in_place(Axis::Y, p)?;
        Ok(out)
    }
}

impl FloquetEvolve for DensityMatrix {
    fn qkt_floquet_apply(&self, k: f64, p: f64) -> Result<Self> {
        Ok(self.conjugate(&qkt_floquet_matrix(self.spin, k, p)?))
    }
}

/// Exact `exp(Γ 𝓛_D)` with `𝓛_D[ρ] = −[Ĵz, [Ĵz, ρ]]`:
/// `ρ_{mm'} → exp(−Γ (m − m')²) ρ_{mm'}`.
pub fn dephase(rho: &DensityMatrix, gamma: f64) -> Result<DensityMatrix> {
    if !(gamma >= 0.0) {
        return Err(Error::param(format!("dephasing rate {gamma} must be non-negative")));
    }
    let spin = rho.spin;
    let mut out = rho.clone();
    for ((r, c), x) in out.rho.iter_mut().enumerate().map(|(idx, x)| {
        let n = spin.dim();
        ((idx % n, idx / n), x)
    }) {
        let d = spin.m(r) - spin.m(c);
        *x *= (-gamma * d * d).exp();
    }
    Ok(out)
}

/// Outcome-averaged protocol step: `U_QKT (e^{Γ𝓛_D}[ρ]) U_QKT†`.
pub fn averaged_step(rho: &DensityMatrix, params: &ProtocolParams) -> Result<DensityMatrix> {
    let gamma = gamma_rate(params.k, params.sigma, rho.spin.j())?;
    dephase(rho, gamma)?.qkt_floquet_apply(params.k, params.p)
}

/// Runs `steps` averaged steps, reusing one Floquet matrix.
pub fn averaged_evolution(rho: &DensityMatrix, params: &ProtocolParams, steps: usize) -> Result<Vec<DensityMatrix>> {
    let gamma = gamma_rate(params.k, params.sigma, rho.spin.j())?;
    let u = qkt_floquet_matrix(rho.spin, params.k, params.p)?;
    let mut out = Vec::with_capacity(steps);
    let mut cur = rho.clone();
    for _ in 0..steps {
        cur = dephase(&cur, gamma)?.conjugate(&u);
        out.push(cur.clone());
    }
    Ok(out)
}

/// Runs one conditioned trajectory for `steps` steps.
///
/// Step `s` draws from stream `(trajectory, Outcome, s)`.
pub fn run_trajectory(
    initial: &DickeState,
    params: &ProtocolParams,
    steps: usize,
    streams: &Streams,
    trajectory: u64,
) -> Result<(Vec<DickeState>, Vec<MeasurementOutcome>)> {
    let mut states = Vec::with_capacity(steps);
    let mut outcomes = Vec::with_capacity(steps);
    let mut cur = initial.clone();
    for s in 0..steps {
        let mut rng = streams.rng(trajectory, Lane::Outcome, s as u64);
        let (next, out) = trajectory_step(&cur, params, &mut rng)?;
        states.push(next.clone());
        outcomes.push(out);
        cur = next;
    }
    Ok((states, outcomes))
}

/// Monte Carlo estimate of the unconditioned state after `steps` steps.
///
/// Trajectory `t` uses streams keyed by `t`; the sum is taken in trajectory
/// order so the result does not depend on the thread count.
pub fn ensemble_average(
    initial: &DickeState,
    params: &ProtocolParams,
    steps: usize,
    n_trajectories: usize,
    streams: &Streams,
) -> Result<DensityMatrix> {
    if n_trajectories == 0 {
        return Err(Error::param("ensemble average needs at least one trajectory"));
    }
    let finals: Vec<DickeState> = (0..n_trajectories as u64)
        .into_par_iter()
        .map(|t| {
            let (states, _) = run_trajectory(initial, params, steps, streams, t)?;
            Ok(states.last().cloned().unwrap_or_else(|| initial.clone()))
        })
        .collect::<Result<_>>()?;
    let n = initial.spin().dim();
    let mut acc = DMatrix::<Complex64>::zeros(n, n);
    for psi in &finals {
        acc += psi.projector();
    }
    acc /= Complex64::new(n_trajectories as f64, 0.0);
    DensityMatrix::new(initial.spin(), acc)
}
