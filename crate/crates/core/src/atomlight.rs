//! Atom-light interface: the continuous `Ĵz` record, the stochastic master
//! equation for small ensembles, Gaussian-level decoherence, and the
//! optical-depth parameterization of the measurement.
//!
//! Optical pumping is modelled, not derived. On density matrices it is the
//! collective channel `𝒟[ρ] = Σ_α Ĵα ρ Ĵα − J(J+1) ρ`, which contracts `⟨Ĵ⟩`
//! at rate `γ_s` and stays inside the symmetric subspace. On Gaussian states
//! the mean contracts by `exp(−γ_s t)` and the tangent covariance relaxes
//! toward the coherent value ½ at the same rate.

use nalgebra::{DMatrix, Matrix3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{DensityMatrix, ProtocolParams};
use crate::gaussian::GaussianSpinState;
use crate::spin::{collective_op, Axis, Spin};
use crate::Complex64;

/// Eigenvalue floor accepted after an SME step.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Default resonant-cross-section to beam-area ratio; `N = 10⁶` gives `OD = 300`.
pub const DEFAULT_SIGMA0_OVER_A: f64 = 3e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomLightParams {
    /// Number of atoms.
    pub n: u64,
    pub sigma0_over_a: f64,
    /// Photon scattering rate into 4π.
    pub gamma_s: f64,
    /// Measurement window.
    pub t: f64,
    /// Integrator step.
    pub dt: f64,
}

impl AtomLightParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("atom number must be positive"));
        }
        for (name, v) in [
            ("sigma0_over_A", self.sigma0_over_a),
            ("gamma_s", self.gamma_s),
            ("T", self.t),
            ("dt", self.dt),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} = {v} must be positive")));
            }
        }
        if self.dt > self.t / 20.0 * (1.0 + 1e-12) {
            return Err(Error::param(format!(
                "dt = {} exceeds T/20 = {}",
                self.dt,
                self.t / 20.0
            )));
        }
        Ok(())
    }

    /// Forward-scattering (measurement) rate `κ = (σ₀/A)·γ_s`.
    pub fn kappa(&self) -> f64 {
        self.sigma0_over_a * self.gamma_s
    }

    /// `OD = N·σ₀/A`.
    pub fn od(&self) -> f64 {
        self.n as f64 * self.sigma0_over_a
    }

    /// Resolution variance `σ² = 1/(κT)`.
    pub fn sigma_sq(&self) -> f64 {
        1.0 / (self.kappa() * self.t)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_sq().sqrt()
    }

    /// Decoherence accumulated over one window.
    pub fn gamma_s_t(&self) -> f64 {
        self.gamma_s * self.t
    }

    pub fn j(&self) -> f64 {
        self.n as f64 / 2.0
    }

    pub fn window_steps(&self) -> usize {
        (self.t / self.dt).round().max(1.0) as usize
    }

    pub fn rates(&self) -> SmeRates {
        SmeRates {
            kappa: self.kappa(),
            gamma_s: self.gamma_s,
        }
    }
}

/// Rates seen by the integrator.
///
/// Normally both follow from [`AtomLightParams`]; keeping them separate lets
/// the pumping term be switched off while the measurement strength is held.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmeRates {
    pub kappa: f64,
    /// Optical-pumping rate; zero disables the depolarizer.
    pub gamma_s: f64,
}

impl SmeRates {
    pub fn without_pumping(self) -> Self {
        Self { gamma_s: 0.0, ..self }
    }
}

/// Chooses the window so that `σ² = sigma_sq_over_j · J`.
///
/// With `σ² = 1/(κT)` and `κ = (σ₀/A)γ_s` this fixes
/// `γ_s·T = N / (OD·σ²) = 2 / (sigma_sq_over_j · OD)`.
/// `sigma_sq_over_j = ½` matches the coherent-state projection noise.
pub fn od_params(
    n: u64,
    sigma0_over_a: f64,
    sigma_sq_over_j: f64,
    gamma_s: f64,
    steps_per_window: usize,
) -> Result<AtomLightParams> {
    if n == 0 {
        return Err(Error::param("atom number must be positive"));
    }
    if !(sigma_sq_over_j > 0.0) || steps_per_window < 20 {
        return Err(Error::param(
            "need sigma_sq_over_j > 0 and at least 20 integrator steps per window",
        ));
    }
    let j = n as f64 / 2.0;
    let kappa = sigma0_over_a * gamma_s;
    let t = 1.0 / (kappa * sigma_sq_over_j * j);
    let params = AtomLightParams {
        n,
        sigma0_over_a,
        gamma_s,
        t,
        dt: t / steps_per_window as f64,
    };
    params.validate()?;
    Ok(params)
}

/// Time-averaged record `m = (1/T)∫M(t)dt` with
/// `M dt = ⟨Ĵz⟩(t) dt + dW/√κ`, accumulated by Euler–Maruyama.
///
/// `mean_jz` supplies `Tr(ρ(t)Ĵz)` at the start of each integrator step.
pub fn continuous_record<R: Rng + ?Sized>(
    mut mean_jz: impl FnMut(f64) -> f64,
    params: &AtomLightParams,
    rng: &mut R,
) -> Result<f64> {
    params.validate()?;
    let steps = params.window_steps();
    let dt = params.t / steps as f64;
    let inv_sqrt_kappa = 1.0 / params.kappa().sqrt();
    let mut total = 0.0;
    for s in 0..steps {
        let dw: f64 = rng.sample::<f64, _>(StandardNormal) * dt.sqrt();
        total += mean_jz(s as f64 * dt) * dt + dw * inv_sqrt_kappa;
    }
    Ok(total / params.t)
}

/// Dense `Σ_α Ĵα ρ Ĵα − J(J+1) ρ`.
pub fn collective_depolarizer(rho: &DMatrix<Complex64>, spin: Spin) -> DMatrix<Complex64> {
    let j = spin.j();
    let mut out = rho * Complex64::new(-j * (j + 1.0), 0.0);
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        let op = collective_op(axis, spin).to_dense();
        out += &op * rho * &op;
    }
    out
}

/// Deterministic part of one SME step given the Wiener increment `dw`.
///
/// The measurement terms `(√κ/2)𝓗[ρ]dW + (κ/8)𝓛_D[ρ]dt` are applied in
/// Kraus form, `ρ → MρM†` with the diagonal
/// `M = 1 − (κ/8)Ĵz²dt + (√κ/2)Ĵz dy` and `dy = √κ⟨Ĵz⟩dt + dW`, which agrees
/// with the Euler–Maruyama increment to first order and keeps ρ positive.
/// Optical pumping is an explicit Euler step on the measured state, followed
/// by renormalization.
pub fn sme_increment(rho: &DensityMatrix, rates: SmeRates, dt: f64, dw: f64) -> Result<DensityMatrix> {
    let spin = rho.spin();
    let kappa = rates.kappa;
    let sk = kappa.sqrt();
    let mean_jz = rho.bloch().z * spin.j();
    let dy = sk * mean_jz * dt + dw;
    let diag: Vec<f64> = spin
        .ms()
        .map(|m| 1.0 - kappa / 8.0 * m * m * dt + 0.5 * sk * m * dy)
        .collect();
    let n = spin.dim();
    let src = rho.matrix();
    let mut next = DMatrix::from_fn(n, n, |r, c| src[(r, c)] * (diag[r] * diag[c]));
    if rates.gamma_s > 0.0 {
        // Euler step of the depolarizer, applied after the measurement so the
        // composition stays completely positive while γ_s·dt·J(J+1) ≤ 1
        let pump = collective_depolarizer(&next, spin);
        next += pump * Complex64::new(rates.gamma_s * dt, 0.0);
    }
    let mut out = DensityMatrix::new(spin, next)?;
    out.renormalize();
    let min_ev = out.min_eigenvalue();
    if min_ev < -PSD_TOLERANCE {
        return Err(Error::IntegratorStep {
            min_eigenvalue: min_ev,
            dt,
        });
    }
    Ok(out)
}

/// One SME step with a freshly drawn Wiener increment.
pub fn sme_step<R: Rng + ?Sized>(rho: &DensityMatrix, rates: SmeRates, dt: f64, rng: &mut R) -> Result<DensityMatrix> {
    let dw: f64 = rng.sample::<f64, _>(StandardNormal) * dt.sqrt();
    sme_increment(rho, rates, dt, dw)
}

/// Evolves ρ through one measurement window, returning the final state and
/// the time-averaged record built from the same Wiener increments.
pub fn sme_window<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    params: &AtomLightParams,
    rng: &mut R,
) -> Result<(DensityMatrix, f64)> {
    sme_window_with(rho, params, params.rates(), rng)
}

/// [`sme_window`] with explicit integrator rates; the window length and step
/// still come from `params`.
pub fn sme_window_with<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    params: &AtomLightParams,
    rates: SmeRates,
    rng: &mut R,
) -> Result<(DensityMatrix, f64)> {
    params.validate()?;
    if !(rates.kappa > 0.0) || !(rates.gamma_s >= 0.0) {
        return Err(Error::param("SME needs kappa > 0 and gamma_s >= 0"));
    }
    let steps = params.window_steps();
    let dt = params.t / steps as f64;
    let j = rho.spin().j();
    // the Euler depolarizing step stays positive only while this is at most 1
    if rates.gamma_s * dt * j * (j + 1.0) > 1.0 {
        return Err(Error::param(format!(
            "pumping step gamma_s*dt*J(J+1) = {:.3e} exceeds 1; raise sigma0_over_A (optical depth) or lower dt_factor",
            rates.gamma_s * dt * j * (j + 1.0)
        )));
    }
    let inv_sqrt_kappa = 1.0 / rates.kappa.sqrt();
    let mut cur = rho.clone();
    let mut total = 0.0;
    for _ in 0..steps {
        let dw: f64 = rng.sample::<f64, _>(StandardNormal) * dt.sqrt();
        total += cur.bloch().z * cur.spin().j() * dt + dw * inv_sqrt_kappa;
        cur = sme_increment(&cur, rates, dt, dw)?;
    }
    Ok((cur, total / params.t))
}

/// Measurement window followed by the feedback rotation for the recorded `m`.
pub fn sme_protocol_step<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    protocol: &ProtocolParams,
    params: &AtomLightParams,
    rng: &mut R,
) -> Result<(DensityMatrix, f64)> {
    let (measured, m) = sme_window(rho, params, rng)?;
    let spin = rho.spin();
    let n = spin.dim();
    let mut u = DMatrix::zeros(n, n);
    for col in 0..n {
        let mut e = crate::spin::DickeState::dicke(spin, spin.m(col))?;
        crate::feedback::feedback_unitary(&mut e, m, protocol)?;
        u.set_column(col, &nalgebra::DVector::from_column_slice(e.amplitudes()));
    }
    Ok((measured.conjugate(&u), m))
}

/// Mean contraction `n → n·e^{−γ_s t}` and tangent relaxation
/// `V → V e^{−γ_s t} + ½(1 − e^{−γ_s t})·P_⊥`.
pub fn gaussian_decohere(g: &GaussianSpinState, gamma_s: f64, dt: f64) -> Result<GaussianSpinState> {
    if !(gamma_s >= 0.0) || !(dt >= 0.0) {
        return Err(Error::param("decoherence rate and time must be non-negative"));
    }
    if gamma_s == 0.0 || dt == 0.0 {
        return Ok(*g);
    }
    let decay = (-gamma_s * dt).exp();
    let norm = g.n.norm();
    if !(norm > 0.0) {
        return Err(Error::FrameDegeneracy { norm });
    }
    let nh = g.n / norm;
    let tangent = Matrix3::identity() - nh * nh.transpose();
    Ok(GaussianSpinState {
        n: g.n * decay,
        v: g.v * decay + tangent * (0.5 * (1.0 - decay)),
        j: g.j,
    })
}
