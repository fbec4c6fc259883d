//! Large-`J` Gaussian (Holstein–Primakoff) model of the protocol.
//!
//! The state is the mean Bloch vector `n = ⟨Ĵ⟩/J` and the covariance
//! `V_αβ = (⟨{Ĵα,Ĵβ}⟩ − 2⟨Ĵα⟩⟨Ĵβ⟩)/2J`, with `V` confined to the plane
//! tangent to `n`.
//!
//! A measurement step conditions the Gaussian on the outcome `m` (Kalman
//! update of the measured component), adds the back-action diffusion that a
//! Gaussian Kraus operator imprints on the conjugate tangent direction, and
//! moves `n` along the sphere. The feedback is then a rigid rotation of `n`
//! and a congruence of `V`.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classical::{from_angles, BlochPoint, Dynamics};
use crate::error::{Error, Result};
use crate::feedback::ProtocolParams;
use crate::spin::{bloch_rotation, Axis};
use rand_chacha::ChaCha8Rng;

/// Slack allowed on `|n| ≤ 1` before the mean is clamped back to the sphere.
pub const NORM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSpinState {
    pub n: Vector3<f64>,
    pub v: Matrix3<f64>,
    /// Effective spin; real so that ensembles beyond the state-vector range fit.
    pub j: f64,
}

/// Measured-noise bookkeeping of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseDraw {
    /// `(m − J·Z)/σ²`
    pub eta1: f64,
    /// `k·(m − J·Z)/J`, the error of the feedback twist angle.
    pub eta2: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    /// Projection noise `ΔJz² = J·V_zz` before the measurement.
    pub dz2: f64,
}

/// Variances of the two noise terms of the mean map:
/// `σ₁² = (σ² + ΔJz²)/σ⁴`, `σ₂² = k²(σ² + ΔJz²)/J²`.
pub fn noise_variances(k: f64, sigma: f64, j: f64, dz2: f64) -> Result<(f64, f64)> {
    if !(sigma > 0.0) || !(j > 0.0) || !(dz2 >= 0.0) {
        return Err(Error::param(format!(
            "noise_variances needs sigma > 0, J > 0, dJz2 >= 0 (got {sigma}, {j}, {dz2})"
        )));
    }
    let total = sigma * sigma + dz2;
    Ok((total / sigma.powi(4), k * k * total / (j * j)))
}

/// Rotation whose columns are `(e_{n1}, e_{n2}, n̂)`.
///
/// `e_{n1}` is `ẑ × n̂` normalized; at the poles, where that vanishes, it is
/// `x̂` with any component along `n̂` removed. `e_{n2} = n̂ × e_{n1}`.
pub fn comoving_frame(n: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let norm = n.norm();
    if !(norm > 1e-12) || !norm.is_finite() {
        return Err(Error::FrameDegeneracy { norm });
    }
    let nh = n / norm;
    let cross = Vector3::z().cross(&nh);
    let e1 = if cross.norm() > 1e-8 {
        cross.normalize()
    } else {
        (Vector3::x() - nh * nh.x).normalize()
    };
    let e2 = nh.cross(&e1);
    Ok(Matrix3::from_columns(&[e1, e2, nh]))
}

fn symmetrize(v: &Matrix3<f64>) -> Matrix3<f64> {
    (v + v.transpose()) * 0.5
}

/// Projector onto the plane tangent to `n`.
fn tangent_projector(n: &Vector3<f64>) -> Matrix3<f64> {
    let nh = n.normalize();
    Matrix3::identity() - nh * nh.transpose()
}

impl GaussianSpinState {
    /// Coherent state along `(θ, φ)`: `V` is ½ on the tangent plane, 0 along `n`.
    pub fn coherent(theta: f64, phi: f64, j: f64) -> Result<Self> {
        Self::coherent_at(from_angles(theta, phi), j)
    }

    pub fn coherent_at(n: BlochPoint, j: f64) -> Result<Self> {
        if !(j > 0.0) || !j.is_finite() {
            return Err(Error::param(format!("effective spin J = {j} must be positive")));
        }
        let norm = n.norm();
        if !(norm > 1e-12) {
            return Err(Error::FrameDegeneracy { norm });
        }
        let n = n / norm;
        Ok(Self {
            n,
            v: tangent_projector(&n) * 0.5,
            j,
        })
    }

    /// Projection noise `ΔJz² = J·V_zz`.
    pub fn dz2(&self) -> f64 {
        self.j * self.v[(2, 2)]
    }

    /// `V` in the co-moving basis `(e_{n1}, e_{n2}, n̂)`.
    pub fn local_covariance(&self) -> Result<Matrix3<f64>> {
        let a = comoving_frame(&self.n)?;
        Ok(a.transpose() * self.v * a)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        symmetrize(&self.v).symmetric_eigenvalues().min()
    }

    pub fn validate(&self) -> Result<()> {
        let asym = (self.v - self.v.transpose()).abs().max();
        if asym > 1e-12 {
            return Err(Error::NumericalDegeneracy(format!("covariance asymmetry {asym:e}")));
        }
        let ev = self.min_eigenvalue();
        if ev < -1e-10 {
            return Err(Error::NumericalDegeneracy(format!("covariance eigenvalue {ev:e}")));
        }
        let r = self.n.norm();
        if r > 1.0 + NORM_SLACK {
            return Err(Error::NumericalDegeneracy(format!("|n| = {r} exceeds 1")));
        }
        Ok(())
    }

    /// Rigid rotation of mean and covariance.
    pub fn rotated(&self, r: &Matrix3<f64>) -> Self {
        Self {
            n: r * self.n,
            v: symmetrize(&(r * self.v * r.transpose())),
            j: self.j,
        }
    }

    /// Moves the mean to `n`, carrying `V` onto the new tangent plane.
    pub fn moved_to(&self, n: Vector3<f64>) -> Self {
        let v = match Rotation3::rotation_between(&self.n, &n) {
            Some(rot) => rot.matrix() * self.v * rot.matrix().transpose(),
            None => self.v,
        };
        let p = tangent_projector(&n);
        Self {
            n,
            v: symmetrize(&(p * v * p)),
            j: self.j,
        }
    }

    fn clamp_norm(mut self) -> Self {
        let r = self.n.norm();
        if r > 1.0 + NORM_SLACK {
            self.n /= r;
        }
        self
    }
}

/// Conditions on outcome `m` of a `Ĵz` measurement with resolution `sigma`.
///
/// Returns the updated state and the innovation `m − J·n_z`.
pub fn condition_on_outcome(g: &GaussianSpinState, m: f64, sigma: f64) -> Result<(GaussianSpinState, f64)> {
    if !m.is_finite() {
        return Err(Error::param(format!("outcome m = {m} is not finite")));
    }
    if !(sigma > 0.0) {
        return Err(Error::param(format!("sigma = {sigma} must be positive")));
    }
    let j = g.j;
    let norm = g.n.norm();
    if !(norm > 1e-12) {
        return Err(Error::FrameDegeneracy { norm });
    }
    let nh = g.n / norm;
    let ez = Vector3::z();
    let innovation = m - j * g.n.z;
    let s = j * g.v[(2, 2)] + sigma * sigma;
    let gain = g.v * ez; // Cov(Ĵ, Ĵz) / J

    // Kalman conditioning of the mean and covariance.
    let shift = gain * (innovation / s);
    let mut v = g.v - gain * gain.transpose() * (j / s);

    // Back-action: the Kraus operator diffuses the tangent direction conjugate
    // to the measured one by 1/(4σ²) in quadrature units.
    let measured = ez - nh * nh.z;
    let conjugate = nh.cross(&measured);
    v += conjugate * conjugate.transpose() * (j / (4.0 * sigma * sigma));

    // The tangent shift is applied as a rotation so that |n| is unchanged.
    let shift_t = shift - nh * nh.dot(&shift);
    let angle = shift_t.norm() / norm;
    let out = if angle > 0.0 {
        let axis = Unit::new_normalize(nh.cross(&shift_t));
        let rot = Rotation3::from_axis_angle(&axis, angle);
        GaussianSpinState {
            n: rot * g.n,
            v: rot.matrix() * v * rot.matrix().transpose(),
            j,
        }
    } else {
        GaussianSpinState { n: g.n, v, j }
    };
    let p = tangent_projector(&out.n);
    Ok((
        GaussianSpinState {
            v: symmetrize(&(p * out.v * p)),
            ..out
        },
        innovation,
    ))
}

/// Samples `m ~ 𝒩(J·n_z, σ² + J·V_zz)` and conditions on it.
pub fn hp_measure_update<R: Rng + ?Sized>(
    g: &GaussianSpinState,
    sigma: f64,
    rng: &mut R,
) -> Result<(GaussianSpinState, f64)> {
    let m = sample_hp_outcome(g, sigma, rng);
    let (next, _) = condition_on_outcome(g, m, sigma)?;
    Ok((next, m))
}

pub fn sample_hp_outcome<R: Rng + ?Sized>(g: &GaussianSpinState, sigma: f64, rng: &mut R) -> f64 {
    let xi: f64 = rng.sample(StandardNormal);
    g.j * g.n.z + (sigma * sigma + g.dz2()).max(0.0).sqrt() * xi
}

/// Rotation of `⟨Ĵ⟩` produced by the feedback unitary for outcome `m`.
pub fn feedback_rotation(m: f64, j: f64, params: &ProtocolParams) -> Result<Matrix3<f64>> {
    Ok(bloch_rotation(Axis::Y, params.p)? * bloch_rotation(Axis::Z, params.k * m / j)?)
}

/// Full protocol step for a prescribed outcome `m`.
pub fn hp_step_with_outcome(
    g: &GaussianSpinState,
    params: &ProtocolParams,
    m: f64,
) -> Result<(GaussianSpinState, NoiseDraw)> {
    let dz2 = g.dz2();
    let (sigma1_sq, sigma2_sq) = noise_variances(params.k, params.sigma, g.j, dz2)?;
    let (conditioned, innovation) = condition_on_outcome(g, m, params.sigma)?;
    let r = feedback_rotation(m, g.j, params)?;
    let next = conditioned.rotated(&r).clamp_norm();
    Ok((
        next,
        NoiseDraw {
            eta1: innovation / (params.sigma * params.sigma),
            eta2: params.k * innovation / g.j,
            sigma1_sq,
            sigma2_sq,
            dz2,
        },
    ))
}

/// One stochastic protocol step; returns the new state, the outcome and the noise terms.
pub fn hp_step<R: Rng + ?Sized>(
    g: &GaussianSpinState,
    params: &ProtocolParams,
    rng: &mut R,
) -> Result<(GaussianSpinState, f64, NoiseDraw)> {
    let m = sample_hp_outcome(g, params.sigma, rng);
    let (next, noise) = hp_step_with_outcome(g, params, m)?;
    Ok((next, m, noise))
}

/// First-order mean map for `p = π/2` in terms of `η₁, η₂` and the
/// post-measurement local covariance entries `V₁₂, V₂₂`.
///
/// `X' = −Z − η₁V₂₂(1−Z²)`,
/// `Y' = (1−η₁V₂₂Z)[Y cos θ − X sin θ] + η₁V₁₂[X cos θ + Y sin θ]`,
/// `Z' = (1−η₁V₂₂Z)[X cos θ + Y sin θ] − η₁V₁₂[Y cos θ − X sin θ]`,
/// with `θ = kZ + η₂`.
pub fn linearized_mean_map(n: &Vector3<f64>, v12: f64, v22: f64, eta1: f64, eta2: f64, k: f64) -> Vector3<f64> {
    let (x, y, z) = (n.x, n.y, n.z);
    let (s, c) = (k * z + eta2).sin_cos();
    let scale = 1.0 - eta1 * v22 * z;
    let a = y * c - x * s;
    let b = x * c + y * s;
    Vector3::new(
        -z - eta1 * v22 * (1.0 - z * z),
        scale * a + eta1 * v12 * b,
        scale * b - eta1 * v12 * a,
    )
}

/// Gaussian model as a [`Dynamics`] for Lyapunov estimates, with optional
/// per-step decoherence `γ_s·T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HpTop {
    pub params: ProtocolParams,
    pub decoherence: f64,
}

impl HpTop {
    pub fn new(params: ProtocolParams) -> Self {
        Self {
            params,
            decoherence: 0.0,
        }
    }
}

impl Dynamics for HpTop {
    type State = GaussianSpinState;

    fn init(&self, n: BlochPoint) -> Result<GaussianSpinState> {
        GaussianSpinState::coherent_at(n, self.params.j())
    }

    fn bloch(&self, state: &GaussianSpinState) -> BlochPoint {
        state.n
    }

    fn displaced(&self, state: &GaussianSpinState, n: BlochPoint) -> GaussianSpinState {
        state.moved_to(n)
    }

    fn advance(&self, state: &GaussianSpinState, rng: &mut ChaCha8Rng) -> Result<GaussianSpinState> {
        let g = if self.decoherence > 0.0 {
            crate::atomlight::gaussian_decohere(state, self.decoherence, 1.0)?
        } else {
            *state
        };
        Ok(hp_step(&g, &self.params, rng)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::ckt_step;
    use rand::SeedableRng;
    use std::f64::consts::FRAC_PI_2;

    fn params(k: f64, n: u64, ratio: f64) -> ProtocolParams {
        ProtocolParams::new(k, 1.0, n, 0).unwrap().with_sigma_over_sqrt_j(ratio)
    }

    #[test]
    fn frame_anchor_and_orthonormality() {
        let a = comoving_frame(&Vector3::z()).unwrap();
        assert!((a - Matrix3::identity()).abs().max() < 1e-15);
        for n in [Vector3::new(0.3, -0.2, 0.9), Vector3::new(0.0, 0.0, -2.0), Vector3::new(1e-9, 0.0, 1.0), Vector3::new(-1.0, 0.2, 0.0)] {
            let a = comoving_frame(&n).unwrap();
            assert!((a.transpose() * a - Matrix3::identity()).abs().max() < 1e-12);
            assert!((a.determinant() - 1.0).abs() < 1e-12);
            assert!((a.column(2) - n.normalize()).norm() < 1e-12);
        }
        assert!(matches!(comoving_frame(&Vector3::zeros()), Err(Error::FrameDegeneracy { .. })));
    }

    #[test]
    fn coherent_initialization() {
        let g = GaussianSpinState::coherent(1.2, 0.4, 1e6).unwrap();
        let l = g.local_covariance().unwrap();
        assert!((l[(0, 0)] - 0.5).abs() < 1e-12 && (l[(1, 1)] - 0.5).abs() < 1e-12);
        assert!(l[(2, 2)].abs() < 1e-12 && l[(0, 1)].abs() < 1e-12);
        g.validate().unwrap();
    }

    #[test]
    fn zero_gain_limit() {
        let g = GaussianSpinState::coherent(1.0, 0.3, 500.0).unwrap();
        let sigma = 1e9 * 500f64.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (out, _) = hp_measure_update(&g, sigma, &mut rng).unwrap();
        assert!((out.n - g.n).norm() < 1e-9);
        assert!((out.v - g.v).abs().max() < 1e-9);
    }

    #[test]
    fn conditioned_variance() {
        let j = 1e6;
        let g = GaussianSpinState::coherent(FRAC_PI_2, 0.0, j).unwrap();
        // m = J n_z leaves the mean alone
        let (out, _) = condition_on_outcome(&g, 0.0, j.sqrt()).unwrap();
        assert!((out.v[(2, 2)] - 1.0 / 3.0).abs() < 1e-12);
        assert!((out.v[(2, 2)] - 0.5 / (1.0 + j * 0.5 / j)).abs() < 1e-12);
    }

    #[test]
    fn repeated_measurement_shrinks_vzz() {
        let j = 1e4;
        let mut g = GaussianSpinState::coherent(1.3, 0.0, j).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut last = g.v[(2, 2)];
        for _ in 0..20 {
            g = hp_measure_update(&g, j.sqrt(), &mut rng).unwrap().0;
            let now = g.v[(2, 2)];
            assert!(now < last && now >= 0.0, "{now} vs {last}");
            last = now;
        }
    }

    #[test]
    fn noiseless_outcome_reduces_to_classical_map() {
        let p = params(2.3, 10_000, 0.9);
        let mut g = GaussianSpinState::coherent(0.9, 2.0, p.j()).unwrap();
        let mut c = g.n;
        for _ in 0..1000 {
            let m = g.j * g.n.z;
            g = hp_step_with_outcome(&g, &p, m).unwrap().0;
            c = ckt_step(c, p.k, p.p);
            assert!((g.n - c).norm() < 1e-12);
        }
    }

    #[test]
    fn noiseless_period_four_orbit() {
        let p = params(3.7, 1000, 1.0);
        let mut g = GaussianSpinState::coherent_at(Vector3::x(), p.j()).unwrap();
        let orbit = [Vector3::z(), -Vector3::x(), -Vector3::z(), Vector3::x()];
        for want in orbit {
            g = hp_step_with_outcome(&g, &p, g.j * g.n.z).unwrap().0;
            assert!((g.n - want).norm() < 1e-12);
        }
    }

    #[test]
    fn noise_variance_examples() {
        let j: f64 = 1e4;
        let (s1, s2) = noise_variances(2.0, j.sqrt(), j, j / 2.0).unwrap();
        assert!((s1 - 1.5 / j).abs() < 1e-15);
        assert!((s2 - 1.5 * 4.0 / j).abs() < 1e-15);
        let (a1, a2) = noise_variances(1.0, 1e3, 1e6, 5e5).unwrap();
        let (b1, b2) = noise_variances(1.0, 1e4, 1e8, 5e7).unwrap();
        assert!(b1 < a1 / 50.0 && b2 < a2 / 50.0);
        let (_, c2) = noise_variances(3.0, 5.0, 40.0, 7.0).unwrap();
        assert!((c2 / 9.0 - noise_variances(1.0, 5.0, 40.0, 7.0).unwrap().1).abs() < 1e-15);
        assert!(noise_variances(1.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn linearized_map_agrees_to_first_order() {
        let p = params(1.5, 100_000, 0.9);
        let mut g = GaussianSpinState::coherent(1.1, 0.7, p.j()).unwrap();
        // give V some structure first
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..3 {
            g = hp_step(&g, &p, &mut rng).unwrap().0;
        }
        let errs: Vec<f64> = [1.0, 0.5, 0.25]
            .iter()
            .map(|scale| {
                let m = g.j * g.n.z + scale * 3.0 * p.sigma;
                let (next, noise) = hp_step_with_outcome(&g, &p, m).unwrap();
                let (post, _) = condition_on_outcome(&g, m, p.sigma).unwrap();
                // post-measurement covariance in the pre-measurement frame
                let a = comoving_frame(&g.n).unwrap();
                let kalman_only = {
                    let gain = g.v * Vector3::z();
                    let s = g.j * g.v[(2, 2)] + p.sigma * p.sigma;
                    g.v - gain * gain.transpose() * (g.j / s)
                };
                let l = a.transpose() * kalman_only * a;
                let lin = linearized_mean_map(&g.n, l[(0, 1)], l[(1, 1)], noise.eta1, noise.eta2, p.k);
                let _ = post;
                (next.n - lin).norm()
            })
            .collect();
        // second-order residual: halving the innovation quarters the error
        assert!(errs[1] < errs[0] / 3.0 && errs[2] < errs[1] / 3.0, "{errs:?}");
    }

    #[test]
    fn stress_norm_and_psd() {
        let p = params(2.5, 10_000, 0.9);
        let mut g = GaussianSpinState::coherent(0.4, 0.1, p.j()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            g = hp_step(&g, &p, &mut rng).unwrap().0;
            assert!(g.n.norm() <= 1.0 + NORM_SLACK);
            assert!(g.min_eigenvalue() > -1e-10);
        }
    }
}
