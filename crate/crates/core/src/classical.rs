//! Classical kicked top on the unit sphere and Benettin-style estimates of
//! the largest Lyapunov exponent for any Bloch-vector dynamics.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::comoving_frame;
use crate::rng::{Lane, Streams};

/// Bloch vector `n = ⟨Ĵ⟩/J`, on or inside the unit sphere.
pub type BlochPoint = Vector3<f64>;

pub fn from_angles(theta: f64, phi: f64) -> BlochPoint {
    Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// `(θ, φ)` with `θ ∈ [0, π]` and `φ ∈ (−π, π]`.
pub fn to_angles(n: &BlochPoint) -> (f64, f64) {
    let r = n.norm();
    let theta = if r > 0.0 { (n.z / r).clamp(-1.0, 1.0).acos() } else { 0.0 };
    (theta, n.y.atan2(n.x))
}

/// One kick: twist about `z` by `k·Z`, then rotate about `y` by `p`.
///
/// For `p = π/2` this is `X' = −Z`, `Y' = Y cos kZ − X sin kZ`,
/// `Z' = X cos kZ + Y sin kZ`.
pub fn ckt_step(n: BlochPoint, k: f64, p: f64) -> BlochPoint {
    let (s, c) = (k * n.z).sin_cos();
    let x1 = n.x * c + n.y * s;
    let y1 = n.y * c - n.x * s;
    let z1 = n.z;
    let (sp, cp) = p.sin_cos();
    Vector3::new(x1 * cp - z1 * sp, y1, z1 * cp + x1 * sp)
}

/// Near-uniform deterministic lattice of `count` unit vectors.
pub fn fibonacci_sphere(count: usize) -> Vec<BlochPoint> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Bloch-vector dynamics that can be probed with shadow trajectories.
///
/// `advance` receives a generator for the current step. Fiducial and shadows
/// get clones of the same generator, so stochastic dynamics see common noise.
pub trait Dynamics: Sync {
    type State: Clone + Send;

    fn init(&self, n: BlochPoint) -> Result<Self::State>;
    fn bloch(&self, state: &Self::State) -> BlochPoint;
    /// Copy of `state` with its Bloch vector moved to `n`.
    fn displaced(&self, state: &Self::State, n: BlochPoint) -> Self::State;
    fn advance(&self, state: &Self::State, rng: &mut ChaCha8Rng) -> Result<Self::State>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalTop {
    pub k: f64,
    pub p: f64,
}

impl Dynamics for ClassicalTop {
    type State = BlochPoint;

    fn init(&self, n: BlochPoint) -> Result<BlochPoint> {
        Ok(n)
    }

    fn bloch(&self, state: &BlochPoint) -> BlochPoint {
        *state
    }

    fn displaced(&self, _state: &BlochPoint, n: BlochPoint) -> BlochPoint {
        n
    }

    fn advance(&self, state: &BlochPoint, _rng: &mut ChaCha8Rng) -> Result<BlochPoint> {
        Ok(ckt_step(*state, self.k, self.p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovOptions {
    /// Geodesic size of the shadow offsets.
    pub d0: f64,
    pub n_shadows: usize,
    pub renorm_interval: usize,
    pub n_steps: usize,
}

impl LyapunovOptions {
    pub fn classical() -> Self {
        Self {
            d0: 1e-6,
            n_shadows: 4,
            renorm_interval: 1,
            n_steps: 500,
        }
    }

    /// Shorter runs for noisy generators, whose estimates hit a noise floor.
    pub fn stochastic() -> Self {
        Self {
            n_steps: 100,
            ..Self::classical()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d0 > 0.0 && self.d0 < 0.1) {
            return Err(Error::param(format!("d0 = {} must lie in (0, 0.1)", self.d0)));
        }
        if self.n_shadows == 0 || self.renorm_interval == 0 || self.n_steps == 0 {
            return Err(Error::param("n_shadows, renorm_interval and n_steps must be positive"));
        }
        Ok(())
    }
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        Self::classical()
    }
}

/// Point at geodesic distance `d0` from `n` along the unit tangent `dir`.
fn offset_along(n: &BlochPoint, dir: &BlochPoint, d0: f64) -> BlochPoint {
    let r = n.norm();
    n * d0.cos() + dir * (r * d0.sin())
}

/// Unit tangent at `n` in the direction of `delta`.
fn tangent_direction(n: &BlochPoint, delta: &BlochPoint) -> Option<BlochPoint> {
    let nh = n.normalize();
    let t = delta - nh * nh.dot(delta);
    let norm = t.norm();
    if norm > 0.0 && norm.is_finite() {
        Some(t / norm)
    } else {
        None
    }
}

/// Largest-exponent estimate for a single initial condition.
///
/// Each shadow starts at geodesic distance `d0` along a random tangent
/// direction. Every `renorm_interval` steps the chord distance `d` to the
/// fiducial is logged as `ln(d/d0)` and the shadow is pulled back to distance
/// `d0` along its current separation. The result is the mean over shadows of
/// the summed logs divided by the number of steps.
pub fn local_lyapunov<D: Dynamics>(
    dynamics: &D,
    ic: BlochPoint,
    opts: &LyapunovOptions,
    streams: &Streams,
    ic_index: u64,
) -> Result<f64> {
    opts.validate()?;
    if !(ic.norm() > 1e-12) {
        return Err(Error::param("initial condition must have |n| > 0"));
    }
    let mut fid = dynamics.init(ic)?;
    let frame = comoving_frame(&ic)?;
    let (e1, e2) = (frame.column(0).into_owned(), frame.column(1).into_owned());
    let mut shadows: Vec<D::State> = (0..opts.n_shadows)
        .map(|j| {
            let mut rng = streams.rng(ic_index, Lane::Shadow, j as u64);
            let a: f64 = rng.random::<f64>() * 2.0 * PI;
            let dir = e1 * a.cos() + e2 * a.sin();
            dynamics.displaced(&fid, offset_along(&ic, &dir, opts.d0))
        })
        .collect();
    let mut logs = vec![0.0f64; opts.n_shadows];

    for t in 0..opts.n_steps {
        let step_rng = streams.rng(ic_index, Lane::Outcome, t as u64);
        let next_fid = dynamics.advance(&fid, &mut step_rng.clone())?;
        for s in shadows.iter_mut() {
            *s = dynamics.advance(s, &mut step_rng.clone())?;
        }
        fid = next_fid;
        let due = (t + 1) % opts.renorm_interval == 0 || t + 1 == opts.n_steps;
        if !due {
            continue;
        }
        let nf = dynamics.bloch(&fid);
        for (j, s) in shadows.iter_mut().enumerate() {
            let delta = dynamics.bloch(s) - nf;
            let d = delta.norm();
            let dir = match tangent_direction(&nf, &delta) {
                Some(dir) if d > 0.0 && d.is_finite() => dir,
                _ => {
                    return Err(Error::NumericalDegeneracy(format!(
                        "shadow {j} of initial condition {ic_index} collapsed at step {t} \
                         (distance {d:e}, |n| = {:.6})",
                        nf.norm()
                    )))
                }
            };
            logs[j] += (d / opts.d0).ln();
            *s = dynamics.displaced(&fid, offset_along(&nf, &dir, opts.d0));
        }
    }
    Ok(logs.iter().sum::<f64>() / (opts.n_shadows as f64 * opts.n_steps as f64))
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalExponent {
    pub ic: [f64; 3],
    /// `None` when the estimate for this initial condition failed.
    pub lambda: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// Mean of the successful local exponents (per step).
    pub lambda_largest: f64,
    pub variance: f64,
    pub std_error: f64,
    pub local: Vec<LocalExponent>,
    pub n_failed: usize,
    pub settings: LyapunovOptions,
}

/// Local exponents over a grid of initial conditions, aggregated in grid order.
pub fn estimate_lyapunov<D: Dynamics>(
    dynamics: &D,
    ic_grid: &[BlochPoint],
    opts: &LyapunovOptions,
    streams: &Streams,
) -> Result<LyapunovEstimate> {
    if ic_grid.is_empty() {
        return Err(Error::param("initial-condition grid is empty"));
    }
    opts.validate()?;
    let local: Vec<LocalExponent> = ic_grid
        .par_iter()
        .enumerate()
        .map(|(i, ic)| match local_lyapunov(dynamics, *ic, opts, streams, i as u64) {
            Ok(l) => LocalExponent {
                ic: [ic.x, ic.y, ic.z],
                lambda: Some(l),
                error: None,
            },
            Err(e) => LocalExponent {
                ic: [ic.x, ic.y, ic.z],
                lambda: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let ok: Vec<f64> = local.iter().filter_map(|l| l.lambda).collect();
    let n_failed = local.len() - ok.len();
    if ok.is_empty() {
        return Err(Error::NumericalDegeneracy(format!(
            "all {} local Lyapunov estimates failed",
            local.len()
        )));
    }
    let count = ok.len() as f64;
    let mean = compensated_sum(ok.iter().copied()) / count;
    let variance = if ok.len() > 1 {
        compensated_sum(ok.iter().map(|x| (x - mean).powi(2))) / (count - 1.0)
    } else {
        0.0
    };
    Ok(LyapunovEstimate {
        lambda_largest: mean,
        variance,
        std_error: (variance / count).sqrt(),
        local,
        n_failed,
        settings: *opts,
    })
}
