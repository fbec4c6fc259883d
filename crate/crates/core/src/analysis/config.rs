//! TOML run configuration.
//!
//! ```toml
//! [protocol]
//! k = 1.5
//! sigma_over_sqrtJ = 0.9
//! N = 1000
//! n_steps = 30
//!
//! [run]
//! engine = "hp"
//! grid = 100
//! ```
//!
//! Unknown keys are rejected. Every error names the offending key path.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::engine::Engine;
use crate::atomlight::{AtomLightParams, DEFAULT_SIGMA0_OVER_A};
use crate::classical::{fibonacci_sphere, from_angles, BlochPoint, LyapunovOptions};
use crate::error::{Error, Result};
use crate::feedback::{FeedbackPolicy, ProtocolParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub atomlight: AtomLightSection,
    #[serde(default)]
    pub lyapunov: LyapunovSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_p() -> f64 {
    FRAC_PI_2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub k: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(rename = "sigma_over_sqrtJ")]
    pub sigma_over_sqrt_j: f64,
    #[serde(rename = "N")]
    pub n: u64,
    pub n_steps: usize,
    #[serde(default)]
    pub policy: FeedbackPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AtomLightSection {
    #[serde(rename = "sigma0_over_A")]
    pub sigma0_over_a: f64,
    pub gamma_s: f64,
    /// Integrator step as a fraction of the window, at most 1/20.
    pub dt_factor: f64,
    /// Per-step decoherence `γ_s·T` for hp runs outside the OD sweep.
    pub decoherence: f64,
}

impl Default for AtomLightSection {
    fn default() -> Self {
        Self {
            sigma0_over_a: DEFAULT_SIGMA0_OVER_A,
            gamma_s: 1.0,
            dt_factor: 0.025,
            decoherence: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSection {
    pub d0: f64,
    pub n_shadows: usize,
    pub renorm_interval: usize,
    pub ic_grid_size: usize,
    /// Defaults to 500 for the classical map and 100 for the hp engine.
    pub n_steps: Option<usize>,
}

impl Default for LyapunovSection {
    fn default() -> Self {
        let o = LyapunovOptions::classical();
        Self {
            d0: o.d0,
            n_shadows: o.n_shadows,
            renorm_interval: o.renorm_interval,
            ic_grid_size: 100,
            n_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub engine: Engine,
    pub seed: u64,
    /// Realizations per initial condition.
    pub n_trajectories: usize,
    /// Explicit initial conditions as `[theta, phi]` pairs.
    pub ics: Option<Vec<[f64; 2]>>,
    /// Size of a Fibonacci grid of initial conditions.
    pub grid: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            engine: Engine::Hp,
            seed: 0,
            n_trajectories: 1,
            ics: None,
            grid: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    #[serde(rename = "sigma_over_sqrtJ")]
    pub sigma_over_sqrt_j: Vec<f64>,
    pub od: Vec<f64>,
    pub k: Vec<f64>,
    /// Inclusive `[start, stop, step]`, appended after `k`.
    pub k_range: Option<[f64; 3]>,
}

fn bad(path: &str, message: impl Into<String>) -> Error {
    Error::config(path, message)
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(path, format!("must be positive and finite (got {v})")))
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| bad("<document>", e.to_string().trim()))?;
        let config: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            bad(&path, e.into_inner().message().trim())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| bad("<file>", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.protocol;
        if !p.k.is_finite() {
            return Err(bad("protocol.k", "must be finite"));
        }
        if !p.p.is_finite() {
            return Err(bad("protocol.p", "must be finite"));
        }
        positive("protocol.sigma_over_sqrtJ", p.sigma_over_sqrt_j)?;
        if p.n == 0 {
            return Err(bad("protocol.N", "must be at least 1"));
        }
        let a = &self.atomlight;
        positive("atomlight.sigma0_over_A", a.sigma0_over_a)?;
        positive("atomlight.gamma_s", a.gamma_s)?;
        if !(a.dt_factor > 0.0 && a.dt_factor <= 0.05) {
            return Err(bad("atomlight.dt_factor", format!("must lie in (0, 1/20] (got {})", a.dt_factor)));
        }
        if !(a.decoherence >= 0.0 && a.decoherence.is_finite()) {
            return Err(bad("atomlight.decoherence", "must be non-negative"));
        }
        let l = &self.lyapunov;
        if !(l.d0 > 0.0 && l.d0 < 0.1) {
            return Err(bad("lyapunov.d0", format!("must lie in (0, 0.1) (got {})", l.d0)));
        }
        for (path, v) in [
            ("lyapunov.n_shadows", l.n_shadows),
            ("lyapunov.renorm_interval", l.renorm_interval),
            ("lyapunov.ic_grid_size", l.ic_grid_size),
            ("run.n_trajectories", self.run.n_trajectories),
        ] {
            if v == 0 {
                return Err(bad(path, "must be at least 1"));
            }
        }
        if l.n_steps == Some(0) {
            return Err(bad("lyapunov.n_steps", "must be at least 1"));
        }
        match (&self.run.ics, self.run.grid) {
            (Some(_), Some(_)) => return Err(bad("run.ics", "give either run.ics or run.grid, not both")),
            (Some(ics), None) if ics.is_empty() => return Err(bad("run.ics", "must not be empty")),
            (None, Some(0)) => return Err(bad("run.grid", "must be at least 1")),
            _ => {}
        }
        for (i, r) in self.sweep.sigma_over_sqrt_j.iter().enumerate() {
            positive(&format!("sweep.sigma_over_sqrtJ[{i}]"), *r)?;
        }
        for (i, od) in self.sweep.od.iter().enumerate() {
            positive(&format!("sweep.od[{i}]"), *od)?;
        }
        if let Some([start, stop, step]) = self.sweep.k_range {
            if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
                return Err(bad("sweep.k_range", "expected [start, stop, step] with step > 0 and stop >= start"));
            }
        }
        Ok(())
    }

    pub fn protocol_params(&self) -> Result<ProtocolParams> {
        let p = &self.protocol;
        let mut params = ProtocolParams::new(p.k, 1.0, p.n, p.n_steps)?.with_sigma_over_sqrt_j(p.sigma_over_sqrt_j);
        params.p = p.p;
        params.policy = p.policy;
        Ok(params)
    }

    /// `run.ics`, else a Fibonacci grid of `run.grid` points, else the point
    /// `θ = 1, φ = 0.5`.
    pub fn initial_conditions(&self) -> Vec<BlochPoint> {
        match (&self.run.ics, self.run.grid) {
            (Some(ics), _) => ics.iter().map(|[t, f]| from_angles(*t, *f)).collect(),
            (None, Some(n)) => fibonacci_sphere(n),
            (None, None) => vec![from_angles(1.0, 0.5)],
        }
    }

    pub fn lyapunov_grid(&self) -> Vec<BlochPoint> {
        fibonacci_sphere(self.lyapunov.ic_grid_size)
    }

    pub fn lyapunov_options(&self, engine: Engine) -> LyapunovOptions {
        let base = match engine {
            Engine::Classical => LyapunovOptions::classical(),
            _ => LyapunovOptions::stochastic(),
        };
        LyapunovOptions {
            d0: self.lyapunov.d0,
            n_shadows: self.lyapunov.n_shadows,
            renorm_interval: self.lyapunov.renorm_interval,
            n_steps: self.lyapunov.n_steps.unwrap_or(base.n_steps),
        }
    }

    /// Sweep values of `k`: the explicit list followed by the range.
    pub fn ks(&self) -> Vec<f64> {
        let mut ks = self.sweep.k.clone();
        if let Some([start, stop, step]) = self.sweep.k_range {
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            ks.extend((0..count).map(|i| start + step * i as f64));
        }
        ks
    }

    /// Atom-light parameters whose window gives `1/(κT)` equal to the
    /// protocol's `σ²`.
    pub fn atomlight_params(&self) -> Result<AtomLightParams> {
        let params = self.protocol_params()?;
        let ratio = params.sigma * params.sigma / params.j();
        let a = &self.atomlight;
        let mut al = crate::atomlight::od_params(params.n, a.sigma0_over_a, ratio, a.gamma_s, 20)?;
        al.dt = al.t * a.dt_factor;
        al.validate()?;
        Ok(al)
    }
}
