//! The three trajectory engines behind a common record type.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::atomlight::gaussian_decohere;
use crate::classical::{ckt_step, BlochPoint};
use crate::error::{Error, Result};
use crate::feedback::{trajectory_step, ProtocolParams};
use crate::gaussian::{hp_step, hp_step_with_outcome, GaussianSpinState, NORM_SLACK};
use crate::rng::{Lane, Streams};
use crate::spin::{expectations, make_scs, DickeState};

/// Largest ensemble the state-vector engine accepts (`J = 5000`).
pub const MAX_QUANTUM_N: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Classical,
    Hp,
    Quantum,
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Engine::Classical),
            "hp" => Ok(Engine::Hp),
            "quantum" => Ok(Engine::Quantum),
            other => Err(Error::EngineMismatch(format!(
                "unknown engine `{other}` (expected classical, hp or quantum)"
            ))),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Classical => "classical",
            Engine::Hp => "hp",
            Engine::Quantum => "quantum",
        })
    }
}

impl Engine {
    /// Rejects engine/parameter combinations that cannot run.
    pub fn check(self, params: &ProtocolParams, decoherence: f64) -> Result<()> {
        params.validate()?;
        if self == Engine::Quantum && params.n > MAX_QUANTUM_N {
            return Err(Error::EngineMismatch(format!(
                "quantum engine is limited to N <= {MAX_QUANTUM_N} (got N = {}); use --engine hp",
                params.n
            )));
        }
        if decoherence > 0.0 && self != Engine::Hp {
            return Err(Error::EngineMismatch(format!(
                "per-step decoherence is modelled only by the hp engine (got {self})"
            )));
        }
        if !(decoherence >= 0.0) {
            return Err(Error::param(format!("decoherence {decoherence} must be non-negative")));
        }
        Ok(())
    }
}

/// State after one step. `m` is absent for the classical map and `v` is only
/// kept by the Gaussian engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub m: Option<f64>,
    pub n: [f64; 3],
    /// `[Vxx, Vxy, Vxz, Vyy, Vyz, Vzz]`
    pub v: Option<[f64; 6]>,
}

impl TrajectoryRow {
    pub fn bloch(&self) -> BlochPoint {
        BlochPoint::from(self.n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub engine: Engine,
    pub params: ProtocolParams,
    pub ic: [f64; 3],
    pub master_seed: u64,
    pub trajectory: u64,
    /// Rows for steps `1..=n_steps`; the initial condition is not repeated.
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryRecord {
    pub fn blochs(&self) -> Vec<BlochPoint> {
        self.rows.iter().map(TrajectoryRow::bloch).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.len() != self.params.n_steps {
            return Err(Error::LengthMismatch {
                left: self.rows.len(),
                right: self.params.n_steps,
            });
        }
        for row in &self.rows {
            let r = row.bloch().norm();
            if !(r <= 1.0 + NORM_SLACK) {
                return Err(Error::NumericalDegeneracy(format!("|n| = {r} at step {}", row.step)));
            }
        }
        Ok(())
    }
}

fn covariance_entries(g: &GaussianSpinState) -> [f64; 6] {
    let v = &g.v;
    [v[(0, 0)], v[(0, 1)], v[(0, 2)], v[(1, 1)], v[(1, 2)], v[(2, 2)]]
}

/// Initial state of the quantum engine: the coherent state pointing along `ic`.
pub fn quantum_initial(ic: &BlochPoint, params: &ProtocolParams) -> Result<DickeState> {
    let (theta, phi) = crate::classical::to_angles(ic);
    make_scs(theta, phi, params.j())
}

/// Noise-free kicked-top orbit from `ic`, steps `1..=steps`.
pub fn classical_reference(ic: BlochPoint, k: f64, p: f64, steps: usize) -> Vec<BlochPoint> {
    let mut n = ic;
    (0..steps)
        .map(|_| {
            n = ckt_step(n, k, p);
            n
        })
        .collect()
}

/// Runs one trajectory of `params.n_steps` steps.
///
/// Step `s` of trajectory `t` draws from the stream `(t, Outcome, s)`, so the
/// result depends only on `(master seed, t)`. `decoherence` is `γ_s·T`,
/// applied before each Gaussian step.
pub fn simulate(
    engine: Engine,
    params: &ProtocolParams,
    ic: BlochPoint,
    decoherence: f64,
    streams: &Streams,
    trajectory: u64,
) -> Result<TrajectoryRecord> {
    engine.check(params, decoherence)?;
    let mut rows = Vec::with_capacity(params.n_steps);
    match engine {
        Engine::Classical => {
            for (i, n) in classical_reference(ic, params.k, params.p, params.n_steps).into_iter().enumerate() {
                rows.push(TrajectoryRow {
                    step: i + 1,
                    m: None,
                    n: n.into(),
                    v: None,
                });
            }
        }
        Engine::Hp => {
            let mut g = GaussianSpinState::coherent_at(ic, params.j())?;
            for s in 0..params.n_steps {
                if decoherence > 0.0 {
                    g = gaussian_decohere(&g, decoherence, 1.0)?;
                }
                let mut rng = streams.rng(trajectory, Lane::Outcome, s as u64);
                let (next, m, _) = hp_step(&g, params, &mut rng)?;
                g = next;
                rows.push(TrajectoryRow {
                    step: s + 1,
                    m: Some(m),
                    n: g.n.into(),
                    v: Some(covariance_entries(&g)),
                });
            }
        }
        Engine::Quantum => {
            let mut psi = quantum_initial(&ic, params)?;
            for s in 0..params.n_steps {
                let mut rng = streams.rng(trajectory, Lane::Outcome, s as u64);
                let (next, out) = trajectory_step(&psi, params, &mut rng)?;
                psi = next;
                rows.push(TrajectoryRow {
                    step: s + 1,
                    m: Some(out.m),
                    n: expectations(&psi).n.into(),
                    v: None,
                });
            }
        }
    }
    let record = TrajectoryRecord {
        engine,
        params: *params,
        ic: ic.into(),
        master_seed: streams.master_seed(),
        trajectory,
        rows,
    };
    record.validate()?;
    Ok(record)
}

/// Quantum trajectory plus the Gaussian model driven by the same outcomes.
pub fn shared_outcome_pair(
    params: &ProtocolParams,
    ic: BlochPoint,
    streams: &Streams,
    trajectory: u64,
) -> Result<(TrajectoryRecord, TrajectoryRecord)> {
    let quantum = simulate(Engine::Quantum, params, ic, 0.0, streams, trajectory)?;
    let mut g = GaussianSpinState::coherent_at(ic, params.j())?;
    let mut rows = Vec::with_capacity(params.n_steps);
    for q in &quantum.rows {
        let m = q.m.expect("quantum rows carry outcomes");
        g = hp_step_with_outcome(&g, params, m)?.0;
        rows.push(TrajectoryRow {
            step: q.step,
            m: Some(m),
            n: g.n.into(),
            v: Some(covariance_entries(&g)),
        });
    }
    let hp = TrajectoryRecord {
        engine: Engine::Hp,
        rows,
        ..quantum.clone()
    };
    hp.validate()?;
    Ok((quantum, hp))
}
