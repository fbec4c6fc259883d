//! Batch drivers behind the CLI subcommands and the acceptance checks.
//!
//! Work items fan out over rayon and are gathered by index. Every reduction
//! runs in a fixed order, so results do not depend on the thread count.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{classical_reference, quantum_initial, simulate, Engine, TrajectoryRecord, TrajectoryRow};
use super::metrics::{max_classical_distance, median, similarity, SimilarityScore};
use crate::atomlight::{od_params, sme_protocol_step, AtomLightParams};
use crate::classical::{estimate_lyapunov, BlochPoint, ClassicalTop, LyapunovEstimate, LyapunovOptions};
use crate::error::{Error, Result};
use crate::feedback::{averaged_step, run_trajectory, DensityMatrix, ProtocolParams};
use crate::gaussian::HpTop;
use crate::rng::{Lane, Streams};
use crate::Complex64;

/// Trajectories summed per block by the Monte Carlo averages.
const BLOCK: usize = 256;

/// One record per `(initial condition, realization)`; trajectory index
/// `ic · realizations + r`.
pub fn phase_portrait(
    engine: Engine,
    params: &ProtocolParams,
    grid: &[BlochPoint],
    realizations: usize,
    decoherence: f64,
    streams: &Streams,
) -> Result<Vec<TrajectoryRecord>> {
    if grid.is_empty() || realizations == 0 {
        return Err(Error::param("portrait needs a non-empty grid and at least one realization"));
    }
    engine.check(params, decoherence)?;
    (0..grid.len() * realizations)
        .into_par_iter()
        .map(|t| simulate(engine, params, grid[t / realizations], decoherence, streams, t as u64))
        .collect()
}

/// Similarity of one record against the noise-free orbit from the same start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub trajectory: u64,
    pub ic: [f64; 3],
    pub score: Option<SimilarityScore>,
    /// Why `score` is missing, e.g. a constant angle sequence at a fixed point.
    pub flag: Option<String>,
}

pub fn score_record(record: &TrajectoryRecord) -> Result<CellScore> {
    let reference = classical_reference(
        BlochPoint::from(record.ic),
        record.params.k,
        record.params.p,
        record.rows.len(),
    );
    let (score, flag) = match similarity(&record.blochs(), &reference) {
        Ok(s) => (Some(s), None),
        Err(e @ Error::DegenerateCorrelation(_)) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(CellScore {
        trajectory: record.trajectory,
        ic: record.ic,
        score,
        flag,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub mean_s: f64,
    pub median_s: f64,
    pub n_scored: usize,
    pub n_flagged: usize,
}

/// Mean and median over the unflagged cells.
pub fn summarize_scores(cells: &[CellScore]) -> Result<ScoreSummary> {
    let s: Vec<f64> = cells.iter().filter_map(|c| c.score.map(|x| x.s)).collect();
    let median_s = median(&s).ok_or_else(|| Error::NumericalDegeneracy("every similarity cell is flagged".into()))?;
    Ok(ScoreSummary {
        mean_s: s.iter().sum::<f64>() / s.len() as f64,
        median_s,
        n_scored: s.len(),
        n_flagged: cells.len() - s.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaPoint {
    pub sigma_over_sqrt_j: f64,
    /// `D_c^max` averaged over initial conditions and realizations.
    pub mean_dmax: f64,
    /// Standard error of the per-IC means across initial conditions.
    pub se_over_ics: f64,
    /// Mean over ICs of the standard deviation across realizations (0 for one realization).
    pub realization_spread: f64,
}

/// `D̄_c^max` against the noise-free orbit for each `σ/√J` in `ratios`.
///
/// Every ratio reuses the same trajectory indices, so neighbouring points
/// share their random numbers and the curve is smooth in σ.
pub fn sigma_sweep(
    engine: Engine,
    base: &ProtocolParams,
    ratios: &[f64],
    grid: &[BlochPoint],
    realizations: usize,
    streams: &Streams,
) -> Result<Vec<SigmaPoint>> {
    ratios
        .iter()
        .map(|&ratio| {
            let params = base.with_sigma_over_sqrt_j(ratio);
            let records = phase_portrait(engine, &params, grid, realizations, 0.0, streams)?;
            let dmax: Vec<f64> = records
                .iter()
                .map(|r| {
                    let reference = classical_reference(BlochPoint::from(r.ic), params.k, params.p, r.rows.len());
                    max_classical_distance(&r.blochs(), &reference)
                })
                .collect::<Result<_>>()?;
            let per_ic: Vec<&[f64]> = dmax.chunks(realizations).collect();
            let means: Vec<f64> = per_ic.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
            let n_ic = means.len() as f64;
            let mean = means.iter().sum::<f64>() / n_ic;
            let var = if means.len() > 1 {
                means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n_ic - 1.0)
            } else {
                0.0
            };
            let spread = per_ic
                .iter()
                .zip(&means)
                .map(|(c, m)| {
                    if c.len() > 1 {
                        (c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (c.len() as f64 - 1.0)).sqrt()
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
                / n_ic;
            Ok(SigmaPoint {
                sigma_over_sqrt_j: ratio,
                mean_dmax: mean,
                se_over_ics: (var / n_ic).sqrt(),
                realization_spread: spread,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdPoint {
    pub od: f64,
    pub sigma0_over_a: f64,
    /// Decoherence per protocol step.
    pub gamma_s_t: f64,
    pub summary: ScoreSummary,
}

/// Mean similarity versus optical depth at fixed `N`, varying `σ₀/A`.
///
/// The window is chosen by [`od_params`] so that `1/(κT)` equals the
/// protocol's own `σ²`; the resulting `γ_s·T` is applied before every step.
pub fn od_sweep(
    params: &ProtocolParams,
    ods: &[f64],
    gamma_s: f64,
    grid: &[BlochPoint],
    streams: &Streams,
) -> Result<Vec<OdPoint>> {
    let ratio = params.sigma * params.sigma / params.j();
    ods.iter()
        .map(|&od| {
            if !(od > 0.0) {
                return Err(Error::param(format!("OD = {od} must be positive")));
            }
            let sigma0_over_a = od / params.n as f64;
            let al = od_params(params.n, sigma0_over_a, ratio, gamma_s, 20)?;
            let records = phase_portrait(Engine::Hp, params, grid, 1, al.gamma_s_t(), streams)?;
            let cells: Vec<CellScore> = records.iter().map(score_record).collect::<Result<_>>()?;
            Ok(OdPoint {
                od: al.od(),
                sigma0_over_a,
                gamma_s_t: al.gamma_s_t(),
                summary: summarize_scores(&cells)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovPoint {
    pub engine: Engine,
    pub k: f64,
    /// Ensemble size for the Gaussian engine.
    pub n: Option<u64>,
    pub estimate: LyapunovEstimate,
}

/// `Λ_Largest` for each `k`, on the classical map or the Gaussian model.
pub fn lyapunov_sweep(
    engine: Engine,
    base: &ProtocolParams,
    ks: &[f64],
    grid: &[BlochPoint],
    opts: &LyapunovOptions,
    decoherence: f64,
    streams: &Streams,
) -> Result<Vec<LyapunovPoint>> {
    engine.check(base, decoherence)?;
    ks.iter()
        .map(|&k| {
            let (estimate, n) = match engine {
                Engine::Classical => (estimate_lyapunov(&ClassicalTop { k, p: base.p }, grid, opts, streams)?, None),
                Engine::Hp => {
                    let top = HpTop {
                        params: ProtocolParams { k, ..*base },
                        decoherence,
                    };
                    (estimate_lyapunov(&top, grid, opts, streams)?, Some(base.n))
                }
                Engine::Quantum => {
                    return Err(Error::EngineMismatch(
                        "Lyapunov estimates need a classical or hp engine".into(),
                    ))
                }
            };
            Ok(LyapunovPoint { engine, k, n, estimate })
        })
        .collect()
}

/// Per-step comparison of the Monte Carlo average with the averaged map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedRow {
    pub step: usize,
    pub trace_distance: f64,
    pub bloch_map: [f64; 3],
    pub bloch_monte_carlo: [f64; 3],
}

pub fn averaged_comparison(
    params: &ProtocolParams,
    ic: BlochPoint,
    n_trajectories: usize,
    streams: &Streams,
) -> Result<Vec<AveragedRow>> {
    if n_trajectories == 0 {
        return Err(Error::param("need at least one trajectory"));
    }
    let psi0 = quantum_initial(&ic, params)?;
    let rho0 = DensityMatrix::from_pure(&psi0)?;
    let spin = rho0.spin();
    let (dim, steps) = (spin.dim(), params.n_steps);
    let blocks: Vec<Vec<DMatrix<Complex64>>> = (0..n_trajectories.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![DMatrix::<Complex64>::zeros(dim, dim); steps];
            for t in b * BLOCK..((b + 1) * BLOCK).min(n_trajectories) {
                let (states, _) = run_trajectory(&psi0, params, steps, streams, t as u64)?;
                for (a, psi) in acc.iter_mut().zip(&states) {
                    *a += psi.projector();
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(steps);
    let mut mapped = rho0;
    for s in 0..steps {
        let mut sum = DMatrix::<Complex64>::zeros(dim, dim);
        for block in &blocks {
            sum += &block[s];
        }
        sum /= Complex64::new(n_trajectories as f64, 0.0);
        let mc = DensityMatrix::new(spin, sum)?;
        mapped = averaged_step(&mapped, params)?;
        rows.push(AveragedRow {
            step: s + 1,
            trace_distance: mc.trace_distance(&mapped)?,
            bloch_map: mapped.bloch().into(),
            bloch_monte_carlo: mc.bloch().into(),
        });
    }
    Ok(rows)
}

/// Protocol trajectory whose measurement is the continuous record of the
/// stochastic master equation; window `w` draws from `(t, Record, w)`.
pub fn sme_trajectory(
    params: &ProtocolParams,
    atomlight: &AtomLightParams,
    ic: BlochPoint,
    streams: &Streams,
    trajectory: u64,
) -> Result<TrajectoryRecord> {
    if atomlight.n != params.n {
        return Err(Error::EngineMismatch(format!(
            "atom-light N = {} differs from protocol N = {}",
            atomlight.n, params.n
        )));
    }
    let mut rho = DensityMatrix::from_pure(&quantum_initial(&ic, params)?)?;
    let mut rows = Vec::with_capacity(params.n_steps);
    for s in 0..params.n_steps {
        let mut rng = streams.rng(trajectory, Lane::Record, s as u64);
        let (next, m) = sme_protocol_step(&rho, params, atomlight, &mut rng)?;
        rho = next;
        rows.push(TrajectoryRow {
            step: s + 1,
            m: Some(m),
            n: rho.bloch().into(),
            v: None,
        });
    }
    let record = TrajectoryRecord {
        engine: Engine::Quantum,
        params: *params,
        ic: ic.into(),
        master_seed: streams.master_seed(),
        trajectory,
        rows,
    };
    record.validate()?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{fibonacci_sphere, from_angles};

    #[test]
    fn classical_portrait_scores_one() {
        let p = ProtocolParams::new(1.5, 1.0, 1000, 30).unwrap();
        let grid = fibonacci_sphere(12);
        let recs = phase_portrait(Engine::Classical, &p, &grid, 1, 0.0, &Streams::new(0)).unwrap();
        let cells: Vec<_> = recs.iter().map(|r| score_record(r).unwrap()).collect();
        let sum = summarize_scores(&cells).unwrap();
        assert!((sum.median_s - 1.0).abs() < 1e-12);
        assert_eq!(sum.n_scored + sum.n_flagged, 12);
    }

    #[test]
    fn fixed_point_cell_is_flagged() {
        let p = ProtocolParams::new(1.5, 1.0, 1000, 10).unwrap();
        let grid = [BlochPoint::new(0.0, 1.0, 0.0)];
        let recs = phase_portrait(Engine::Classical, &p, &grid, 1, 0.0, &Streams::new(0)).unwrap();
        let cell = score_record(&recs[0]).unwrap();
        assert!(cell.score.is_none() && cell.flag.is_some());
    }

    #[test]
    fn sweeps_have_one_point_per_setting() {
        let base = ProtocolParams::new(1.5, 1.0, 1000, 10).unwrap();
        let grid = fibonacci_sphere(6);
        let streams = Streams::new(1);
        let pts = sigma_sweep(Engine::Hp, &base, &[0.5, 1.0, 2.0], &grid, 2, &streams).unwrap();
        assert_eq!(pts.len(), 3);
        assert!(pts.iter().all(|p| p.mean_dmax > 0.0 && p.realization_spread > 0.0));

        let ks: Vec<f64> = (0..=20).map(|i| 0.5 * i as f64).collect();
        let opts = LyapunovOptions { n_steps: 20, ..LyapunovOptions::classical() };
        let ly = lyapunov_sweep(Engine::Classical, &base, &ks, &grid, &opts, 0.0, &streams).unwrap();
        assert_eq!(ly.len(), 21);
    }

    #[test]
    fn averaged_comparison_is_thread_count_free() {
        let p = ProtocolParams::new(3.0, 1.0, 8, 3).unwrap().with_sigma_over_sqrt_j(0.9);
        let streams = Streams::new(5);
        let ic = from_angles(1.0, 0.4);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| averaged_comparison(&p, ic, 600, &streams).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn sme_trajectory_rows() {
        let p = ProtocolParams::new(1.5, 1.0, 10, 4).unwrap().with_sigma_over_sqrt_j((0.5f64).sqrt());
        let al = od_params(10, 30.0, 0.5, 1.0, 20).unwrap();
        let rec = sme_trajectory(&p, &al, from_angles(1.0, 0.2), &Streams::new(2), 0).unwrap();
        assert_eq!(rec.rows.len(), 4);
        let mut bad = al;
        bad.n = 12;
        assert!(matches!(
            sme_trajectory(&p, &bad, from_angles(1.0, 0.2), &Streams::new(2), 0),
            Err(Error::EngineMismatch(_))
        ));
    }
}
