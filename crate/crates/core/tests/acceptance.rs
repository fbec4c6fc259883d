//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Every criterion returns a text artifact holding its numbers. Criterion 9
//! recomputes all of them on a different thread count and compares bytes.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kicktop_core::analysis::config::Config;
use kicktop_core::analysis::engine::shared_outcome_pair;
use kicktop_core::analysis::output::{fmt_f64, run_ensemble, Format, RunOptions, Task};
use kicktop_core::analysis::{
    averaged_comparison, lyapunov_sweep, od_sweep, phase_portrait, score_record, sigma_sweep, summarize_scores, Engine,
};
use kicktop_core::classical::{fibonacci_sphere, from_angles, LyapunovOptions};
use kicktop_core::feedback::{dephase, gamma_rate, kraus_diagonal, DensityMatrix, ProtocolParams};
use kicktop_core::rng::Streams;
use kicktop_core::spin::{collective_op, Axis, Spin};
use kicktop_core::Complex64;

const SEED: u64 = 20_240_917;

struct Outcome {
    pass: bool,
    detail: String,
    artifact: String,
}

fn params(k: f64, n: u64, ratio: f64, steps: usize) -> ProtocolParams {
    ProtocolParams::new(k, 1.0, n, steps).unwrap().with_sigma_over_sqrt_j(ratio)
}

/// ∫K_m†K_m dm by the trapezoid rule, compared with the identity.
fn criterion_1() -> Outcome {
    let spin = Spin::new(20.0).unwrap();
    let dim = spin.dim();
    let mut worst = 0.0f64;
    let mut artifact = String::new();
    for sigma in [0.5, 2.0, 10.0] {
        let h = sigma / 16.0;
        let lo = -spin.j() - 14.0 * sigma;
        let count = ((2.0 * spin.j() + 28.0 * sigma) / h).ceil() as usize;
        let mut acc = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..=count {
            let m = lo + h * i as f64;
            let w = if i == 0 || i == count { 0.5 * h } else { h };
            let d = kraus_diagonal(spin, m, sigma);
            let k = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d));
            acc += (k.transpose() * &k) * w;
        }
        let err = (acc - DMatrix::<f64>::identity(dim, dim)).abs().max();
        worst = worst.max(err);
        artifact += &format!("sigma={} err={}\n", fmt_f64(sigma), fmt_f64(err));
    }
    Outcome {
        pass: worst < 1e-8,
        detail: format!("max |∫K†K dm − I| = {worst:.2e} (< 1e-8)"),
        artifact,
    }
}

fn criterion_2() -> Outcome {
    let p = params(3.0, 20, 0.9, 5);
    let rows = averaged_comparison(&p, from_angles(1.0, 0.5), 10_000, &Streams::new(SEED)).unwrap();
    let d = rows.last().unwrap().trace_distance;
    let artifact = rows
        .iter()
        .map(|r| format!("step={} D={}\n", r.step, fmt_f64(r.trace_distance)))
        .collect();
    Outcome {
        pass: d < 0.03,
        detail: format!("trace distance after 5 steps = {d:.4} (< 0.03)"),
        artifact,
    }
}

/// Superoperator `−[Ĵz,[Ĵz,·]]` on column-stacked ρ.
fn double_commutator(spin: Spin) -> DMatrix<Complex64> {
    let jz = collective_op(Axis::Z, spin).to_dense();
    let n = spin.dim();
    let id = DMatrix::<Complex64>::identity(n, n);
    let jz2 = &jz * &jz;
    // vec(AρB) = (Bᵀ ⊗ A) vec(ρ)
    -(id.kronecker(&jz2) - jz.transpose().kronecker(&jz) * Complex64::new(2.0, 0.0) + jz2.transpose().kronecker(&id))
}

fn criterion_3() -> Outcome {
    let spin = Spin::new(2.0).unwrap();
    let n = spin.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let a = DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let mut raw = &a * a.adjoint();
    let tr = raw.trace();
    raw /= tr;
    let rho = DensityMatrix::new(spin, raw).unwrap();
    let gamma = 0.3;
    let fast = dephase(&rho, gamma).unwrap();
    let sup = (double_commutator(spin) * Complex64::new(gamma, 0.0)).exp();
    let vec_rho = DMatrix::from_column_slice(n * n, 1, rho.matrix().as_slice());
    let brute = sup * vec_rho;
    let err = fast
        .matrix()
        .as_slice()
        .iter()
        .zip(brute.as_slice())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max);

    // Γ(σ²) on a grid of σ² around the analytic minimum J/(2k)
    let (k, j) = (1.5, 500.0);
    let target = j / (2.0 * k);
    let cell = target / 200.0;
    let grid: Vec<f64> = (1..=800).map(|i| i as f64 * cell).collect();
    let best = grid
        .iter()
        .copied()
        .min_by(|x, y| gamma_rate(k, x.sqrt(), j).unwrap().total_cmp(&gamma_rate(k, y.sqrt(), j).unwrap()))
        .unwrap();
    let grid_ok = (best - target).abs() <= cell;
    Outcome {
        pass: err < 1e-10 && grid_ok,
        detail: format!(
            "dephase vs expm error {err:.1e} (< 1e-10); grid argmin σ² = {best:.3} vs J/2k = {target:.3} (cell {cell:.3})"
        ),
        artifact: format!("err={}\nbest={}\n", fmt_f64(err), fmt_f64(best)),
    }
}

fn criterion_4() -> Outcome {
    let p = params(1.5, 1000, 0.9, 30);
    let ic = from_angles(1.0, 0.5);
    let (q, h) = shared_outcome_pair(&p, ic, &Streams::new(SEED), 0).unwrap();
    let dev = q
        .rows
        .iter()
        .zip(&h.rows)
        .map(|(a, b)| (a.n[2] - b.n[2]).abs())
        .fold(0.0, f64::max);
    let artifact = q
        .rows
        .iter()
        .zip(&h.rows)
        .map(|(a, b)| format!("{} {} {}\n", a.step, fmt_f64(a.n[2]), fmt_f64(b.n[2])))
        .collect();
    Outcome {
        pass: dev < 0.05,
        detail: format!("max |Z_quantum − Z_hp| over 30 steps = {dev:.4} (< 0.05)"),
        artifact,
    }
}

fn sigma_ratios() -> Vec<f64> {
    // 0.1 … 10, 17 points log-spaced
    (0..17).map(|i| 10f64.powf(-1.0 + i as f64 / 8.0)).collect()
}

fn criterion_5() -> Outcome {
    let grid = fibonacci_sphere(100);
    let streams = Streams::new(SEED);
    let ratios = sigma_ratios();
    let curve = |n: u64| sigma_sweep(Engine::Hp, &params(1.5, n, 1.0, 30), &ratios, &grid, 4, &streams).unwrap();
    let small = curve(1_000);
    let large = curve(100_000);
    let (imin, min) = small
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.mean_dmax.total_cmp(&b.1.mean_dmax))
        .unwrap();
    let interior = imin > 0 && imin + 1 < small.len();
    let at = min.sigma_over_sqrt_j;
    let in_window = (0.5..=2.0).contains(&at);
    // near the minimum: the N=10³ minimum and its two neighbours
    let near: Vec<usize> = (imin.saturating_sub(1)..=(imin + 1).min(small.len() - 1)).collect();
    let below = near.iter().all(|&i| large[i].mean_dmax <= small[i].mean_dmax);
    let mut artifact = String::new();
    for (a, b) in small.iter().zip(&large) {
        artifact += &format!(
            "{} {} {}\n",
            fmt_f64(a.sigma_over_sqrt_j),
            fmt_f64(a.mean_dmax),
            fmt_f64(b.mean_dmax)
        );
    }
    Outcome {
        pass: interior && in_window && below,
        detail: format!(
            "N=1e3 minimum D̄ = {:.4} at σ/√J = {at:.3} (interior {interior}, in [0.5, 2] {in_window}); \
             N=1e5 at-or-below near minimum: {below} ({})",
            min.mean_dmax,
            near.iter()
                .map(|&i| format!("{:.4}≤{:.4}", large[i].mean_dmax, small[i].mean_dmax))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        artifact,
    }
}

fn criterion_6() -> Outcome {
    let grid = fibonacci_sphere(100);
    let streams = Streams::new(SEED);
    let mut pass = true;
    let mut parts = Vec::new();
    let mut artifact = String::new();
    for k in [1.5, 2.5, 4.0] {
        let p = params(k, 10_000_000, 0.9, 30);
        let recs = phase_portrait(Engine::Hp, &p, &grid, 1, 0.0, &streams).unwrap();
        let cells: Vec<_> = recs.iter().map(|r| score_record(r).unwrap()).collect();
        let s = summarize_scores(&cells).unwrap();
        pass &= s.median_s > 0.95;
        parts.push(format!("k={k}: median S = {:.4} ({} flagged)", s.median_s, s.n_flagged));
        artifact += &format!("{k} {} {} {}\n", fmt_f64(s.median_s), fmt_f64(s.mean_s), s.n_flagged);
    }
    Outcome {
        pass,
        detail: format!("{} (> 0.95)", parts.join("; ")),
        artifact,
    }
}

fn criterion_7() -> Outcome {
    let grid = fibonacci_sphere(100);
    let streams = Streams::new(SEED);
    let base = params(1.0, 10_000_000, 0.9, 0);
    let classical = LyapunovOptions::classical();
    let regular = lyapunov_sweep(Engine::Classical, &base, &[0.5, 1.0, 1.5, 2.0], &grid, &classical, 0.0, &streams).unwrap();
    let regular_max = regular.iter().map(|p| p.estimate.lambda_largest).fold(f64::MIN, f64::max);
    let regular_ok = regular_max < 0.05;

    let long = LyapunovOptions { n_steps: 5000, ..classical };
    let l12 = lyapunov_sweep(Engine::Classical, &base, &[12.0], &grid, &long, 0.0, &streams).unwrap()[0]
        .estimate
        .lambda_largest;
    let rel = (l12 / 6f64.ln() - 1.0).abs();
    let k12_ok = rel < 0.1;

    // HP and classical at k = 8 with the same options, so both carry the same transient
    let opts = LyapunovOptions::stochastic();
    let cl8 = &lyapunov_sweep(Engine::Classical, &base, &[8.0], &grid, &opts, 0.0, &streams).unwrap()[0].estimate;
    let hp = |n: u64| {
        lyapunov_sweep(Engine::Hp, &params(8.0, n, 0.9, 0), &[8.0], &grid, &opts, 0.0, &streams).unwrap()[0]
            .estimate
            .clone()
    };
    let sweep: Vec<_> = [1_000u64, 10_000, 100_000, 1_000_000, 10_000_000].iter().map(|&n| (n, hp(n))).collect();
    let hp7 = &sweep[4].1;
    let se = (hp7.std_error.powi(2) + cl8.std_error.powi(2)).sqrt();
    let gap = (hp7.lambda_largest - cl8.lambda_largest).abs();
    let match_ok = gap <= 2.0 * se;
    let gaps: Vec<f64> = sweep.iter().map(|(_, e)| (e.lambda_largest - cl8.lambda_largest).abs()).collect();
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);

    let mut artifact = format!("regular_max={}\nk12={}\ncl8={}\n", fmt_f64(regular_max), fmt_f64(l12), fmt_f64(cl8.lambda_largest));
    for (n, e) in &sweep {
        artifact += &format!("N={n} {} {}\n", fmt_f64(e.lambda_largest), fmt_f64(e.std_error));
    }
    Outcome {
        pass: regular_ok && k12_ok && match_ok && monotone,
        detail: format!(
            "max Λ(k≤2) = {regular_max:.4} (< 0.05); Λ(12) = {l12:.4} vs ln 6 off by {:.1}% (< 10%); \
             HP N=1e7 Λ(8) = {:.4} vs classical {:.4}, gap {gap:.4} ≤ 2·SE {:.4}: {match_ok}; \
             |Λ_HP − Λ_cl| over N=1e3…1e7 = [{}] (per-point SE up to {:.4}) monotone: {monotone}",
            100.0 * rel,
            hp7.lambda_largest,
            cl8.lambda_largest,
            2.0 * se,
            gaps.iter().map(|g| format!("{g:.4}")).collect::<Vec<_>>().join(", "),
            sweep.iter().map(|(_, e)| e.std_error).fold(0.0, f64::max)
        ),
        artifact,
    }
}

fn criterion_8() -> Outcome {
    let grid = fibonacci_sphere(100);
    let p = params(1.5, 1_000_000, 4.0, 30);
    let pts = od_sweep(&p, &[30.0, 300.0], 1.0, &grid, &Streams::new(SEED)).unwrap();
    let (lo, hi) = (&pts[0].summary, &pts[1].summary);
    let drop = hi.mean_s - lo.mean_s;
    Outcome {
        pass: drop >= 0.2,
        detail: format!(
            "mean S(OD=300) = {:.4}, mean S(OD=30) = {:.4}, difference {drop:.4} (≥ 0.2)",
            hi.mean_s, lo.mean_s
        ),
        artifact: pts
            .iter()
            .map(|p| format!("{} {} {}\n", fmt_f64(p.od), fmt_f64(p.gamma_s_t), fmt_f64(p.summary.mean_s)))
            .collect(),
    }
}

type Criterion = fn() -> Outcome;

const CRITERIA: [Criterion; 8] = [
    criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8,
];

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

/// Runs every CLI task twice through the file-writing path and compares bytes.
fn output_files_identical() -> Result<(), String> {
    let config = Config::parse(
        "[protocol]\nk = 1.5\nsigma_over_sqrtJ = 0.9\nN = 20\nn_steps = 6\n\
         [atomlight]\nsigma0_over_A = 15.0\n\
         [run]\nengine = \"hp\"\nseed = 11\nn_trajectories = 3\ngrid = 12\n\
         [lyapunov]\nic_grid_size = 12\nn_steps = 40\n\
         [sweep]\nsigma_over_sqrtJ = [0.5, 1.0, 2.0]\nod = [30.0, 300.0]\nk = [1.0, 8.0]\n",
    )
    .map_err(|e| e.to_string())?;
    let tasks = [
        (Task::Trajectory, Engine::Quantum),
        (Task::Portrait, Engine::Hp),
        (Task::Similarity, Engine::Quantum),
        (Task::Lyapunov, Engine::Hp),
        (Task::Averaged, Engine::Quantum),
        (Task::Sme, Engine::Quantum),
        (Task::SweepSigma, Engine::Hp),
        (Task::SweepOd, Engine::Hp),
    ];
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (task, engine) in tasks {
        for format in [Format::Csv, Format::Jsonl] {
            let mut dirs = Vec::new();
            for threads in [1, 4] {
                let dir = root.path().join(format!("{}-{format:?}-{threads}", task.name()));
                let opts = RunOptions {
                    task,
                    engine: Some(engine),
                    seed: None,
                    out_dir: dir.clone(),
                    threads: Some(threads),
                    format,
                };
                run_ensemble(&config, &opts).map_err(|e| format!("{}: {e}", task.name()))?;
                dirs.push(dir);
            }
            let mut names: Vec<_> = std::fs::read_dir(&dirs[0])
                .map_err(|e| e.to_string())?
                .map(|e| e.unwrap().file_name())
                .filter(|n| n != "timings.json")
                .collect();
            names.sort();
            for name in names {
                let a = std::fs::read(dirs[0].join(&name)).map_err(|e| e.to_string())?;
                let b = std::fs::read(dirs[1].join(&name)).map_err(|e| e.to_string())?;
                if a != b {
                    return Err(format!("{} differs between 1 and 4 threads", name.to_string_lossy()));
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(2).max(2);
    let mut artifacts = Vec::new();
    let mut all = true;
    for (i, criterion) in CRITERIA.iter().enumerate() {
        let t = Instant::now();
        let out = in_pool(threads, criterion);
        println!(
            "criterion {}: {}: {} [{:.1} s]",
            i + 1,
            if out.pass { "PASS" } else { "FAIL" },
            out.detail,
            t.elapsed().as_secs_f64()
        );
        all &= out.pass;
        artifacts.push(out.artifact);
    }

    let t = Instant::now();
    let mut mismatched = Vec::new();
    for (i, criterion) in CRITERIA.iter().enumerate() {
        if in_pool(1, criterion).artifact != artifacts[i] {
            mismatched.push(i + 1);
        }
    }
    let files = output_files_identical();
    let pass9 = mismatched.is_empty() && files.is_ok();
    println!(
        "criterion 9: {}: criteria 1–8 recomputed on 1 thread vs {threads}: {}; CLI task outputs on 1 vs 4 threads: {} [{:.1} s]",
        if pass9 { "PASS" } else { "FAIL" },
        if mismatched.is_empty() { "byte-identical".to_string() } else { format!("differ for {mismatched:?}") },
        match &files {
            Ok(()) => "byte-identical".to_string(),
            Err(e) => e.clone(),
        },
        t.elapsed().as_secs_f64()
    );
    all &= pass9;
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
