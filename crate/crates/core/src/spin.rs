//! Collective spin in the Dicke basis.
//!
//! Amplitudes are indexed by `i = J - m`, so row 0 holds `m = +J` and the last
//! row holds `m = -J`. Every operator and rotation in the crate follows this
//! ordering.
//!
//! Rotations use the positive-exponent convention `exp(+i·angle·Ĵ_axis)`.
//! Under that map the expectation vector `⟨Ĵ⟩` turns by `-angle` about the
//! same axis (see [`bloch_rotation`]).

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::Complex64;

/// Default ceiling on `J` for state-vector simulation.
pub const DEFAULT_MAX_J: f64 = 5000.0;

/// Total spin `J`, stored as the integer `2J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Spin {
    two_j: u32,
}

impl Spin {
    /// `J` must be a positive multiple of 1/2.
    pub fn new(j: f64) -> Result<Self> {
        let two_j = 2.0 * j;
        if !j.is_finite() || j < 0.5 || (two_j - two_j.round()).abs() > 1e-9 {
            return Err(Error::param(format!(
                "spin J = {j} must be a positive half-integer"
            )));
        }
        if two_j > u32::MAX as f64 {
            return Err(Error::param(format!("spin J = {j} is too large")));
        }
        Ok(Self {
            two_j: two_j.round() as u32,
        })
    }

    /// Spin of an ensemble of `n` two-level systems, `J = N/2`.
    pub fn from_ensemble(n: u64) -> Result<Self> {
        if n == 0 || n > u32::MAX as u64 {
            return Err(Error::param(format!("ensemble size N = {n} out of range")));
        }
        Ok(Self { two_j: n as u32 })
    }

    pub fn two_j(self) -> u32 {
        self.two_j
    }

    pub fn j(self) -> f64 {
        self.two_j as f64 / 2.0
    }

    /// Hilbert-space dimension `2J + 1`.
    pub fn dim(self) -> usize {
        self.two_j as usize + 1
    }

    /// Magnetic quantum number of row `i`.
    #[inline]
    pub fn m(self, i: usize) -> f64 {
        self.j() - i as f64
    }

    /// Iterator over `m = J, J-1, …, -J`.
    pub fn ms(self) -> impl Iterator<Item = f64> {
        let j = self.j();
        (0..self.dim()).map(move |i| j - i as f64)
    }

    /// `⟨m+1|Ĵ₊|m⟩` for the `m` of row `i + 1`, i.e. the element linking rows
    /// `i` and `i + 1`.
    #[inline]
    fn ladder(self, i: usize) -> f64 {
        let j = self.j();
        let m = self.m(i + 1);
        (j * (j + 1.0) - m * (m + 1.0)).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
    Plus,
    Minus,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            "+" | "plus" => Ok(Axis::Plus),
            "-" | "minus" => Ok(Axis::Minus),
            other => Err(Error::param(format!("unknown spin axis `{other}`"))),
        }
    }
}

/// Pure collective-spin state.
#[derive(Debug, Clone, PartialEq)]
pub struct DickeState {
    spin: Spin,
    amps: Vec<Complex64>,
}

impl DickeState {
    pub fn from_amplitudes(spin: Spin, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != spin.dim() {
            return Err(Error::param(format!(
                "expected {} amplitudes for J = {}, got {}",
                spin.dim(),
                spin.j(),
                amps.len()
            )));
        }
        Ok(Self { spin, amps })
    }

    /// The Dicke state `|J, m⟩`.
    pub fn dicke(spin: Spin, m: f64) -> Result<Self> {
        let i = spin.j() - m;
        if (i - i.round()).abs() > 1e-9 || i < -1e-9 || i.round() as usize >= spin.dim() {
            return Err(Error::param(format!("m = {m} is not a level of J = {}", spin.j())));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); spin.dim()];
        amps[i.round() as usize] = Complex64::new(1.0, 0.0);
        Ok(Self { spin, amps })
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Rescales to unit norm and returns the squared norm found beforehand.
    pub fn normalize(&mut self) -> f64 {
        let n2 = self.norm_sqr();
        let inv = 1.0 / n2.sqrt();
        self.amps.iter_mut().for_each(|c| *c *= inv);
        n2
    }

    /// Populations `|c_m|²` in row order.
    pub fn populations(&self) -> Vec<f64> {
        self.amps.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn inner(&self, other: &DickeState) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Multiplies amplitude `i` by `exp(i·phase(m_i))`.
    pub fn apply_diagonal_phase(&mut self, phase: impl Fn(f64) -> f64) {
        let spin = self.spin;
        for (i, c) in self.amps.iter_mut().enumerate() {
            *c *= Complex64::from_polar(1.0, phase(spin.m(i)));
        }
    }

    pub fn rotate(&self, axis: Axis, angle: f64) -> Result<DickeState> {
        let mut out = self.clone();
        out.rotate_in_place(axis, angle)?;
        Ok(out)
    }

    /// Applies `exp(i·angle·Ĵ_axis)`. Only Cartesian axes generate rotations.
    pub fn rotate_in_place(&mut self, axis: Axis, angle: f64) -> Result<()> {
        if !angle.is_finite() {
            return Err(Error::param(format!("rotation angle {angle} is not finite")));
        }
        match axis {
            Axis::Z => self.apply_diagonal_phase(|m| angle * m),
            Axis::X => rotation_table(self.spin).apply_x(&mut self.amps, angle),
            Axis::Y => {
                // Ĵy = W Ĵx W† with W = exp(-iπ/2 Ĵz)
                self.apply_diagonal_phase(|m| FRAC_PI_2 * m);
                rotation_table(self.spin).apply_x(&mut self.amps, angle);
                self.apply_diagonal_phase(|m| -FRAC_PI_2 * m);
            }
            Axis::Plus | Axis::Minus => {
                return Err(Error::param("ladder operators do not generate rotations"))
            }
        }
        Ok(())
    }

    /// Outer product `|ψ⟩⟨ψ|`.
    pub fn projector(&self) -> DMatrix<Complex64> {
        let v = nalgebra::DVector::from_column_slice(&self.amps);
        &v * v.adjoint()
    }
}

/// Spin coherent state pointing along `(θ, φ)`.
///
/// Amplitudes are `√C(2J, J−m) cos(θ/2)^{J+m} sin(θ/2)^{J−m} e^{−imφ}`,
/// evaluated in log space so that large `J` does not overflow.
pub fn make_scs(theta: f64, phi: f64, j: f64) -> Result<DickeState> {
    if !theta.is_finite() || !phi.is_finite() {
        return Err(Error::param("coherent-state angles must be finite"));
    }
    let spin = Spin::new(j)?;
    let n = spin.two_j as usize;
    let mut ln_fact = vec![0.0f64; n + 1];
    for k in 1..=n {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    // Signs of c and s are carried separately so the log stays real.
    let pow = |base: f64, e: usize| -> (f64, f64) {
        if e == 0 {
            (0.0, 1.0)
        } else {
            let sign = if base < 0.0 && e % 2 == 1 { -1.0 } else { 1.0 };
            (e as f64 * base.abs().ln(), sign)
        }
    };
    let amps = (0..=n)
        .map(|i| {
            // i = J - m, so J + m = n - i
            let (lc, sc) = pow(c, n - i);
            let (ls, ss) = pow(s, i);
            let ln_binom = ln_fact[n] - ln_fact[i] - ln_fact[n - i];
            let mag = (0.5 * ln_binom + lc + ls).exp();
            Complex64::from_polar(mag * sc * ss, -spin.m(i) * phi)
        })
        .collect();
    let mut state = DickeState { spin, amps };
    state.normalize();
    Ok(state)
}

/// Banded matrix of `Ĵx, Ĵy, Ĵz, Ĵ₊` or `Ĵ₋`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinOperator {
    axis: Axis,
    spin: Spin,
    diag: Vec<Complex64>,
    /// `upper[i]` is the element at `(i, i+1)`.
    upper: Vec<Complex64>,
    /// `lower[i]` is the element at `(i+1, i)`.
    lower: Vec<Complex64>,
}

pub fn collective_op(axis: Axis, spin: Spin) -> SpinOperator {
    let n = spin.dim();
    let zero = Complex64::new(0.0, 0.0);
    let ladder: Vec<f64> = (0..n - 1).map(|i| spin.ladder(i)).collect();
    let (diag, upper, lower) = match axis {
        Axis::Z => (
            spin.ms().map(|m| Complex64::new(m, 0.0)).collect(),
            vec![zero; n - 1],
            vec![zero; n - 1],
        ),
        Axis::Plus => (
            vec![zero; n],
            ladder.iter().map(|&c| Complex64::new(c, 0.0)).collect(),
            vec![zero; n - 1],
        ),
        Axis::Minus => (
            vec![zero; n],
            vec![zero; n - 1],
            ladder.iter().map(|&c| Complex64::new(c, 0.0)).collect(),
        ),
        Axis::X => (
            vec![zero; n],
            ladder.iter().map(|&c| Complex64::new(c / 2.0, 0.0)).collect(),
            ladder.iter().map(|&c| Complex64::new(c / 2.0, 0.0)).collect(),
        ),
        Axis::Y => (
            vec![zero; n],
            ladder.iter().map(|&c| Complex64::new(0.0, -c / 2.0)).collect(),
            ladder.iter().map(|&c| Complex64::new(0.0, c / 2.0)).collect(),
        ),
    };
    SpinOperator {
        axis,
        spin,
        diag,
        upper,
        lower,
    }
}

impl SpinOperator {
    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    pub fn diagonal(&self) -> &[Complex64] {
        &self.diag
    }

    pub fn upper(&self) -> &[Complex64] {
        &self.upper
    }

    pub fn lower(&self) -> &[Complex64] {
        &self.lower
    }

    /// Matrix element `⟨row|Ô|col⟩`.
    pub fn element(&self, row: usize, col: usize) -> Complex64 {
        match col as isize - row as isize {
            0 => self.diag[row],
            1 => self.upper[row],
            -1 => self.lower[col],
            _ => Complex64::new(0.0, 0.0),
        }
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.diag.len();
        assert_eq!(v.len(), n, "operator/state dimension mismatch");
        (0..n)
            .map(|i| {
                let mut acc = self.diag[i] * v[i];
                if i + 1 < n {
                    acc += self.upper[i] * v[i + 1];
                }
                if i > 0 {
                    acc += self.lower[i - 1] * v[i - 1];
                }
                acc
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let n = self.diag.len();
        DMatrix::from_fn(n, n, |r, c| self.element(r, c))
    }
}

/// Eigenvectors of `Ĵx` in the Dicke basis, shared across threads.
///
/// Row `k` of `vecs` is the real eigenvector with eigenvalue `J − k`.
#[derive(Debug)]
pub struct RotationTable {
    spin: Spin,
    vecs: Vec<f64>,
}

fn table_cache() -> &'static Mutex<HashMap<Spin, Arc<RotationTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<Spin, Arc<RotationTable>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Cached `Ĵx` eigenbasis for `spin`, built on first use.
pub fn rotation_table(spin: Spin) -> Arc<RotationTable> {
    if let Some(t) = table_cache().lock().expect("rotation cache poisoned").get(&spin) {
        return Arc::clone(t);
    }
    // Built outside the lock; a racing duplicate is identical and discarded.
    let table = Arc::new(RotationTable::build(spin));
    let mut cache = table_cache().lock().expect("rotation cache poisoned");
    Arc::clone(cache.entry(spin).or_insert(table))
}

impl RotationTable {
    fn build(spin: Spin) -> Self {
        let n = spin.dim();
        // Off-diagonal of Ĵx; the diagonal is zero.
        let b: Vec<f64> = (0..n.saturating_sub(1)).map(|i| spin.ladder(i) / 2.0).collect();
        let mut vecs = vec![0.0; n * n];
        for k in 0..n {
            let mu = spin.m(k);
            let v = jx_eigenvector(&b, mu);
            vecs[k * n..(k + 1) * n].copy_from_slice(&v);
        }
        Self { spin, vecs }
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    /// Eigenvector of `Ĵx` with eigenvalue `J − k`.
    pub fn eigenvector(&self, k: usize) -> &[f64] {
        let n = self.spin.dim();
        &self.vecs[k * n..(k + 1) * n]
    }

    /// In-place `exp(i·angle·Ĵx)`.
    pub fn apply_x(&self, amps: &mut [Complex64], angle: f64) {
        let n = self.spin.dim();
        let spin = self.spin;
        let coeffs: Vec<Complex64> = (0..n)
            .map(|k| {
                let row = &self.vecs[k * n..(k + 1) * n];
                let a: Complex64 = row.iter().zip(amps.iter()).map(|(&e, &c)| c * e).sum();
                a * Complex64::from_polar(1.0, angle * spin.m(k))
            })
            .collect();
        amps.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (k, a) in coeffs.iter().enumerate() {
            let row = &self.vecs[k * n..(k + 1) * n];
            for (c, &e) in amps.iter_mut().zip(row) {
                *c += a * e;
            }
        }
    }
}

/// Eigenvector of the zero-diagonal symmetric tridiagonal matrix with
/// off-diagonal `b` for the exact eigenvalue `mu`.
///
/// Both ends of the Dicke ladder sit in the classically forbidden region of
/// every `Ĵx` eigenvector, so the three-term recurrence is run inward from each
/// end (the stable direction) and the halves are matched around the centre.
fn jx_eigenvector(b: &[f64], mu: f64) -> Vec<f64> {
    let n = b.len() + 1;
    if n == 1 {
        return vec![1.0];
    }
    const BIG: f64 = 1e150;
    let mid = n / 2;
    let fwd_end = (mid + 1).min(n - 1);
    let bwd_end = mid.saturating_sub(1);

    let mut fwd = vec![0.0; n];
    fwd[0] = 1.0;
    fwd[1] = mu / b[0];
    for i in 1..fwd_end {
        fwd[i + 1] = (mu * fwd[i] - b[i - 1] * fwd[i - 1]) / b[i];
        if fwd[i + 1].abs() > BIG {
            fwd[..=i + 1].iter_mut().for_each(|x| *x /= BIG);
        }
    }

    let mut bwd = vec![0.0; n];
    bwd[n - 1] = 1.0;
    bwd[n - 2] = mu / b[n - 2];
    for i in (bwd_end + 1..n - 1).rev() {
        bwd[i - 1] = (mu * bwd[i] - b[i] * bwd[i + 1]) / b[i - 1];
        if bwd[i - 1].abs() > BIG {
            bwd[i - 1..].iter_mut().for_each(|x| *x /= BIG);
        }
    }

    // least-squares scale of the backward half onto the forward half
    let (mut num, mut den) = (0.0, 0.0);
    for i in bwd_end..=fwd_end {
        num += fwd[i] * bwd[i];
        den += bwd[i] * bwd[i];
    }
    let scale = num / den;
    let mut v: Vec<f64> = (0..n)
        .map(|i| if i <= mid { fwd[i] } else { scale * bwd[i] })
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// First and second moments of `Ĵ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinMoments {
    /// `⟨Ĵ⟩ / J`.
    pub n: Vector3<f64>,
    /// `V_αβ = (⟨{Ĵα, Ĵβ}⟩ − 2⟨Ĵα⟩⟨Ĵβ⟩) / 2J`.
    pub v: Matrix3<f64>,
    /// `⟨Ĵz²⟩ − ⟨Ĵz⟩²`.
    pub dz2: f64,
}

pub fn expectations(state: &DickeState) -> SpinMoments {
    let spin = state.spin;
    let psi = state.amplitudes();
    let applied: [Vec<Complex64>; 3] = [Axis::X, Axis::Y, Axis::Z]
        .map(|axis| collective_op(axis, spin).apply(psi));
    let dot = |a: &[Complex64], b: &[Complex64]| -> Complex64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
    };
    let mean: [f64; 3] = std::array::from_fn(|a| dot(psi, &applied[a]).re);
    let j = spin.j();
    let mut v = Matrix3::zeros();
    for a in 0..3 {
        for b in a..3 {
            // ⟨ψ|Ĵα Ĵβ|ψ⟩ = (Ĵα ψ)† (Ĵβ ψ) for Hermitian Ĵα
            let anti = 2.0 * dot(&applied[a], &applied[b]).re;
            let val = (anti - 2.0 * mean[a] * mean[b]) / (2.0 * j);
            v[(a, b)] = val;
            v[(b, a)] = val;
        }
    }
    let z2 = dot(&applied[2], &applied[2]).re;
    SpinMoments {
        n: Vector3::from(mean) / j,
        v,
        dz2: z2 - mean[2] * mean[2],
    }
}

/// 3×3 matrix by which `⟨Ĵ⟩` transforms under `exp(i·angle·Ĵ_axis)`.
///
/// This is the right-handed rotation by `-angle`.
pub fn bloch_rotation(axis: Axis, angle: f64) -> Result<Matrix3<f64>> {
    let (s, c) = (-angle).sin_cos();
    match axis {
        Axis::X => Ok(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)),
        Axis::Y => Ok(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)),
        Axis::Z => Ok(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)),
        Axis::Plus | Axis::Minus => Err(Error::param("ladder operators do not generate rotations")),
    }
}
