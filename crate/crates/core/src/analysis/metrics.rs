//! Distances and the phase-space similarity score.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::classical::{to_angles, BlochPoint};
use crate::error::{Error, Result};

/// `max_i ‖a_i − b_i‖` (Euclidean).
pub fn max_classical_distance(a: &[BlochPoint], b: &[BlochPoint]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max))
}

/// Adds multiples of 2π so that consecutive phases differ by at most π.
pub fn unwrap_phases(phases: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phases.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for &p in phases {
        if let Some(q) = prev {
            let jump = p + offset - q;
            offset -= (jump / (2.0 * PI)).round() * 2.0 * PI;
        }
        let v = p + offset;
        out.push(v);
        prev = Some(v);
    }
    out
}

/// Pearson correlation; `None` when either sequence has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    // relative floor: sequences constant up to rounding count as constant
    let floor = 1e-24 * n;
    if !(sxx > floor && syy > floor) {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    /// `cor_theta · cor_phi · min_norm_sq`.
    pub s: f64,
    pub cor_theta: f64,
    pub cor_phi: f64,
    pub min_norm_sq: f64,
}

/// Product of the θ and unwrapped-φ Pearson correlations with the smallest
/// squared norm along `traj`.
///
/// Fails with [`Error::DegenerateCorrelation`] when either angle sequence is
/// constant, as at a fixed point.
pub fn similarity(traj: &[BlochPoint], reference: &[BlochPoint]) -> Result<SimilarityScore> {
    if traj.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: traj.len(),
            right: reference.len(),
        });
    }
    if traj.len() < 3 {
        return Err(Error::param("similarity needs at least 3 steps"));
    }
    let angles = |pts: &[BlochPoint]| -> (Vec<f64>, Vec<f64>) {
        let (theta, phi): (Vec<f64>, Vec<f64>) = pts.iter().map(to_angles).unzip();
        (theta, unwrap_phases(&phi))
    };
    let (t1, p1) = angles(traj);
    let (t2, p2) = angles(reference);
    let cor_theta = pearson(&t2, &t1).ok_or(Error::DegenerateCorrelation("theta"))?;
    let cor_phi = pearson(&p2, &p1).ok_or(Error::DegenerateCorrelation("phi"))?;
    let min_norm_sq = traj.iter().map(|n| n.norm_squared()).fold(f64::INFINITY, f64::min);
    Ok(SimilarityScore {
        s: cor_theta * cor_phi * min_norm_sq,
        cor_theta,
        cor_phi,
        min_norm_sq,
    })
}

/// Median of the finite entries; `None` for an empty input.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{ckt_step, from_angles};
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn orbit(ic: BlochPoint, k: f64, steps: usize) -> Vec<BlochPoint> {
        let mut n = ic;
        (0..steps)
            .map(|_| {
                n = ckt_step(n, k, FRAC_PI_2);
                n
            })
            .collect()
    }

    #[test]
    fn distance_examples() {
        let a = orbit(from_angles(1.0, 0.3), 1.5, 20);
        assert_eq!(max_classical_distance(&a, &a).unwrap(), 0.0);
        let up = vec![Vector3::z(); 5];
        let down = vec![-Vector3::z(); 5];
        assert_eq!(max_classical_distance(&up, &down).unwrap(), 2.0);
        assert!(matches!(
            max_classical_distance(&up, &a),
            Err(Error::LengthMismatch { left: 5, right: 20 })
        ));
    }

    #[test]
    fn similarity_examples() {
        let a = orbit(from_angles(1.0, 0.3), 1.5, 30);
        let s = similarity(&a, &a).unwrap();
        assert!((s.s - 1.0).abs() < 1e-12);

        let mut shrunk = a.clone();
        shrunk[7] *= 0.9;
        let s = similarity(&shrunk, &a).unwrap();
        assert!((s.s - 0.81).abs() < 1e-12, "{s:?}");
        assert_eq!(s.s, s.cor_theta * s.cor_phi * s.min_norm_sq);

        let fixed = vec![Vector3::y(); 10];
        assert_eq!(similarity(&fixed, &fixed), Err(Error::DegenerateCorrelation("theta")));
    }

    #[test]
    fn unwrap_removes_branch_cuts() {
        let raw: Vec<f64> = (0..50).map(|i| (0.3 * i as f64 + PI).rem_euclid(2.0 * PI) - PI).collect();
        let un = unwrap_phases(&raw);
        for w in un.windows(2) {
            assert!((w[1] - w[0] - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, f64::NAN, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    fn unit(v: [f64; 3]) -> BlochPoint {
        let n = Vector3::from(v);
        if n.norm() < 1e-3 {
            Vector3::z()
        } else {
            n.normalize()
        }
    }

    fn points(len: usize) -> impl Strategy<Value = Vec<BlochPoint>> {
        prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), len).prop_map(|v| v.into_iter().map(unit).collect())
    }

    proptest! {
        #[test]
        fn distance_is_symmetric_and_triangular((a, b, c) in (points(12), points(12), points(12))) {
            let ab = max_classical_distance(&a, &b).unwrap();
            let ba = max_classical_distance(&b, &a).unwrap();
            let bc = max_classical_distance(&b, &c).unwrap();
            let ac = max_classical_distance(&a, &c).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn similarity_ignores_joint_relabelling(
            (a, b) in (points(15), points(15)),
            perm in Just((0..15usize).collect::<Vec<_>>()).prop_shuffle(),
        ) {
            // unwrapping depends on order; with |φ| < π/2 it never triggers
            let squash = |p: &BlochPoint| {
                let (t, f) = to_angles(p);
                from_angles(t, 0.49 * f)
            };
            let a: Vec<_> = a.iter().map(squash).collect();
            let b: Vec<_> = b.iter().map(squash).collect();
            let pa: Vec<_> = perm.iter().map(|&i| a[i]).collect();
            let pb: Vec<_> = perm.iter().map(|&i| b[i]).collect();
            match (similarity(&a, &b), similarity(&pa, &pb)) {
                (Ok(x), Ok(y)) => prop_assert!((x.s - y.s).abs() < 1e-9),
                (x, y) => prop_assert_eq!(x.is_err(), y.is_err()),
            }
        }
    }
}
