//! Brute-force references shared by the oracle suites.

#![allow(dead_code)]

use nalgebra::DMatrix;

/// Cyclic Jacobi rotations until the off-diagonal mass vanishes.
pub fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Every 1-based `e` in `1..=e_max` whose gap is within `tol` of the largest.
pub fn largest_gaps(eigenvalues: &[f64], e_max: usize, tol: f64) -> Vec<usize> {
    let gaps: Vec<f64> = (1..=e_max).map(|e| eigenvalues[e] - eigenvalues[e - 1]).collect();
    let best = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (1..=e_max).filter(|&e| gaps[e - 1] >= best - tol).collect()
}
