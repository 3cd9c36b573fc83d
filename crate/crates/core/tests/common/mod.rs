#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use qvi_core::linalg::Tridiagonal;

pub fn dense(t: &Tridiagonal<f64>) -> DMatrix<f64> {
    let n = t.dim();
    DMatrix::from_fn(n, n, |i, j| t.get(i, j))
}

/// Brute force over all active sets: solves `min ½uᵀKu - fᵀu` s.t. `u <= ψ`
/// by picking the active set whose KKT point is primal and dual feasible.
pub fn dense_qp(k: &DMatrix<f64>, f: &[f64], psi: &[f64]) -> Vec<f64> {
    let n = f.len();
    assert!(n <= 12, "brute force is exponential");
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << n) {
        let active: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        let mut u = DVector::from_fn(n, |i, _| if active[i] { psi[i] } else { 0.0 });
        if !free.is_empty() {
            let m = free.len();
            let kff = DMatrix::from_fn(m, m, |a, b| k[(free[a], free[b])]);
            let rhs = DVector::from_fn(m, |a, _| {
                let i = free[a];
                f[i] - (0..n)
                    .filter(|&j| active[j])
                    .map(|j| k[(i, j)] * psi[j])
                    .sum::<f64>()
            });
            let uf = kff
                .lu()
                .solve(&rhs)
                .expect("principal submatrix of an M-matrix is regular");
            for (a, &i) in free.iter().enumerate() {
                u[i] = uf[a];
            }
        }
        let mu = DVector::from_column_slice(f) - k * &u;
        let primal = (0..n).map(|i| (u[i] - psi[i]).max(0.0)).fold(0.0, f64::max);
        let dual = (0..n)
            .map(|i| {
                if active[i] {
                    (-mu[i]).max(0.0)
                } else {
                    mu[i].abs()
                }
            })
            .fold(0.0, f64::max);
        let score = primal.max(dual);
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, u.iter().copied().collect()));
        }
    }
    let (score, u) = best.unwrap();
    assert!(score < 1e-9, "no KKT point found, best score {score:e}");
    u
}
