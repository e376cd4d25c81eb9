//! Shared test helpers: an independent QP oracle and instance generators.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use barrier_steer::steering::ConstraintRow;

/// `min 0.5 |u - u_nom|^2  s.t.  g_k . u + alpha (b_k - delta) >= 0`, solved by
/// enumerating every active set with nalgebra and keeping the feasible KKT
/// point of least cost. Returns `None` if no subset is feasible.
pub fn qp_oracle(rows: &[ConstraintRow], u_nom: &[f64], alpha: f64) -> Option<Vec<f64>> {
    let k = rows.len();
    let d = u_nom.len();
    let un = DVector::from_column_slice(u_nom);
    let a = DMatrix::from_fn(k, d, |i, j| rows[i].gradient[j]);
    let c = DVector::from_fn(k, |i, _| -alpha * (rows[i].value - rows[i].threshold));
    let feasible = |u: &DVector<f64>| (0..k).all(|i| a.row(i).dot(&u.transpose()) >= c[i] - 1e-9 * (1.0 + c[i].abs()));
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << k) {
        let idx: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let u = if idx.is_empty() {
            un.clone()
        } else {
            let as_ = DMatrix::from_fn(idx.len(), d, |r, j| a[(idx[r], j)]);
            let g = &as_ * as_.transpose();
            let rhs = DVector::from_fn(idx.len(), |r, _| c[idx[r]]) - &as_ * &un;
            let Some(lam) = g.clone().lu().solve(&rhs) else {
                continue;
            };
            if (&g * &lam - &rhs).norm() > 1e-8 * (1.0 + rhs.norm()) {
                continue;
            }
            if lam.iter().any(|&l| l < -1e-10) {
                continue;
            }
            &un + as_.transpose() * lam
        };
        if !feasible(&u) {
            continue;
        }
        let cost = (&u - &un).norm_squared();
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, u));
        }
    }
    best.map(|(_, u)| u.as_slice().to_vec())
}

pub fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// `k` rows in dimension `d` that a random control strictly satisfies, and a
/// nominal control that typically violates several of them.
pub fn feasible_instance(
    rng: &mut ChaCha8Rng,
    k: usize,
    d: usize,
    alpha: f64,
    delta: f64,
) -> (Vec<ConstraintRow>, Vec<f64>) {
    let u0 = gaussian(rng, d);
    let rows = (0..k)
        .map(|_| {
            let g = gaussian(rng, d);
            let slack = rng.gen_range(0.05..1.0);
            let gu: f64 = g.iter().zip(&u0).map(|(a, b)| a * b).sum();
            ConstraintRow {
                gradient: g,
                value: delta + (slack - gu) / alpha,
                threshold: delta,
            }
        })
        .collect();
    let scale = rng.gen_range(0.5..4.0);
    let u_nom = gaussian(rng, d).into_iter().map(|x| x * scale).collect();
    (rows, u_nom)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
