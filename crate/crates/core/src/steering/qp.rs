//! Minimal-intervention filter with all constraint rows:
//!
//! ```text
//! min |u - u_nom|^2   s.t.   grad_k . u + alpha (b_k - delta) >= 0   for all k
//! ```
//!
//! Small problems (K <= 12) are solved exactly by enumerating active sets.
//! Larger ones use Hildreth's dual coordinate ascent.

use super::{ConstraintRow, Correction};
use crate::linalg::{axpy, cholesky_solve, dot};
use crate::types::SteeringConfig;

/// Largest K solved by active-set enumeration.
pub const ENUMERATION_LIMIT: usize = 12;

const MAX_SWEEPS: usize = 20_000;

struct Problem<'a> {
    rows: &'a [ConstraintRow],
    u_nom: &'a [f64],
    /// Right-hand sides: grad_k . u >= rhs_k
    rhs: Vec<f64>,
    /// grad_k . u_nom
    a_u: Vec<f64>,
    gram: Vec<f64>,
    tol: f64,
}

impl<'a> Problem<'a> {
    fn new(rows: &'a [ConstraintRow], u_nom: &'a [f64], config: &SteeringConfig) -> Self {
        let k = rows.len();
        let rhs = rows.iter().map(|r| -config.alpha * r.margin()).collect();
        let a_u = rows.iter().map(|r| dot(&r.gradient, u_nom)).collect();
        let mut gram = vec![0.0; k * k];
        for i in 0..k {
            for j in i..k {
                let g = dot(&rows[i].gradient, &rows[j].gradient);
                gram[i * k + j] = g;
                gram[j * k + i] = g;
            }
        }
        Self {
            rows,
            u_nom,
            rhs,
            a_u,
            gram,
            tol: config.qp_tol,
        }
    }

    fn k(&self) -> usize {
        self.rows.len()
    }

    /// Residual of row `i` at `u_nom + sum_j mu_j grad_j`, using cached products.
    fn residual(&self, i: usize, mu: &[f64]) -> f64 {
        let k = self.k();
        let mut v = self.a_u[i] - self.rhs[i];
        for (j, m) in mu.iter().enumerate() {
            if *m != 0.0 {
                v += m * self.gram[i * k + j];
            }
        }
        v
    }

    fn slack(&self, i: usize) -> f64 {
        self.tol * (1.0 + self.rhs[i].abs() + self.a_u[i].abs())
    }

    fn control(&self, mu: &[f64]) -> Vec<f64> {
        let mut u = self.u_nom.to_vec();
        for (row, &m) in self.rows.iter().zip(mu) {
            if m != 0.0 {
                axpy(m, &row.gradient, &mut u);
            }
        }
        u
    }

    /// Multipliers with the rows in `set` held at equality, or `None` when
    /// their gradients are (numerically) dependent.
    fn equality_multipliers(&self, set: &[usize], pivot_floor: f64) -> Option<Vec<f64>> {
        let k = self.k();
        let n = set.len();
        let mut g = vec![0.0; n * n];
        let mut b = vec![0.0; n];
        for (p, &i) in set.iter().enumerate() {
            for (q, &j) in set.iter().enumerate() {
                g[p * n + q] = self.gram[i * k + j];
            }
            b[p] = self.rhs[i] - self.a_u[i];
        }
        cholesky_solve(&mut g, &mut b, n, pivot_floor)?;
        let mut mu = vec![0.0; k];
        for (p, &i) in set.iter().enumerate() {
            mu[i] = b[p];
        }
        Some(mu)
    }

    fn max_violation(&self, mu: &[f64]) -> f64 {
        (0..self.k())
            .map(|i| (-self.residual(i, mu)).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Solve the filter over all `rows`. Passes `u_nom` through unchanged when it
/// already satisfies every row.
pub fn steer_qp(rows: &[ConstraintRow], u_nom: &[f64], config: &SteeringConfig) -> Correction {
    let p = Problem::new(rows, u_nom, config);
    let k = p.k();
    if (0..k).all(|i| p.a_u[i] >= p.rhs[i]) {
        return Correction::passthrough(u_nom, k);
    }
    if k <= ENUMERATION_LIMIT {
        enumerate(&p, config)
    } else {
        hildreth(&p, config)
    }
}

fn enumerate(p: &Problem, config: &SteeringConfig) -> Correction {
    let k = p.k();
    let dim = p.u_nom.len();
    let pivot_floor = config.grad_floor.max(1e-13);
    let mut best_fallback: Option<(f64, f64, Vec<f64>)> = None;
    let mut set = Vec::with_capacity(k);
    for size in 1..=k.min(dim) {
        let mut found: Option<Vec<f64>> = None;
        for_each_subset(k, size, &mut set, &mut |set| {
            let Some(mu) = p.equality_multipliers(set, pivot_floor) else {
                return false;
            };
            let dual_ok = set.iter().all(|&i| mu[i] >= -p.tol);
            let primal_ok = (0..k).all(|i| p.residual(i, &mu) >= -p.slack(i));
            if dual_ok && primal_ok {
                found = Some(mu);
                return true;
            }
            if dual_ok {
                let viol = p.max_violation(&mu);
                let dist: f64 = set.iter().map(|&i| mu[i] * mu[i] * p.gram[i * k + i]).sum();
                let better = match &best_fallback {
                    None => true,
                    Some((v, d, _)) => viol < *v || (viol == *v && dist < *d),
                };
                if better {
                    best_fallback = Some((viol, dist, mu));
                }
            }
            false
        });
        if let Some(mut mu) = found {
            for m in mu.iter_mut() {
                *m = m.max(0.0);
            }
            return Correction::from_multipliers(p.control(&mu), mu, false);
        }
    }
    // no KKT point: the rows cannot all hold
    let mu = match best_fallback {
        Some((v, _, mu)) if v < p.max_violation(&vec![0.0; k]) => mu,
        _ => vec![0.0; k],
    };
    let mut c = Correction::from_multipliers(p.control(&mu), mu, true);
    c.infeasible = true;
    c
}

/// Visit k-choose-size index sets in lexicographic order; stop when `f` returns true.
fn for_each_subset(k: usize, size: usize, set: &mut Vec<usize>, f: &mut dyn FnMut(&[usize]) -> bool) -> bool {
    fn rec(start: usize, k: usize, size: usize, set: &mut Vec<usize>, f: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        if set.len() == size {
            return f(set);
        }
        let need = size - set.len();
        for i in start..=(k - need) {
            set.push(i);
            if rec(i + 1, k, size, set, f) {
                set.pop();
                return true;
            }
            set.pop();
        }
        false
    }
    set.clear();
    rec(0, k, size, set, f)
}

fn hildreth(p: &Problem, config: &SteeringConfig) -> Correction {
    let k = p.k();
    let floor_sq = config.grad_floor * config.grad_floor;
    let mut mu = vec![0.0; k];
    // residuals at the current multipliers
    let mut res: Vec<f64> = (0..k).map(|i| p.a_u[i] - p.rhs[i]).collect();
    let mut degenerate = false;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        for i in 0..k {
            let gii = p.gram[i * k + i];
            if gii < floor_sq {
                if res[i] < -p.slack(i) {
                    degenerate = true;
                }
                continue;
            }
            let new = (mu[i] - res[i] / gii).max(0.0);
            let delta = new - mu[i];
            if delta != 0.0 {
                mu[i] = new;
                for (j, r) in res.iter_mut().enumerate() {
                    *r += delta * p.gram[j * k + i];
                }
            }
        }
        // primal violation, and the complementarity gap on rows with mu > 0
        let worst = (0..k)
            .filter(|&i| p.gram[i * k + i] >= floor_sq)
            .map(|i| {
                let gap = if mu[i] > 0.0 { res[i].abs() } else { -res[i] };
                gap - p.slack(i)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        if worst <= 0.0 {
            converged = true;
            break;
        }
    }
    let mut c = Correction::from_multipliers(p.control(&mu), mu, degenerate || !converged);
    c.infeasible = !converged;
    c
}
