//! Top-2 heuristic: keep only the (at most) two most violated rows and solve
//! the two-constraint filter in closed form.
//!
//! With `a_i = grad b_i`, the problem `min |w|^2 s.t. a_i . w >= r_i`, where
//! `w = u - u_nom` and `r_i = -(a_i . u_nom + alpha (b_i - delta))`, has the
//! solution `w = mu_1 a_1 + mu_2 a_2`, `mu >= 0`, picked from three cases over
//! the Gram matrix `G_ij = a_i . a_j`:
//!
//! * only row 2 binds: `G21 [r2]+ >= G22 r1`  =>  `mu = (0, [r2]+ / G22)`
//! * only row 1 binds: `G12 [r1]+ >= G11 r2`  =>  `mu = ([r1]+ / G11, 0)`
//! * both bind: `mu = G^-1 r`
//!
//! In the `g = -a`, `h_hat = -r` notation (constraints `g_i . w <= h_hat_i`)
//! this is `u = u_nom - l1 g1 - l2 g2` with `l_i = mu_i >= 0`.

use serde::Serialize;

use super::{ConstraintRow, Correction};
use crate::linalg::{axpy, dot, norm};
use crate::types::SteeringConfig;

/// Intermediate quantities of the two-row closed form, in the `g = -grad b`
/// convention.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedFormIntermediates {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    /// `alpha (b_i - delta)`
    pub h1: f64,
    pub h2: f64,
    /// The unconstrained minimiser, `u_nom`.
    pub u_hat: Vec<f64>,
    /// `h_i - g_i . u_hat`; negative when the row is violated at `u_nom`.
    pub h1_hat: f64,
    pub h2_hat: f64,
    /// Row-major 2x2 Gram matrix of `g1, g2`.
    pub gram: [f64; 4],
    /// KKT multipliers, `u = u_hat - lambda1 g1 - lambda2 g2`.
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Indices of the (at most two) rows the closed form solves over. Rows that
/// fail at `u_nom` come first, by ascending margin `b_k - delta`; if exactly
/// one fails, the lowest-margin satisfied row is added as its partner so the
/// correction cannot push through it. Empty when nothing fails. Ties go to
/// the lower index.
pub fn select_top2(rows: &[ConstraintRow], u_nom: &[f64], alpha: f64) -> Vec<usize> {
    let (mut failing, mut passing): (Vec<usize>, Vec<usize>) =
        (0..rows.len()).partition(|&i| rows[i].lhs(u_nom, alpha) < 0.0);
    if failing.is_empty() {
        return failing;
    }
    // stable sorts keep index order on equal margins
    failing.sort_by(|&a, &b| rows[a].margin().total_cmp(&rows[b].margin()));
    passing.sort_by(|&a, &b| rows[a].margin().total_cmp(&rows[b].margin()));
    failing.extend(passing);
    failing.truncate(2);
    failing
}

/// Single-row projection `u_nom + [-(a.u_nom + alpha m)]+ / |a|^2 a`.
/// Returns the multiplier.
pub(crate) fn single_row(grad: &[f64], margin: f64, u_nom: &[f64], alpha: f64, out: &mut [f64]) -> f64 {
    let lhs = dot(grad, u_nom) + alpha * margin;
    out.copy_from_slice(u_nom);
    if lhs >= 0.0 {
        return 0.0;
    }
    let mu = -lhs / dot(grad, grad);
    axpy(mu, grad, out);
    mu
}

/// Closed form for two rows. Returns `None` in the both-active case when the
/// Gram determinant is below `floor * G11 * G22`.
pub fn two_row_closed_form(
    r1: &ConstraintRow,
    r2: &ConstraintRow,
    u_nom: &[f64],
    alpha: f64,
    floor: f64,
) -> Option<ClosedFormIntermediates> {
    let g1: Vec<f64> = r1.gradient.iter().map(|v| -v).collect();
    let g2: Vec<f64> = r2.gradient.iter().map(|v| -v).collect();
    let h1 = alpha * r1.margin();
    let h2 = alpha * r2.margin();
    let h1_hat = h1 - dot(&g1, u_nom);
    let h2_hat = h2 - dot(&g2, u_nom);
    let g11 = dot(&g1, &g1);
    let g12 = dot(&g1, &g2);
    let g22 = dot(&g2, &g2);
    // required increase along a_i
    let (v1, v2) = (-h1_hat, -h2_hat);
    let (mu1, mu2) = if g12 * v2.max(0.0) - g22 * v1 >= 0.0 {
        (0.0, v2.max(0.0) / g22)
    } else if g12 * v1.max(0.0) - g11 * v2 >= 0.0 {
        (v1.max(0.0) / g11, 0.0)
    } else {
        let det = g11 * g22 - g12 * g12;
        if det < floor * g11 * g22 {
            return None;
        }
        (
            ((g22 * v1 - g12 * v2) / det).max(0.0),
            ((g11 * v2 - g12 * v1) / det).max(0.0),
        )
    };
    Some(ClosedFormIntermediates {
        g1,
        g2,
        h1,
        h2,
        u_hat: u_nom.to_vec(),
        h1_hat,
        h2_hat,
        gram: [g11, g12, g12, g22],
        lambda1: mu1,
        lambda2: mu2,
    })
}

/// Filter restricted to the rows chosen by [`select_top2`].
pub fn steer_top2(rows: &[ConstraintRow], u_nom: &[f64], config: &SteeringConfig) -> Correction {
    let k = rows.len();
    let mut selected = select_top2(rows, u_nom, config.alpha);
    let before = selected.len();
    selected.retain(|&i| norm(&rows[i].gradient) >= config.grad_floor);
    let mut fallback = selected.len() != before;

    let mut mu = vec![0.0; k];
    let mut u = vec![0.0; u_nom.len()];
    match selected.as_slice() {
        [] => {
            return Correction {
                fallback,
                ..Correction::passthrough(u_nom, k)
            }
        }
        [i] => {
            mu[*i] = single_row(&rows[*i].gradient, rows[*i].margin(), u_nom, config.alpha, &mut u);
        }
        [i, j] => match two_row_closed_form(&rows[*i], &rows[*j], u_nom, config.alpha, config.grad_floor) {
            Some(cf) => {
                u.copy_from_slice(u_nom);
                axpy(-cf.lambda1, &cf.g1, &mut u);
                axpy(-cf.lambda2, &cf.g2, &mut u);
                mu[*i] = cf.lambda1;
                mu[*j] = cf.lambda2;
            }
            None => {
                // near-parallel gradients: keep the most violated row only
                fallback = true;
                mu[*i] = single_row(&rows[*i].gradient, rows[*i].margin(), u_nom, config.alpha, &mut u);
            }
        },
        _ => unreachable!("at most two rows are selected"),
    }
    let mut c = Correction::from_multipliers(u, mu, fallback);
    c.active.sort_unstable();
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(g: &[f64], v: f64) -> ConstraintRow {
        ConstraintRow {
            gradient: g.to_vec(),
            value: v,
            threshold: 0.0,
        }
    }

    fn cfg(alpha: f64) -> SteeringConfig {
        SteeringConfig {
            alpha,
            ..SteeringConfig::default()
        }
    }

    #[test]
    fn selection_orders_by_margin() {
        // u_nom = 0 and small alpha: exactly the negative margins fail
        let rows = [row(&[1.0], 0.5), row(&[1.0], -0.2), row(&[1.0], -0.7), row(&[1.0], 0.1)];
        assert_eq!(select_top2(&rows, &[0.0], 0.01), vec![2, 1]);
    }

    #[test]
    fn selection_empty_when_all_pass() {
        let rows = [row(&[1.0], 0.5), row(&[1.0], 0.1)];
        assert!(select_top2(&rows, &[0.0], 0.3).is_empty());
    }

    #[test]
    fn selection_tie_goes_to_lower_index() {
        let rows = [row(&[1.0], -0.2), row(&[1.0], -0.2)];
        assert_eq!(select_top2(&rows, &[0.0], 1.0), vec![0, 1]);
    }

    #[test]
    fn zero_rows_selected_passes_through() {
        let rows = [row(&[0.0, 1.0], 1.0)];
        let c = steer_top2(&rows, &[0.2, 0.1], &cfg(1.0));
        assert_eq!(c.u, vec![0.2, 0.1]);
        assert!(!c.fallback);
    }

    #[test]
    fn one_row_reduces_to_projection() {
        let c = steer_top2(&[row(&[0.0, 1.0], 0.5)], &[0.0, -1.0], &cfg(1.0));
        assert_eq!(c.u, vec![0.0, -0.5]);
    }

    #[test]
    fn orthogonal_half_spaces_decouple() {
        // b1 = h_x, b2 = h_y at (0.5, 0.5), u_nom = (-1, -1), alpha = 1
        let rows = [row(&[1.0, 0.0], 0.5), row(&[0.0, 1.0], 0.5)];
        let c = steer_top2(&rows, &[-1.0, -1.0], &cfg(1.0));
        assert_eq!(c.u, vec![-0.5, -0.5]);
        assert_eq!(c.active, vec![0, 1]);
    }

    #[test]
    fn intermediates_are_consistent() {
        let r1 = row(&[1.0, 0.2], -0.1);
        let r2 = row(&[0.3, 1.0], 0.05);
        let cf = two_row_closed_form(&r1, &r2, &[-1.0, -0.5], 0.5, 1e-12).unwrap();
        assert_eq!(cf.gram[1], cf.gram[2]);
        assert!(cf.gram[0] >= 0.0 && cf.gram[3] >= 0.0);
        assert!(cf.lambda1 >= 0.0 && cf.lambda2 >= 0.0);
        assert_eq!(cf.g1, vec![-1.0, -0.2]);
        assert!((cf.h1 - (-0.05)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_row_is_dropped() {
        let rows = [row(&[0.0, 0.0], -1.0), row(&[0.0, 1.0], 0.5)];
        let c = steer_top2(&rows, &[0.0, -1.0], &cfg(1.0));
        assert!(c.fallback);
        assert_eq!(c.u, vec![0.0, -0.5]);
    }

    #[test]
    fn parallel_gradients_fall_back_to_most_violated() {
        // same direction, both need the both-active case only if det > 0
        let rows = [row(&[1.0, 0.0], -0.5), row(&[-1.0, 0.0], -0.5)];
        let c = steer_top2(&rows, &[0.0, 0.0], &cfg(1.0));
        assert!(c.fallback);
        assert_eq!(c.u, vec![0.5, 0.0]);
    }
}
