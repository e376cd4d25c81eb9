//! Small dense vector helpers. Steering math works on `f64` slices.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// y += a * x
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Solve the symmetric positive-definite system `m x = rhs` in place by
/// Cholesky factorisation. `m` is row-major `n x n`. Returns `None` when a
/// pivot falls below `pivot_floor` times the largest diagonal entry.
pub fn cholesky_solve(m: &mut [f64], rhs: &mut [f64], n: usize, pivot_floor: f64) -> Option<()> {
    debug_assert_eq!(m.len(), n * n);
    debug_assert_eq!(rhs.len(), n);
    let scale = (0..n).map(|i| m[i * n + i]).fold(0.0f64, f64::max);
    if scale <= 0.0 {
        return None;
    }
    for j in 0..n {
        let mut d = m[j * n + j];
        for k in 0..j {
            d -= m[j * n + k] * m[j * n + k];
        }
        if d <= pivot_floor * scale {
            return None;
        }
        let d = d.sqrt();
        m[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= m[i * n + k] * m[j * n + k];
            }
            m[i * n + j] = s / d;
        }
    }
    // forward: L y = rhs
    for i in 0..n {
        let mut s = rhs[i];
        for k in 0..i {
            s -= m[i * n + k] * rhs[k];
        }
        rhs[i] = s / m[i * n + i];
    }
    // backward: L^T x = y
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for k in (i + 1)..n {
            s -= m[k * n + i] * rhs[k];
        }
        rhs[i] = s / m[i * n + i];
    }
    Some(())
}
