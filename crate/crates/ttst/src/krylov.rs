//! Restarted GMRES for the matrix-free and local solves.

use nalgebra::DVector;

pub(crate) struct GmresOutcome {
    pub x: DVector<f64>,
    pub rel_residual: f64,
    pub converged: bool,
    #[allow(dead_code)]
    pub iterations: usize,
}

/// GMRES(m) with Givens rotations. `apply` is the operator action; the
/// caller handles any preconditioning by wrapping `apply` and `b`.
pub(crate) fn gmres(
    apply: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    x0: Option<&DVector<f64>>,
    tol: f64,
    restart: usize,
    max_outer: usize,
) -> GmresOutcome {
    let n = b.len();
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return GmresOutcome {
            x: DVector::zeros(n),
            rel_residual: 0.0,
            converged: true,
            iterations: 0,
        };
    }
    let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut total_iters = 0;
    let mut rel;
    for _ in 0..max_outer {
        let r = b - apply(&x);
        let beta = r.norm();
        rel = beta / b_norm;
        if rel <= tol {
            return GmresOutcome {
                x,
                rel_residual: rel,
                converged: true,
                iterations: total_iters,
            };
        }
        let m = restart.min(n);
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m + 1);
        basis.push(&r / beta);
        // Hessenberg columns, Givens rotations, residual vector g.
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            total_iters += 1;
            let mut w = apply(&basis[k]);
            for (i, v) in basis.iter().enumerate() {
                let hik = w.dot(v);
                h[i][k] = hik;
                w.axpy(-hik, v, 1.0);
            }
            let wn = w.norm();
            h[k + 1][k] = wn;
            // Apply previous rotations to the new column.
            for i in 0..k {
                let tmp = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = tmp;
            }
            let denom = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if denom == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            rel = g[k + 1].abs() / b_norm;
            if rel <= tol || wn == 0.0 {
                break;
            }
            basis.push(w / wn);
        }
        // Back-substitute the triangular system for the update.
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            x.axpy(*yi, &basis[i], 1.0);
        }
        if rel <= tol {
            return GmresOutcome {
                x,
                rel_residual: rel,
                converged: true,
                iterations: total_iters,
            };
        }
    }
    let r = b - apply(&x);
    rel = r.norm() / b_norm;
    GmresOutcome {
        x,
        rel_residual: rel,
        converged: rel <= tol,
        iterations: total_iters,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solves_shifted_random_system() {
        let n = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let a = DMatrix::from_fn(n, n, |i, j| {
            let base: f64 = rng.gen_range(-0.5..0.5);
            if i == j {
                base + 4.0
            } else {
                base
            }
        });
        let x_true = DVector::from_fn(n, |i, _| (i as f64 * 0.1).sin());
        let b = &a * &x_true;
        let out = gmres(&|v| &a * v, &b, None, 1e-12, 30, 10);
        assert!(out.converged, "rel={}", out.rel_residual);
        assert!((out.x - x_true).norm() <= 1e-9);
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let out = gmres(&|v| v.clone(), &DVector::zeros(5), None, 1e-10, 5, 3);
        assert!(out.converged);
        assert_eq!(out.x, DVector::zeros(5));
    }
}
