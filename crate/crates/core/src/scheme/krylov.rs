//! Restarted GMRES with right preconditioning.

/// Outcome of a linear solve.
#[derive(Debug, Clone, Copy)]
pub struct GmresStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` from `x = 0` using `A M^{-1} y = b`, `x = M^{-1} y`.
///
/// Stops when `||b - A x|| <= rel_tol ||b||` or after `max_iter` Arnoldi steps.
pub fn gmres(
    apply: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    precondition: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    b: &[f64],
    rel_tol: f64,
    restart: usize,
    max_iter: usize,
) -> (Vec<f64>, GmresStats) {
    let len = b.len();
    let mut x = vec![0.0; len];
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return (
            x,
            GmresStats {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
            },
        );
    }
    let target = rel_tol * b_norm;
    let mut total = 0usize;
    let mut r = b.to_vec();
    loop {
        let beta = norm2(&r);
        if beta <= target || total >= max_iter {
            return (
                x,
                GmresStats {
                    iterations: total,
                    relative_residual: beta / b_norm,
                    converged: beta <= target,
                },
            );
        }
        let m = restart.min(max_iter - total);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        // Hessenberg columns after Givens rotations
        let mut hess: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut cs: Vec<f64> = Vec::with_capacity(m);
        let mut sn: Vec<f64> = Vec::with_capacity(m);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            let z = precondition(&basis[k]);
            let mut w = apply(&z);
            let mut h = vec![0.0; k + 2];
            for (j, v) in basis.iter().enumerate() {
                h[j] = dot(&w, v);
                for (wi, vi) in w.iter_mut().zip(v) {
                    *wi -= h[j] * vi;
                }
            }
            // one reorthogonalisation pass
            for (j, v) in basis.iter().enumerate() {
                let c = dot(&w, v);
                h[j] += c;
                for (wi, vi) in w.iter_mut().zip(v) {
                    *wi -= c * vi;
                }
            }
            h[k + 1] = norm2(&w);
            for j in 0..k {
                let t = cs[j] * h[j] + sn[j] * h[j + 1];
                h[j + 1] = -sn[j] * h[j] + cs[j] * h[j + 1];
                h[j] = t;
            }
            let denom = (h[k] * h[k] + h[k + 1] * h[k + 1]).sqrt();
            let (c, s) = if denom == 0.0 { (1.0, 0.0) } else { (h[k] / denom, h[k + 1] / denom) };
            let next_norm = h[k + 1];
            h[k] = c * h[k] + s * h[k + 1];
            h[k + 1] = 0.0;
            cs.push(c);
            sn.push(s);
            g[k + 1] = -s * g[k];
            g[k] *= c;
            hess.push(h);
            k_used = k + 1;
            total += 1;
            if g[k + 1].abs() <= target || next_norm == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / next_norm).collect());
        }
        // back substitution
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut acc = g[i];
            for j in (i + 1)..k_used {
                acc -= hess[j][i] * y[j];
            }
            y[i] = acc / hess[i][i];
        }
        let mut update = vec![0.0; len];
        for (j, yj) in y.iter().enumerate() {
            for (u, v) in update.iter_mut().zip(&basis[j]) {
                *u += yj * v;
            }
        }
        let dx = precondition(&update);
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        let ax = apply(&x);
        r = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_nonsymmetric_system() {
        let a = [[4.0, 1.0, 0.0], [2.0, 5.0, 1.0], [0.0, -1.0, 3.0]];
        let mut apply = |x: &[f64]| -> Vec<f64> {
            (0..3).map(|i| (0..3).map(|j| a[i][j] * x[j]).sum()).collect()
        };
        let mut ident = |x: &[f64]| x.to_vec();
        let b = [1.0, 2.0, 3.0];
        let (x, stats) = gmres(&mut apply, &mut ident, &b, 1e-14, 10, 50);
        assert!(stats.converged);
        let ax = apply(&x);
        for (p, q) in ax.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn restart_and_diagonal_preconditioner() {
        let n = 40;
        let diag: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let mut apply = |x: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| diag[i] * x[i] + if i + 1 < n { 0.3 * x[i + 1] } else { 0.0 })
                .collect()
        };
        let mut prec = |x: &[f64]| -> Vec<f64> { x.iter().zip(&diag).map(|(v, d)| v / d).collect() };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let (x, stats) = gmres(&mut apply, &mut prec, &b, 1e-12, 5, 400);
        assert!(stats.converged, "{stats:?}");
        let r: f64 = apply(&x).iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(r <= 1e-11 * norm2(&b));
    }
}
