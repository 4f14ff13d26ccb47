//! FFT plans for a torus grid.
//!
//! Forward transforms are unnormalised; `inverse` divides by `N^d`. Wavenumbers
//! follow the usual layout: index `k <= N/2` is mode `k`, larger indices are
//! `k - N`. Index `N/2` is the Nyquist mode.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::TorusGrid;

#[derive(Clone)]
pub struct Spectral {
    grid: TorusGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: TorusGrid) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid,
            forward: planner.plan_fft_forward(grid.cells()),
            inverse: planner.plan_fft_inverse(grid.cells()),
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.forward);
        buf
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.forward);
    }

    /// Normalised inverse transform, keeping the real part.
    pub fn inverse_real(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut buf, &self.inverse);
        let scale = 1.0 / self.grid.len() as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.grid.cells();
        debug_assert_eq!(buf.len(), self.grid.len());
        match self.grid.dim() {
            1 => plan.process(buf),
            _ => {
                // rows (contiguous), then columns through a scratch copy
                plan.process(buf);
                let mut col = vec![Complex64::new(0.0, 0.0); n];
                for j in 0..n {
                    for i in 0..n {
                        col[i] = buf[i * n + j];
                    }
                    plan.process(&mut col);
                    for i in 0..n {
                        buf[i * n + j] = col[i];
                    }
                }
            }
        }
    }

    /// Signed wavenumber of an index along one axis.
    pub fn wavenumber(&self, k: usize) -> i64 {
        let n = self.grid.cells();
        if k <= n / 2 {
            k as i64
        } else {
            k as i64 - n as i64
        }
    }

    /// Signed wavenumbers `(k0, k1)` of a flat spectral index.
    pub fn mode(&self, idx: usize) -> [i64; 2] {
        let c = self.grid.coords(idx);
        let mut m = [0; 2];
        for axis in 0..self.grid.dim() {
            m[axis] = self.wavenumber(c[axis]);
        }
        m
    }

    pub fn is_nyquist(&self, k: usize) -> bool {
        k == self.grid.cells() / 2
    }

    /// Multiplier of the spectral derivative along `axis`; the Nyquist mode is zeroed.
    pub fn derivative_multipliers(&self, axis: usize) -> Vec<Complex64> {
        let g = self.grid;
        let two_pi_l = 2.0 * std::f64::consts::PI / g.period();
        (0..g.len())
            .map(|idx| {
                let k = g.coords(idx)[axis];
                if self.is_nyquist(k) {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, two_pi_l * self.wavenumber(k) as f64)
                }
            })
            .collect()
    }

    /// Multiplier `-|2 pi xi / L|^2` of the spectral Laplacian.
    pub fn laplacian_multipliers(&self) -> Vec<f64> {
        let g = self.grid;
        let two_pi_l = 2.0 * std::f64::consts::PI / g.period();
        (0..g.len())
            .map(|idx| {
                let m = self.mode(idx);
                -(0..g.dim())
                    .map(|a| (two_pi_l * m[a] as f64).powi(2))
                    .sum::<f64>()
            })
            .collect()
    }

    /// Eigenvalues of the finite-difference Laplacian stencil, `-4/h^2 sum sin^2(pi k / N)`.
    pub fn stencil_laplacian_eigenvalues(&self) -> Vec<f64> {
        let g = self.grid;
        let n = g.cells() as f64;
        let h = g.cell_size();
        (0..g.len())
            .map(|idx| {
                let c = g.coords(idx);
                -(0..g.dim())
                    .map(|a| {
                        let s = (std::f64::consts::PI * c[a] as f64 / n).sin();
                        4.0 * s * s / (h * h)
                    })
                    .sum::<f64>()
            })
            .collect()
    }

    /// Applies a diagonal spectral multiplier to a real field.
    pub fn apply_multiplier(&self, values: &[f64], mult: &[Complex64]) -> Vec<f64> {
        let mut spec = self.forward_real(values);
        for (s, m) in spec.iter_mut().zip(mult) {
            *s *= m;
        }
        self.inverse_real(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Field;
    use std::f64::consts::PI;

    #[test]
    fn round_trip_2d() {
        let g = TorusGrid::new(2, 16, 1.0).unwrap();
        let s = Spectral::new(g);
        let f = Field::from_fn(g, |x| (x[0] * 3.0).sin() + x[1] * x[1]);
        let back = s.inverse_real(s.forward_real(f.values()));
        for (a, b) in back.iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn spectral_derivative_of_resolved_mode_is_exact() {
        let g = TorusGrid::new(2, 16, 2.0).unwrap();
        let s = Spectral::new(g);
        let f = Field::from_fn(g, |x| (PI * x[0]).sin() * (2.0 * PI * x[1]).cos());
        let d1 = s.apply_multiplier(f.values(), &s.derivative_multipliers(1));
        let exact = Field::from_fn(g, |x| -2.0 * PI * (PI * x[0]).sin() * (2.0 * PI * x[1]).sin());
        for (a, b) in d1.iter().zip(exact.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stencil_eigenvalues_match_fd_laplacian() {
        let g = TorusGrid::new(1, 32, 1.0).unwrap();
        let s = Spectral::new(g);
        let f = Field::from_fn(g, |x| (6.0 * PI * x[0]).cos());
        let lap = crate::grid::laplacian(&f);
        let eig = s.stencil_laplacian_eigenvalues();
        for (a, b) in lap.values().iter().zip(f.values()) {
            assert!((a - eig[3] * b).abs() < 1e-9);
        }
    }
}
