//! Implicit Euler in entropy variables: residual, Jacobian action and Newton.

use log::{debug, warn};

use super::krylov::gmres;
use super::{FluxAverage, ModelParams, SchemeConfig, StepReport};
use crate::error::{Error, Result};
use crate::grid::{laplacian_into, same_grid, FieldSet, TorusGrid};
use crate::spectral::Spectral;

const OVERFLOW: f64 = 700.0;
const MIN_STEP: f64 = 1.0 / 1048576.0;
const GMRES_RESTART: usize = 40;
const GMRES_MAX: usize = 400;

/// Face density and its partial derivatives in the two adjacent cells.
/// `a` is the lower cell, `b` the upper one, `dp` the face difference of `p`.
pub(crate) fn face_density(flux: FluxAverage, a: f64, b: f64, dp: f64) -> (f64, f64, f64) {
    match flux {
        FluxAverage::Arithmetic => (0.5 * (a + b), 0.5, 0.5),
        FluxAverage::Upwind => {
            // velocity is -Dp
            if dp < 0.0 {
                (a, 1.0, 0.0)
            } else {
                (b, 0.0, 1.0)
            }
        }
        FluxAverage::Logarithmic => log_mean(a, b),
    }
}

fn log_mean(a: f64, b: f64) -> (f64, f64, f64) {
    if a <= 0.0 || b <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let l = b.ln() - a.ln();
    if l.abs() < 1e-3 {
        let g = (a * b).sqrt();
        let l2 = l * l;
        let mean = g * (1.0 + l2 / 24.0 + l2 * l2 / 1920.0);
        let da = 0.5 + l / 6.0 + l2 / 24.0;
        let db = 0.5 - l / 6.0 + l2 / 24.0;
        (mean, da, db)
    } else {
        let mean = (b - a) / l;
        ((mean), (mean / a - 1.0) / l, (1.0 - mean / b) / l)
    }
}

/// Neighbour tables along each axis.
pub(crate) struct Stencil {
    pub grid: TorusGrid,
    pub plus: Vec<Vec<usize>>,
    pub minus: Vec<Vec<usize>>,
}

impl Stencil {
    pub fn new(grid: TorusGrid) -> Self {
        let plus = (0..grid.dim())
            .map(|a| (0..grid.len()).map(|i| grid.neighbor(i, a, 1)).collect())
            .collect();
        let minus = (0..grid.dim())
            .map(|a| (0..grid.len()).map(|i| grid.neighbor(i, a, -1)).collect())
            .collect();
        Self { grid, plus, minus }
    }

    /// `div_h(ubar D p)` with face densities from `flux`; adds into `out`.
    pub fn drift_div(&self, u: &[f64], p: &[f64], flux: FluxAverage, out: &mut [f64]) {
        let h = self.grid.cell_size();
        let mut face = vec![0.0; u.len()];
        for axis in 0..self.grid.dim() {
            let plus = &self.plus[axis];
            for (idx, f) in face.iter_mut().enumerate() {
                let j = plus[idx];
                let dp = (p[j] - p[idx]) / h;
                *f = face_density(flux, u[idx], u[j], dp).0 * dp;
            }
            let minus = &self.minus[axis];
            for (idx, o) in out.iter_mut().enumerate() {
                *o += (face[idx] - face[minus[idx]]) / h;
            }
        }
    }
}

/// Frozen data at the Newton linearisation point.
struct Linearization {
    u: Vec<Vec<f64>>,
    /// per species, per axis: face density, partials, face gradient of p
    faces: Vec<Vec<[Vec<f64>; 4]>>,
}

struct Problem<'a> {
    params: &'a ModelParams,
    stencil: Stencil,
    spectral: Spectral,
    tau: f64,
    delta: f64,
    flux: FluxAverage,
    precond: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(grid: TorusGrid, params: &'a ModelParams, config: &SchemeConfig, tau: f64) -> Self {
        let spectral = match &params.kernel {
            Some(k) if *k.grid() == grid => k.spectral().clone(),
            _ => Spectral::new(grid),
        };
        let sigma = params.sigma;
        let precond = spectral
            .stencil_laplacian_eigenvalues()
            .iter()
            .map(|l| 1.0 / (1.0 / tau - sigma * l))
            .collect();
        Self {
            params,
            stencil: Stencil::new(grid),
            spectral,
            tau,
            delta: config.delta_reg,
            flux: config.flux_average,
            precond,
        }
    }

    fn pi(&self, i: usize) -> f64 {
        self.params.pi.get(i)
    }

    fn density(&self, w: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        w.iter()
            .enumerate()
            .map(|(i, wi)| {
                let pi = self.pi(i);
                wi.iter()
                    .map(|&x| {
                        let z = x / pi;
                        if !z.is_finite() {
                            Err(Error::NonFinite)
                        } else if z > OVERFLOW {
                            Err(Error::EntropyVariableOverflow(z))
                        } else {
                            Ok(z.exp())
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Unscaled residual.
    fn residual(&self, u: &[Vec<f64>], u_prev: &[Vec<f64>], w: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let g = &self.stencil.grid;
        let p = self.params.potential_values(u);
        let sigma = self.params.sigma;
        let mut lap = vec![0.0; g.len()];
        (0..u.len())
            .map(|i| {
                let mut drift = vec![0.0; g.len()];
                self.stencil.drift_div(&u[i], &p[i], self.flux, &mut drift);
                laplacian_into(g, &u[i], &mut lap);
                (0..g.len())
                    .map(|x| {
                        (u[i][x] - u_prev[i][x]) / self.tau - sigma * lap[x] - drift[x] + self.delta * w[i][x]
                    })
                    .collect()
            })
            .collect()
    }

    fn linearize(&self, u: &[Vec<f64>]) -> Linearization {
        let g = &self.stencil.grid;
        let h = g.cell_size();
        let p = self.params.potential_values(u);
        let faces = (0..u.len())
            .map(|i| {
                (0..g.dim())
                    .map(|axis| {
                        let plus = &self.stencil.plus[axis];
                        let mut ubar = vec![0.0; g.len()];
                        let mut da = vec![0.0; g.len()];
                        let mut db = vec![0.0; g.len()];
                        let mut dp = vec![0.0; g.len()];
                        for idx in 0..g.len() {
                            let j = plus[idx];
                            dp[idx] = (p[i][j] - p[i][idx]) / h;
                            let (m, a, b) = face_density(self.flux, u[i][idx], u[i][j], dp[idx]);
                            ubar[idx] = m;
                            da[idx] = a;
                            db[idx] = b;
                        }
                        [ubar, da, db, dp]
                    })
                    .collect()
            })
            .collect();
        Linearization { u: u.to_vec(), faces }
    }

    /// Derivative of the residual with respect to `u` applied to `du`.
    fn apply_jacobian(&self, lin: &Linearization, du: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let g = &self.stencil.grid;
        let h = g.cell_size();
        let sigma = self.params.sigma;
        let dpot = self.params.potential_values(du);
        let mut lap = vec![0.0; g.len()];
        let mut face = vec![0.0; g.len()];
        (0..du.len())
            .map(|i| {
                laplacian_into(g, &du[i], &mut lap);
                let pi = self.pi(i);
                let mut out: Vec<f64> = (0..g.len())
                    .map(|x| du[i][x] / self.tau - sigma * lap[x] + self.delta * pi * du[i][x] / lin.u[i][x])
                    .collect();
                for axis in 0..g.dim() {
                    let [ubar, da, db, dp] = &lin.faces[i][axis];
                    let plus = &self.stencil.plus[axis];
                    let minus = &self.stencil.minus[axis];
                    for idx in 0..g.len() {
                        let j = plus[idx];
                        let dubar = da[idx] * du[i][idx] + db[idx] * du[i][j];
                        face[idx] = dubar * dp[idx] + ubar[idx] * (dpot[i][j] - dpot[i][idx]) / h;
                    }
                    for idx in 0..g.len() {
                        out[idx] -= (face[idx] - face[minus[idx]]) / h;
                    }
                }
                out
            })
            .collect()
    }

    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        let len = self.stencil.grid.len();
        let mut out = Vec::with_capacity(r.len());
        for chunk in r.chunks(len) {
            let mut spec = self.spectral.forward_real(chunk);
            for (s, m) in spec.iter_mut().zip(&self.precond) {
                *s *= m;
            }
            out.extend(self.spectral.inverse_real(spec));
        }
        out
    }

    fn scaled_norm(&self, r: &[Vec<f64>]) -> f64 {
        self.tau * r.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

fn split(flat: &[f64], len: usize) -> Vec<Vec<f64>> {
    flat.chunks(len).map(|c| c.to_vec()).collect()
}

fn check_inputs(w: &FieldSet, u_prev: &FieldSet, params: &ModelParams) -> Result<()> {
    same_grid(w.grid(), u_prev.grid())?;
    params.check_state(w)?;
    params.check_state(u_prev)?;
    u_prev.check_nonnegative()
}

/// Residual of the implicit step at entropy variables `w`, without the `tau` scaling.
pub fn residual(w: &FieldSet, u_prev: &FieldSet, params: &ModelParams, config: &SchemeConfig) -> Result<FieldSet> {
    config.validate()?;
    check_inputs(w, u_prev, params)?;
    let prob = Problem::new(*w.grid(), params, config, config.tau);
    let wv = w.to_vecs();
    let u = prob.density(&wv)?;
    Ok(FieldSet::from_raw(*w.grid(), prob.residual(&u, &u_prev.to_vecs(), &wv)))
}

/// Directional derivative of [`residual`] with respect to `w` along `e`.
pub fn jacobian_vector_product(
    w: &FieldSet,
    u_prev: &FieldSet,
    params: &ModelParams,
    config: &SchemeConfig,
    e: &FieldSet,
) -> Result<FieldSet> {
    config.validate()?;
    check_inputs(w, u_prev, params)?;
    same_grid(w.grid(), e.grid())?;
    let prob = Problem::new(*w.grid(), params, config, config.tau);
    let u = prob.density(&w.to_vecs())?;
    let lin = prob.linearize(&u);
    let du: Vec<Vec<f64>> = e
        .to_vecs()
        .iter()
        .enumerate()
        .map(|(i, ei)| ei.iter().zip(&u[i]).map(|(x, ui)| x * ui / prob.pi(i)).collect())
        .collect();
    Ok(FieldSet::from_raw(*w.grid(), prob.apply_jacobian(&lin, &du)))
}

struct Solve {
    u: Vec<Vec<f64>>,
    iters: usize,
    residual: f64,
    linear_iters: usize,
}

fn newton(u_prev: &[Vec<f64>], grid: TorusGrid, params: &ModelParams, config: &SchemeConfig, tau: f64) -> Result<Solve> {
    let prob = Problem::new(grid, params, config, tau);
    let len = grid.len();
    let mut w: Vec<Vec<f64>> = u_prev
        .iter()
        .enumerate()
        .map(|(i, ui)| ui.iter().map(|&v| prob.pi(i) * v.max(config.u_floor).ln()).collect())
        .collect();
    let mut u = prob.density(&w)?;
    let mut r = prob.residual(&u, u_prev, &w);
    let mut norm = prob.scaled_norm(&r);
    let mut linear_iters = 0;
    let mut polish = 0;
    let mass_prev: Vec<f64> = u_prev.iter().map(|ui| ui.iter().sum()).collect();
    for it in 0..=config.newton_max_iter {
        let defect = mass_defect(&r, &mass_prev, tau);
        // a small sup norm still leaves up to len * tol of mass change, so polish that away
        let polished =
            prob.delta > 0.0 || defect <= MASS_DEFECT_TOL || polish >= MAX_POLISH || it == config.newton_max_iter;
        if norm <= config.newton_tol && polished {
            return Ok(Solve {
                u,
                iters: it,
                residual: norm,
                linear_iters,
            });
        }
        if it == config.newton_max_iter || !norm.is_finite() {
            break;
        }
        let lin = prob.linearize(&u);
        let b: Vec<f64> = r.iter().flatten().map(|v| -v).collect();
        let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = (0.1 * config.newton_tol / (tau * b_norm)).clamp(1e-13, 1e-2);
        let (du, stats) = gmres(
            &mut |x: &[f64]| prob.apply_jacobian(&lin, &split(x, len)).concat(),
            &mut |x: &[f64]| prob.precondition(x),
            &b,
            rel,
            GMRES_RESTART,
            GMRES_MAX,
        );
        linear_iters += stats.iterations;
        if !stats.converged {
            debug!("gmres stopped at relative residual {:e}", stats.relative_residual);
        }
        let mut du = du;
        if prob.delta == 0.0 {
            // cell sums of J du are sum(du) / tau, so the mean of du is fixed exactly
            for (chunk, bi) in du.chunks_mut(len).zip(b.chunks(len)) {
                let shift = (tau * bi.iter().sum::<f64>() - chunk.iter().sum::<f64>()) / len as f64;
                chunk.iter_mut().for_each(|v| *v += shift);
            }
        }
        let dw: Vec<Vec<f64>> = split(&du, len)
            .iter()
            .enumerate()
            .map(|(i, d)| d.iter().zip(&u[i]).map(|(x, ui)| prob.pi(i) * x / ui).collect())
            .collect();
        let mut s = 1.0;
        let mut accepted = false;
        while s >= MIN_STEP {
            let trial: Vec<Vec<f64>> = w
                .iter()
                .zip(&dw)
                .map(|(wi, di)| wi.iter().zip(di).map(|(a, b)| a + s * b).collect())
                .collect();
            if let Ok(ut) = prob.density(&trial) {
                let rt = prob.residual(&ut, u_prev, &trial);
                let nt = prob.scaled_norm(&rt);
                let improves = if norm <= config.newton_tol {
                    nt <= config.newton_tol && mass_defect(&rt, &mass_prev, tau) < defect
                } else {
                    nt <= (1.0 - 1e-4 * s) * norm
                };
                if improves {
                    w = trial;
                    u = ut;
                    r = rt;
                    norm = nt;
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if norm <= config.newton_tol {
            polish += 1;
            if !accepted {
                polish = MAX_POLISH;
            }
            continue;
        }
        if !accepted {
            return Err(Error::NewtonDivergence {
                residual: norm,
                iterations: it + 1,
            });
        }
    }
    Err(Error::NewtonDivergence {
        residual: norm,
        iterations: config.newton_max_iter,
    })
}

const MASS_DEFECT_TOL: f64 = 1e-14;
const MAX_POLISH: usize = 2;

fn mass_defect(r: &[Vec<f64>], mass_prev: &[f64], tau: f64) -> f64 {
    r.iter()
        .zip(mass_prev)
        .map(|(ri, m)| tau * ri.iter().sum::<f64>().abs() / m.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Newton solve with one automatic retry as two half steps.
pub(super) fn step_with_retry(
    u_prev: &FieldSet,
    params: &ModelParams,
    config: &SchemeConfig,
) -> Result<(FieldSet, StepReport)> {
    let grid = *u_prev.grid();
    let prev = u_prev.to_vecs();
    let finish = |s: Solve, iters: usize, lin: usize, retried: bool| {
        let rep = StepReport {
            newton_iters: iters,
            residual_norm: s.residual,
            accepted: true,
            retried,
            linear_iters: lin,
            ..Default::default()
        };
        (FieldSet::from_raw(grid, s.u), rep)
    };
    match newton(&prev, grid, params, config, config.tau) {
        Ok(s) => {
            let (it, lin) = (s.iters, s.linear_iters);
            Ok(finish(s, it, lin, false))
        }
        Err(e @ (Error::NewtonDivergence { .. } | Error::EntropyVariableOverflow(_))) => {
            warn!("newton failed ({e}); retrying with two half steps");
            let half = 0.5 * config.tau;
            let first = newton(&prev, grid, params, config, half)?;
            let second = newton(&first.u, grid, params, config, half)?;
            let it = first.iters + second.iters;
            let lin = first.linear_iters + second.linear_iters;
            Ok(finish(second, it, lin, true))
        }
        Err(e) => Err(e),
    }
}
