//! Semi-implicit step: explicit upwind drift followed by an implicit diffusion solve.

use log::warn;

use super::implicit::Stencil;
use super::{FluxAverage, ModelParams, SchemeConfig, StepReport};
use crate::error::{Error, Result};
use crate::grid::FieldSet;
use crate::spectral::Spectral;

const MAX_SUBSTEPS: usize = 100_000;

fn max_face_gradient(stencil: &Stencil, p: &[Vec<f64>]) -> f64 {
    let h = stencil.grid.cell_size();
    let mut m = 0.0_f64;
    for pi in p {
        for plus in &stencil.plus {
            for (idx, &j) in plus.iter().enumerate() {
                m = m.max((pi[j] - pi[idx]).abs() / h);
            }
        }
    }
    m
}

pub(super) fn step(u_prev: &FieldSet, params: &ModelParams, config: &SchemeConfig) -> Result<(FieldSet, StepReport)> {
    let grid = *u_prev.grid();
    let stencil = Stencil::new(grid);
    let spectral = match &params.kernel {
        Some(k) if *k.grid() == grid => k.spectral().clone(),
        _ => Spectral::new(grid),
    };
    let eig = spectral.stencil_laplacian_eigenvalues();
    let h = grid.cell_size();
    let vol = grid.cell_volume();
    let mut u = u_prev.to_vecs();
    let mut remaining = config.tau;
    let mut substeps = 0;
    let mut clipped = 0.0;
    while remaining > 1e-14 * config.tau {
        let p = params.potential_values(&u);
        let g = max_face_gradient(&stencil, &p);
        let limit = if g > 0.0 { h / (2.0 * g) } else { f64::INFINITY };
        let mut dt = remaining;
        if dt > limit {
            if substeps == 0 {
                if config.cfl_fatal {
                    return Err(Error::CflViolation { tau: dt, limit });
                }
                warn!("CFL bound violated (tau = {dt:e}, limit = {limit:e}); substepping");
            }
            dt = limit;
        }
        substeps += 1;
        if substeps > MAX_SUBSTEPS {
            return Err(Error::CflViolation { tau: dt, limit });
        }
        let symbols: Vec<f64> = eig.iter().map(|l| 1.0 / (1.0 - params.sigma * dt * l)).collect();
        for (ui, pi) in u.iter_mut().zip(&p) {
            let mut div = vec![0.0; grid.len()];
            stencil.drift_div(ui, pi, FluxAverage::Upwind, &mut div);
            for (v, d) in ui.iter_mut().zip(&div) {
                *v += dt * d;
                if *v < 0.0 {
                    clipped -= *v * vol;
                    *v = 0.0;
                }
            }
            let mut spec = spectral.forward_real(ui);
            for (s, m) in spec.iter_mut().zip(&symbols) {
                *s *= m;
            }
            *ui = spectral.inverse_real(spec).into_iter().map(|v| v.max(0.0)).collect();
        }
        remaining -= dt;
    }
    let rep = StepReport {
        accepted: true,
        retried: substeps > 1,
        clipped_mass: clipped,
        ..Default::default()
    };
    Ok((FieldSet::from_raw(grid, u), rep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Field, TorusGrid};
    use crate::kernels::{InteractionMatrix, ReversibleMeasure};
    use crate::scheme::{step_semi_implicit, Variant};

    #[test]
    fn constant_state_unchanged() {
        let g = TorusGrid::new(2, 16, 1.0).unwrap();
        let params = ModelParams::local(0.3, InteractionMatrix::zeros(1), ReversibleMeasure::uniform(1)).unwrap();
        let u = FieldSet::constant(g, &[1.5]);
        let cfg = SchemeConfig {
            variant: Variant::SemiImplicit,
            tau: 0.01,
            ..Default::default()
        };
        let (v, rep) = step_semi_implicit(&u, &params, &cfg).unwrap();
        assert!(v.field(0).values().iter().all(|x| (x - 1.5).abs() < 1e-14));
        assert_eq!(rep.clipped_mass, 0.0);
    }

    #[test]
    fn mass_conserved_without_clipping() {
        let g = TorusGrid::new(1, 64, 1.0).unwrap();
        let a = InteractionMatrix::new(vec![vec![1.0]]).unwrap();
        let params = ModelParams::local(0.1, a, ReversibleMeasure::uniform(1)).unwrap();
        let u = FieldSet::new(vec![Field::from_fn(g, |x| 1.0 + 0.3 * (std::f64::consts::TAU * x[0]).sin())]).unwrap();
        let cfg = SchemeConfig {
            variant: Variant::SemiImplicit,
            tau: 1e-3,
            ..Default::default()
        };
        let (v, rep) = step_semi_implicit(&u, &params, &cfg).unwrap();
        assert_eq!(rep.clipped_mass, 0.0);
        assert!((v.masses()[0] - u.masses()[0]).abs() < 1e-13);
    }
}
