//! Nonlocal potentials `p_i[u] = sum_j K_ij * u_j` by FFT circular convolution.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{same_grid, Field, FieldSet, TorusGrid};
use crate::kernels::KernelRaster;
use crate::spectral::Spectral;

/// Potentials with their spectral gradients and, optionally, Laplacians.
#[derive(Debug, Clone)]
pub struct PotentialSet {
    pub p: Vec<Field>,
    /// `grad_p[i][axis]`.
    pub grad_p: Vec<Vec<Field>>,
    pub lap_p: Option<Vec<Field>>,
}

/// Circular convolution `h^d sum_y K(x - y) u(y)` computed in Fourier space.
pub fn convolve(k_pair: &Field, u: &Field) -> Result<Field> {
    same_grid(k_pair.grid(), u.grid())?;
    let g = *u.grid();
    let s = Spectral::new(g);
    let kh = s.forward_real(k_pair.values());
    let mut uh = s.forward_real(u.values());
    let w = g.cell_volume();
    for (a, b) in uh.iter_mut().zip(&kh) {
        *a *= b * w;
    }
    Ok(Field::from_raw(g, s.inverse_real(uh)))
}

/// Largest grids `convolve_direct` accepts without an override.
fn direct_guard(g: &TorusGrid) -> bool {
    match g.dim() {
        1 => g.cells() <= 128,
        _ => g.cells() <= 48,
    }
}

/// Direct `O(N^{2d})` circular convolution; the verification oracle for [`convolve`].
pub fn convolve_direct(k_pair: &Field, u: &Field, allow_large: bool) -> Result<Field> {
    same_grid(k_pair.grid(), u.grid())?;
    let g = *u.grid();
    if !allow_large && !direct_guard(&g) {
        return Err(Error::SizeGuard { cells: g.len() });
    }
    let n = g.cells();
    let kv = k_pair.values();
    let uv = u.values();
    let w = g.cell_volume();
    let out = (0..g.len())
        .map(|x| {
            let cx = g.coords(x);
            let mut acc = 0.0;
            for (y, &uy) in uv.iter().enumerate() {
                let cy = g.coords(y);
                let mut d = [0usize; 2];
                for a in 0..g.dim() {
                    d[a] = (cx[a] + n - cy[a]) % n;
                }
                acc += kv[g.index(d)] * uy;
            }
            w * acc
        })
        .collect();
    Ok(Field::from_raw(g, out))
}

/// Spectral gradient (Nyquist mode of the multiplier zeroed).
pub fn spectral_gradient(spectral: &Spectral, f: &Field) -> Vec<Field> {
    let g = *spectral.grid();
    let fh = spectral.forward_real(f.values());
    (0..g.dim())
        .map(|axis| {
            let m = spectral.derivative_multipliers(axis);
            let spec: Vec<Complex64> = fh.iter().zip(&m).map(|(a, b)| a * b).collect();
            Field::from_raw(g, spectral.inverse_real(spec))
        })
        .collect()
}

/// Spectral Laplacian with multiplier `-|2 pi xi / L|^2`.
pub fn spectral_laplacian(spectral: &Spectral, f: &Field) -> Field {
    let g = *spectral.grid();
    let m = spectral.laplacian_multipliers();
    let mut fh = spectral.forward_real(f.values());
    for (a, b) in fh.iter_mut().zip(&m) {
        *a *= b;
    }
    Field::from_raw(g, spectral.inverse_real(fh))
}

fn check_state(k: &KernelRaster, u: &FieldSet) -> Result<()> {
    same_grid(k.grid(), u.grid())?;
    if u.species_count() != k.species_count() {
        return Err(Error::SpeciesMismatch {
            expected: k.species_count(),
            got: u.species_count(),
        });
    }
    Ok(())
}

/// Evaluates `p_i`, `grad p_i` and, on request, `Delta p_i`.
///
/// The Laplacian is refused for kernels whose `Delta K` is unbounded.
pub fn potentials(k: &KernelRaster, u: &FieldSet, with_laplacian: bool) -> Result<PotentialSet> {
    check_state(k, u)?;
    if with_laplacian && !k.has_bounded_laplacian() {
        return Err(Error::KernelNotSmooth(format!(
            "{} kernel has no bounded Laplacian",
            k.family().map_or("general", |f| f.name())
        )));
    }
    let g = *u.grid();
    let s = k.spectral();
    let spectra: Vec<Vec<Complex64>> = u.fields().iter().map(|f| s.forward_real(f.values())).collect();
    let deriv: Vec<Vec<Complex64>> = (0..g.dim()).map(|a| s.derivative_multipliers(a)).collect();
    let lap_mult = with_laplacian.then(|| s.laplacian_multipliers());
    let mut p = Vec::new();
    let mut grad_p = Vec::new();
    let mut lap_p = Vec::new();
    for i in 0..u.species_count() {
        let ph = k.combine(i, &spectra);
        grad_p.push(
            deriv
                .iter()
                .map(|m| {
                    let spec = ph.iter().zip(m).map(|(a, b)| a * b).collect();
                    Field::from_raw(g, s.inverse_real(spec))
                })
                .collect(),
        );
        if let Some(m) = &lap_mult {
            let spec = ph.iter().zip(m).map(|(a, b)| a * b).collect();
            lap_p.push(Field::from_raw(g, s.inverse_real(spec)));
        }
        p.push(Field::from_raw(g, s.inverse_real(ph)));
    }
    Ok(PotentialSet {
        p,
        grad_p,
        lap_p: with_laplacian.then_some(lap_p),
    })
}

/// Spectrally computed `Delta K_ij` raster.
pub fn kernel_laplacian(k: &KernelRaster, i: usize, j: usize) -> Result<Field> {
    if !k.has_bounded_laplacian() {
        return Err(Error::KernelNotSmooth(format!(
            "{} kernel has no bounded Laplacian",
            k.family().map_or("general", |f| f.name())
        )));
    }
    Ok(spectral_laplacian(k.spectral(), k.raster(i, j)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{integrate, lp_norm};
    use crate::kernels::{build_kernel, InteractionMatrix, KernelFamily, KernelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn gaussian(g: TorusGrid, eps: f64, a: Vec<Vec<f64>>) -> KernelRaster {
        build_kernel(
            &KernelSpec {
                family: KernelFamily::Gaussian { epsilon: eps },
                interaction: InteractionMatrix::new(a).unwrap(),
            },
            g,
        )
        .unwrap()
    }

    fn random_field(g: TorusGrid, rng: &mut ChaCha8Rng) -> Field {
        Field::new(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn impulse_reproduces_shifted_kernel() {
        let g = TorusGrid::new(1, 32, 1.0).unwrap();
        let k = gaussian(g, 0.1, vec![vec![1.0]]);
        let mut imp = Field::zeros(g);
        imp.values_mut()[5] = 1.0 / g.cell_volume();
        let expect = k.raster(0, 0).shifted([5, 0]);
        for out in [
            convolve(k.raster(0, 0), &imp).unwrap(),
            convolve_direct(k.raster(0, 0), &imp, false).unwrap(),
        ] {
            for (a, b) in out.values().iter().zip(expect.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_input_gives_mass_times_constant() {
        let g = TorusGrid::new(2, 16, 1.0).unwrap();
        let k = gaussian(g, 0.1, vec![vec![1.0]]);
        let out = convolve(k.raster(0, 0), &Field::constant(g, 3.0)).unwrap();
        let m = integrate(k.raster(0, 0));
        assert!(out.values().iter().all(|v| (v - 3.0 * m).abs() < 1e-12));
        let zero = convolve_direct(k.raster(0, 0), &Field::zeros(g), false).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fft_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = TorusGrid::new(1, 64, 1.0).unwrap();
        let k = random_field(g, &mut rng);
        let u = random_field(g, &mut rng);
        let a = convolve(&k, &u).unwrap();
        let b = convolve_direct(&k, &u, false).unwrap();
        let scale = lp_norm(&b, f64::INFINITY).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn direct_guard_enforced() {
        let g = TorusGrid::new(2, 64, 1.0).unwrap();
        let f = Field::zeros(g);
        assert!(matches!(
            convolve_direct(&f, &f, false),
            Err(Error::SizeGuard { .. })
        ));
        assert!(convolve_direct(&f, &Field::zeros(TorusGrid::new(1, 64, 1.0).unwrap()), true).is_err());
    }

    #[test]
    fn constant_state_has_flat_potentials() {
        let g = TorusGrid::new(1, 32, 1.0).unwrap();
        let k = gaussian(g, 0.1, vec![vec![2.0, 1.0], vec![1.0, 3.0]]);
        let u = FieldSet::constant(g, &[1.5, 0.5]);
        let ps = potentials(&k, &u, true).unwrap();
        let expect0 = k.mass(0, 0) * 1.5 + k.mass(0, 1) * 0.5;
        assert!(ps.p[0].values().iter().all(|v| (v - expect0).abs() < 1e-12));
        for grad in &ps.grad_p {
            assert!(grad[0].values().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn single_mode_scales_by_multiplier() {
        let g = TorusGrid::new(1, 64, 1.0).unwrap();
        let k = gaussian(g, 0.05, vec![vec![1.0]]);
        let u = FieldSet::new(vec![Field::from_fn(g, |x| (2.0 * PI * 3.0 * x[0]).cos())]).unwrap();
        let ps = potentials(&k, &u, false).unwrap();
        let khat = k.multipliers(0, 0)[3].re;
        let direct = convolve_direct(k.raster(0, 0), u.field(0), false).unwrap();
        for ((p, d), v) in ps.p[0].values().iter().zip(direct.values()).zip(u.field(0).values()) {
            assert!((p - khat * v).abs() < 1e-10);
            assert!((d - khat * v).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_commutes_with_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = TorusGrid::new(2, 16, 1.0).unwrap();
        let k = gaussian(g, 0.1, vec![vec![1.0, 0.5], vec![0.5, 1.0]]);
        let u = FieldSet::new(vec![random_field(g, &mut rng), random_field(g, &mut rng)]).unwrap();
        let ps = potentials(&k, &u, false).unwrap();
        let s = k.spectral();
        for i in 0..2 {
            for axis in 0..2 {
                let mut acc = Field::zeros(g);
                for j in 0..2 {
                    let du = &spectral_gradient(s, u.field(j))[axis];
                    let c = convolve_direct(k.raster(i, j), du, false).unwrap();
                    acc = acc.zip_map(&c, |a, b| a + b).unwrap();
                }
                let scale = lp_norm(&acc, f64::INFINITY).unwrap();
                for (a, b) in ps.grad_p[i][axis].values().iter().zip(acc.values()) {
                    assert!((a - b).abs() <= 1e-10 * scale.max(1.0));
                }
            }
        }
    }

    #[test]
    fn laplacian_refused_for_indicator() {
        let g = TorusGrid::new(1, 32, 1.0).unwrap();
        let k = build_kernel(
            &KernelSpec {
                family: KernelFamily::IndicatorBall { radius: 0.1 },
                interaction: InteractionMatrix::identity(1),
            },
            g,
        )
        .unwrap();
        let u = FieldSet::constant(g, &[1.0]);
        assert!(matches!(potentials(&k, &u, true), Err(Error::KernelNotSmooth(_))));
        assert!(potentials(&k, &u, false).is_ok());
        assert!(kernel_laplacian(&k, 0, 0).is_err());
    }

    #[test]
    fn gaussian_kernel_laplacian_at_origin() {
        // wide torus so the periodic images are negligible
        let g = TorusGrid::new(1, 256, 4.0).unwrap();
        let k = gaussian(g, 0.5, vec![vec![1.0]]);
        let lap = kernel_laplacian(&k, 0, 0).unwrap();
        let analytic = -(2.0 * PI * 0.25_f64).powf(-0.5) / 0.25;
        assert!((lap.values()[0] - analytic).abs() < 1e-9);
    }
}
