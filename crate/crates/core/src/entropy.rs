//! Lyapunov functionals and their dissipation rates.
//!
//! Integrands follow the convention `0 log 0 = 0`.

use crate::error::{Error, Result};
use crate::grid::{gradient, integrate, lp_norm, pairwise_sum_by, same_grid, FieldSet};
use crate::kernels::{quadratic_form, weighted_asymmetry, InteractionMatrix, KernelRaster, ReversibleMeasure};
use crate::nonlocal::potentials;

/// Snapshot of all monitored quantities for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    pub h1: f64,
    /// Rao-type entropy of the nonlocal system (absent for local runs).
    pub h2: Option<f64>,
    /// Local Rao-type entropy `H_2^0` (absent for nonlocal runs).
    pub h2_local: Option<f64>,
    pub fisher_dissipation: f64,
    pub drift_dissipation: f64,
    pub min_density: f64,
    pub max_density: f64,
    pub masses: Vec<f64>,
    pub species_min: Vec<f64>,
    pub species_max: Vec<f64>,
}

fn check_species(u: &FieldSet, pi: &ReversibleMeasure) -> Result<()> {
    if u.species_count() != pi.len() {
        return Err(Error::SpeciesMismatch {
            expected: pi.len(),
            got: u.species_count(),
        });
    }
    Ok(())
}

fn z_log_z(z: f64) -> f64 {
    if z == 0.0 {
        0.0
    } else {
        z * z.ln()
    }
}

/// `H_1(u) = sum_i pi_i int u_i (log u_i - 1)`.
pub fn shannon_entropy(u: &FieldSet, pi: &ReversibleMeasure) -> Result<f64> {
    check_species(u, pi)?;
    u.check_nonnegative()?;
    let w = u.grid().cell_volume();
    Ok(u
        .fields()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let v = f.values();
            pi.get(i) * w * pairwise_sum_by(v.len(), |x| z_log_z(v[x]) - v[x])
        })
        .sum())
}

/// `H_2(u) = 1/2 sum_ij int int pi_i K_ij(x - y) u_i(x) u_j(y)`.
pub fn rao_entropy(u: &FieldSet, k: &KernelRaster, pi: &ReversibleMeasure) -> Result<f64> {
    check_species(u, pi)?;
    u.check_nonnegative()?;
    Ok(0.5 * quadratic_form(k, pi, u)?)
}

/// `H_2^0(u) = 1/2 sum_ij int pi_i a_ij u_i u_j`.
pub fn rao_entropy_local(u: &FieldSet, a: &InteractionMatrix, pi: &ReversibleMeasure) -> Result<f64> {
    check_species(u, pi)?;
    u.check_nonnegative()?;
    let asym = weighted_asymmetry(a, pi);
    if asym > 1e-12 * a.max_abs().max(1.0) {
        return Err(Error::AsymmetricWeights(asym));
    }
    let n = u.species_count();
    let w = u.grid().cell_volume();
    let vals: Vec<&[f64]> = u.fields().iter().map(|f| f.values()).collect();
    let s = pairwise_sum_by(u.grid().len(), |x| {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += pi.get(i) * a.get(i, j) * vals[i][x] * vals[j][x];
            }
        }
        acc
    });
    Ok(0.5 * w * s)
}

/// `4 sigma sum_i pi_i int |grad sqrt(u_i)|^2` with centred differences of `sqrt(u_i)`.
pub fn fisher_dissipation(u: &FieldSet, pi: &ReversibleMeasure, sigma: f64) -> Result<f64> {
    check_species(u, pi)?;
    u.check_nonnegative()?;
    let mut total = 0.0;
    for (i, f) in u.fields().iter().enumerate() {
        let root = f.map(f64::sqrt);
        for c in gradient(&root) {
            total += pi.get(i) * lp_norm(&c, 2.0)?.powi(2);
        }
    }
    Ok(4.0 * sigma * total)
}

/// `sum_i pi_i int u_i |grad p_i[u]|^2` with spectral `grad p`.
pub fn drift_dissipation(u: &FieldSet, k: &KernelRaster, pi: &ReversibleMeasure) -> Result<f64> {
    check_species(u, pi)?;
    u.check_nonnegative()?;
    let ps = potentials(k, u, false)?;
    let w = u.grid().cell_volume();
    Ok(u
        .fields()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let v = f.values();
            let g = &ps.grad_p[i];
            pi.get(i)
                * w
                * pairwise_sum_by(v.len(), |x| {
                    v[x] * g.iter().map(|c| c.values()[x].powi(2)).sum::<f64>()
                })
        })
        .sum())
}

/// Drift dissipation of the local system, `p_i = sum_j a_ij u_j`, centred gradients.
pub fn drift_dissipation_local(u: &FieldSet, a: &InteractionMatrix, pi: &ReversibleMeasure) -> Result<f64> {
    check_species(u, pi)?;
    let n = u.species_count();
    let g = *u.grid();
    let w = g.cell_volume();
    let mut total = 0.0;
    for i in 0..n {
        let mut p = vec![0.0; g.len()];
        for j in 0..n {
            let aij = a.get(i, j);
            for (pv, uv) in p.iter_mut().zip(u.field(j).values()) {
                *pv += aij * uv;
            }
        }
        let grad = gradient(&crate::grid::Field::from_raw(g, p));
        let v = u.field(i).values();
        total += pi.get(i)
            * w
            * pairwise_sum_by(v.len(), |x| {
                v[x] * grad.iter().map(|c| c.values()[x].powi(2)).sum::<f64>()
            });
    }
    Ok(total)
}

/// `sum_i int |grad u_i|^2` with centred differences.
pub fn gradient_energy(u: &FieldSet) -> Result<f64> {
    let mut total = 0.0;
    for f in u.fields() {
        for c in gradient(f) {
            total += lp_norm(&c, 2.0)?.powi(2);
        }
    }
    Ok(total)
}

/// `H(u | v) = sum_i pi_i int (u_i (log u_i - 1) - u_i log v_i + v_i)`.
pub fn relative_entropy(u: &FieldSet, v: &FieldSet, pi: &ReversibleMeasure) -> Result<f64> {
    check_pair(u, v, pi)?;
    let w = u.grid().cell_volume();
    Ok((0..u.species_count())
        .map(|i| {
            let a = u.field(i).values();
            let b = v.field(i).values();
            pi.get(i)
                * w
                * pairwise_sum_by(a.len(), |x| z_log_z(a[x]) - a[x] - a[x] * b[x].ln() + b[x])
        })
        .sum())
}

fn check_pair(u: &FieldSet, v: &FieldSet, pi: &ReversibleMeasure) -> Result<()> {
    same_grid(u.grid(), v.grid())?;
    check_species(u, pi)?;
    check_species(v, pi)?;
    u.check_nonnegative()?;
    for (species, f) in v.fields().iter().enumerate() {
        if let Some(&value) = f.values().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::NonpositiveReference { species, value });
        }
    }
    Ok(())
}

/// Csiszar-Kullback-Pinsker bound `sum_i pi_i ||u_i - v_i||_1^2 / (2 m_i)`, `m_i = int u_i`.
pub fn ckp_lower_bound(u: &FieldSet, v: &FieldSet, pi: &ReversibleMeasure) -> Result<f64> {
    check_pair(u, v, pi)?;
    let mut total = 0.0;
    for i in 0..u.species_count() {
        let mu = integrate(u.field(i));
        let mv = integrate(v.field(i));
        if (mu - mv).abs() > 1e-10 * mu.abs().max(mv.abs()) {
            return Err(Error::MassMismatch {
                species: i,
                left: mu,
                right: mv,
            });
        }
        if mu == 0.0 {
            continue;
        }
        let diff = u.field(i).zip_map(v.field(i), |a, b| a - b)?;
        total += pi.get(i) * lp_norm(&diff, 1.0)?.powi(2) / (2.0 * mu);
    }
    Ok(total)
}

/// `sum_i ||u_i - v_i||_1`.
pub fn l1_distance(u: &FieldSet, v: &FieldSet) -> Result<f64> {
    same_grid(u.grid(), v.grid())?;
    let mut total = 0.0;
    for (a, b) in u.fields().iter().zip(v.fields()) {
        total += lp_norm(&a.zip_map(b, |x, y| x - y)?, 1.0)?;
    }
    Ok(total)
}

/// `sqrt(sum_i ||u_i - v_i||_2^2)`.
pub fn l2_distance(u: &FieldSet, v: &FieldSet) -> Result<f64> {
    same_grid(u.grid(), v.grid())?;
    let mut total = 0.0;
    for (a, b) in u.fields().iter().zip(v.fields()) {
        total += lp_norm(&a.zip_map(b, |x, y| x - y)?, 2.0)?.powi(2);
    }
    Ok(total.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Field, TorusGrid};
    use crate::kernels::{build_kernel, KernelFamily, KernelSpec};
    use std::f64::consts::{E, PI};

    fn g1(n: usize) -> TorusGrid {
        TorusGrid::new(1, n, 1.0).unwrap()
    }

    #[test]
    fn shannon_constants() {
        let pi = ReversibleMeasure::uniform(1);
        let g = g1(16);
        assert!((shannon_entropy(&FieldSet::constant(g, &[1.0]), &pi).unwrap() + 1.0).abs() < 1e-15);
        assert!(shannon_entropy(&FieldSet::constant(g, &[E]), &pi).unwrap().abs() < 1e-15);
        assert_eq!(shannon_entropy(&FieldSet::constant(g, &[0.0]), &pi).unwrap(), 0.0);
        assert!(matches!(
            shannon_entropy(&FieldSet::constant(g, &[-1.0]), &pi),
            Err(Error::NegativeDensity { .. })
        ));
    }

    #[test]
    fn rao_constants() {
        let g = g1(64);
        let k = build_kernel(
            &KernelSpec {
                family: KernelFamily::Gaussian { epsilon: 0.05 },
                interaction: InteractionMatrix::identity(2),
            },
            g,
        )
        .unwrap();
        let pi = ReversibleMeasure::uniform(2);
        let u = FieldSet::constant(g, &[1.0, 2.0]);
        assert!((rao_entropy(&u, &k, &pi).unwrap() - 1.25).abs() < 1e-10);
        assert!((rao_entropy_local(&u, &InteractionMatrix::identity(2), &pi).unwrap() - 1.25).abs() < 1e-14);
        let z = FieldSet::constant(g, &[0.0, 0.0]);
        assert_eq!(rao_entropy(&z, &k, &pi).unwrap(), 0.0);
        assert_eq!(rao_entropy_local(&z, &InteractionMatrix::identity(2), &pi).unwrap(), 0.0);
    }

    #[test]
    fn rao_local_rejects_asymmetric_weights() {
        let g = g1(16);
        let a = InteractionMatrix::new(vec![vec![0.0, 1.0], vec![4.0, 0.0]]).unwrap();
        let u = FieldSet::constant(g, &[1.0, 1.0]);
        assert!(matches!(
            rao_entropy_local(&u, &a, &ReversibleMeasure::uniform(2)),
            Err(Error::AsymmetricWeights(_))
        ));
    }

    #[test]
    fn fisher_examples() {
        let g = g1(512);
        let pi = ReversibleMeasure::uniform(1);
        assert_eq!(fisher_dissipation(&FieldSet::constant(g, &[2.0]), &pi, 1.0).unwrap(), 0.0);
        let u = FieldSet::new(vec![Field::from_fn(g, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos())]).unwrap();
        let f1 = fisher_dissipation(&u, &pi, 1.0).unwrap();
        let f2 = fisher_dissipation(&u, &pi, 2.0).unwrap();
        assert!((f2 - 2.0 * f1).abs() < 1e-14 * f2);
        // |grad sqrt u|^2 = |u'|^2 / (4 u), integrated by a fine midpoint rule
        let m = 200_000;
        let oracle: f64 = (0..m)
            .map(|k| {
                let x = (k as f64 + 0.5) / m as f64;
                let u = 1.0 + 0.5 * (2.0 * PI * x).cos();
                let du = -PI * (2.0 * PI * x).sin();
                du * du / (4.0 * u)
            })
            .sum::<f64>()
            / m as f64
            * 4.0;
        // centred differences carry an O(h^2) error on top of the quadrature
        assert!((f1 - oracle).abs() < 1e-3 * oracle, "{f1} vs {oracle}");
    }

    #[test]
    fn drift_constant_state_is_zero() {
        let g = g1(32);
        let k = build_kernel(
            &KernelSpec {
                family: KernelFamily::Gaussian { epsilon: 0.1 },
                interaction: InteractionMatrix::identity(1),
            },
            g,
        )
        .unwrap();
        let pi = ReversibleMeasure::uniform(1);
        assert!(drift_dissipation(&FieldSet::constant(g, &[3.0]), &k, &pi).unwrap().abs() < 1e-20);
        assert_eq!(drift_dissipation(&FieldSet::constant(g, &[0.0]), &k, &pi).unwrap(), 0.0);
    }

    #[test]
    fn relative_entropy_examples() {
        let g = g1(256);
        let pi = ReversibleMeasure::uniform(1);
        let u = FieldSet::new(vec![Field::from_fn(g, |x| 1.0 + 0.1 * (2.0 * PI * x[0]).cos())]).unwrap();
        let v = FieldSet::constant(g, &[1.0]);
        assert!(relative_entropy(&u, &u, &pi).unwrap().abs() < 1e-15);
        let h = relative_entropy(&u, &v, &pi).unwrap();
        let b = ckp_lower_bound(&u, &v, &pi).unwrap();
        // midpoint sum of |0.1 cos|, and its continuum limit 0.2 / pi
        let l1: f64 = (0..256).map(|k| (0.1 * (2.0 * PI * (k as f64 + 0.5) / 256.0).cos()).abs()).sum::<f64>() / 256.0;
        assert!((b - l1 * l1 / 2.0).abs() < 1e-15);
        assert!((b - (0.2 / PI).powi(2) / 2.0).abs() < 1e-4 * b);
        assert!((h - 2.51e-3).abs() < 1e-5);
        assert!(h >= b);
        // homogeneity of the bound
        let b2 = ckp_lower_bound(&u.scaled(3.0), &v.scaled(3.0), &pi).unwrap();
        assert!((b2 - 3.0 * b).abs() < 1e-15);
        // relative to the unit field: H(u|1) = H_1(u) + |T|
        let h1 = shannon_entropy(&u, &pi).unwrap();
        assert!((h - (h1 + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn relative_entropy_zero_density_convention() {
        let g = g1(8);
        let pi = ReversibleMeasure::uniform(1);
        let u = FieldSet::constant(g, &[0.0]);
        let v = FieldSet::constant(g, &[2.0]);
        assert!((relative_entropy(&u, &v, &pi).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(
            relative_entropy(&v, &u, &pi),
            Err(Error::NonpositiveReference { .. })
        ));
    }

    #[test]
    fn ckp_rejects_mass_mismatch() {
        let g = g1(8);
        let pi = ReversibleMeasure::uniform(1);
        let r = ckp_lower_bound(&FieldSet::constant(g, &[1.0]), &FieldSet::constant(g, &[1.1]), &pi);
        assert!(matches!(r, Err(Error::MassMismatch { .. })));
    }
}
