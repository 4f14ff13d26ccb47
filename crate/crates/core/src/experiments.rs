//! Numerical probes: localization limit, weak-strong stability, pointwise
//! bounds and convergence orders.

use rayon::prelude::*;

use crate::entropy::{ckp_lower_bound, l1_distance, relative_entropy};
use crate::error::{Error, Result};
use crate::grid::{lp_norm, Field, FieldSet, TorusGrid};
use crate::init::InitialData;
use crate::kernels::{InteractionMatrix, KernelFamily, KernelRaster, KernelSpec, MollifierProfile, ReversibleMeasure};
use crate::scheme::{simulate, ModelParams, SchemeConfig, Trajectory};

/// Distances between nonlocal and local solutions for a family of kernel widths.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationReport {
    pub epsilons: Vec<f64>,
    /// Discrete `L^1(Q_T)` distances, one per epsilon.
    pub distances_l1: Vec<f64>,
    /// Discrete `L^2(Q_T)` distances, one per epsilon.
    pub distances_l2: Vec<f64>,
    pub monotone: bool,
    /// Least-squares slope of `log d_1` against `log eps` (recorded only).
    pub l1_slope: Option<f64>,
    pub times: Vec<f64>,
}

fn finished(t: Trajectory) -> Result<Trajectory> {
    match t.error {
        Some(e) => Err(e),
        None => Ok(t),
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Space-time distances between two trajectories on identical output times.
///
/// Each snapshot after the first is weighted by the time elapsed since the previous one.
fn space_time_distances(a: &Trajectory, b: &Trajectory) -> Result<(f64, f64)> {
    if a.times != b.times {
        return Err(Error::InvalidScheme("trajectories have different output times".into()));
    }
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for k in 1..a.times.len() {
        let dt = a.times[k] - a.times[k - 1];
        let (u, v) = (&a.states[k], &b.states[k]);
        for i in 0..u.species_count() {
            let diff = u.field(i).zip_map(v.field(i), |x, y| x - y)?;
            d1 += dt * lp_norm(&diff, 1.0)?;
            d2 += dt * lp_norm(&diff, 2.0)?.powi(2);
        }
    }
    Ok((d1, d2.sqrt()))
}

/// Runs the nonlocal system with kernels `a_ij eps^{-d} B(z / eps)` for every
/// `eps` and compares against the local system with the same data.
///
/// With an empty `output_times` every step is compared.
#[allow(clippy::too_many_arguments)]
pub fn localization_sweep(
    epsilons: &[f64],
    a: &InteractionMatrix,
    pi: &ReversibleMeasure,
    u0: &FieldSet,
    sigma: f64,
    profile: MollifierProfile,
    config: &SchemeConfig,
    output_times: &[f64],
) -> Result<LocalizationReport> {
    config.validate()?;
    let grid = *u0.grid();
    if epsilons.is_empty() {
        return Err(Error::InvalidKernel("empty epsilon list".into()));
    }
    if epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) || epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidKernel("epsilons must be positive and strictly decreasing".into()));
    }
    let min_eps = *epsilons.last().expect("non-empty");
    let guard = 4.0 * grid.cell_size();
    if min_eps < guard {
        return Err(Error::ResolutionGuard {
            epsilon: min_eps,
            min: guard,
        });
    }
    let times: Vec<f64> = if output_times.is_empty() {
        (0..=config.step_count()).map(|k| k as f64 * config.tau).collect()
    } else {
        output_times.to_vec()
    };
    let local = ModelParams::local(sigma, a.clone(), pi.clone())?;
    let reference = finished(simulate(u0, &local, config, &times)?)?;
    let runs: Vec<Result<Trajectory>> = epsilons
        .par_iter()
        .map(|&epsilon| {
            let spec = KernelSpec {
                family: KernelFamily::Mollifier { epsilon, profile },
                interaction: a.clone(),
            };
            let params = ModelParams::nonlocal(sigma, KernelRaster::build(&spec, grid)?, pi.clone())?;
            finished(simulate(u0, &params, config, &times)?)
        })
        .collect();
    let mut distances_l1 = Vec::with_capacity(epsilons.len());
    let mut distances_l2 = Vec::with_capacity(epsilons.len());
    for run in runs {
        let (d1, d2) = space_time_distances(&run?, &reference)?;
        distances_l1.push(d1);
        distances_l2.push(d2);
    }
    let monotone = distances_l1.windows(2).all(|w| w[1] < w[0]);
    let l1_slope = loglog_slope(epsilons, &distances_l1);
    Ok(LocalizationReport {
        epsilons: epsilons.to_vec(),
        distances_l1,
        distances_l2,
        monotone,
        l1_slope,
        times: reference.times,
    })
}

/// Relative-entropy comparison of a perturbed and an unperturbed run.
#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    pub times: Vec<f64>,
    pub rel_entropy: Vec<f64>,
    pub ckp_bound: Vec<f64>,
    pub l1_distances: Vec<f64>,
    /// Smallest `C` with `G(t) <= G(0) e^{C t}` at all output times, `G = sum_i ||u_i - v_i||_1^2`.
    pub gronwall_fit_c: Option<f64>,
    /// `max_t sum_i ||v_i - v'_i||_1` between the reference run and its cross-check run.
    pub same_init_max_distance: f64,
}

impl UniquenessReport {
    /// Whether `H(u|v) >= CKP - tol` at every output time.
    pub fn ckp_holds(&self, tol: f64) -> bool {
        self.rel_entropy.iter().zip(&self.ckp_bound).all(|(h, c)| *h >= c - tol)
    }
}

/// Weak-strong probe.
///
/// `v` starts from `u0` and `u` from `u0 + perturbation`, both integrated with
/// `config`. A third run from `u0` with `cross_config` (default: `config`)
/// measures how far two integrations of identical data drift apart.
pub fn weak_strong_probe(
    u0: &FieldSet,
    perturbation: &FieldSet,
    params: &ModelParams,
    config: &SchemeConfig,
    output_times: &[f64],
    cross_config: Option<&SchemeConfig>,
) -> Result<UniquenessReport> {
    if u0.min() <= 0.0 {
        return Err(Error::NonpositiveReference {
            species: (0..u0.species_count())
                .find(|&i| u0.field(i).min() <= 0.0)
                .unwrap_or(0),
            value: u0.min(),
        });
    }
    let base = u0.masses();
    for (i, m) in perturbation.masses().iter().enumerate() {
        if m.abs() > 1e-12 * (1.0 + base[i].abs()) {
            return Err(Error::MassMismatch {
                species: i,
                left: base[i],
                right: base[i] + m,
            });
        }
    }
    let start = u0.axpy(1.0, perturbation)?;
    start.check_nonnegative()?;
    let cross = cross_config.unwrap_or(config);
    let jobs: Vec<(&FieldSet, &SchemeConfig)> = vec![(u0, config), (&start, config), (u0, cross)];
    let mut runs = jobs
        .par_iter()
        .map(|(init, cfg)| finished(simulate(init, params, cfg, output_times)?))
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    let (v, u, v2) = (
        runs.next().expect("three runs"),
        runs.next().expect("three runs"),
        runs.next().expect("three runs"),
    );
    if u.times != v.times || v2.times != v.times {
        return Err(Error::InvalidScheme("cross-check run has different output times".into()));
    }
    let mut report = UniquenessReport {
        times: v.times.clone(),
        rel_entropy: Vec::new(),
        ckp_bound: Vec::new(),
        l1_distances: Vec::new(),
        gronwall_fit_c: None,
        same_init_max_distance: 0.0,
    };
    for k in 0..v.times.len() {
        report.rel_entropy.push(relative_entropy(&u.states[k], &v.states[k], &params.pi)?);
        report.ckp_bound.push(ckp_lower_bound(&u.states[k], &v.states[k], &params.pi)?);
        report.l1_distances.push(l1_distance(&u.states[k], &v.states[k])?);
        report.same_init_max_distance = report.same_init_max_distance.max(l1_distance(&v.states[k], &v2.states[k])?);
    }
    let g: Vec<f64> = (0..v.times.len())
        .map(|k| {
            (0..u0.species_count())
                .map(|i| {
                    let d = u.states[k].field(i).zip_map(v.states[k].field(i), |x, y| x - y).expect("same grid");
                    lp_norm(&d, 1.0).expect("p = 1").powi(2)
                })
                .sum()
        })
        .collect();
    if g[0] > 0.0 {
        report.gronwall_fit_c = report
            .times
            .iter()
            .zip(&g)
            .skip(1)
            .filter(|(t, gk)| **t > 0.0 && **gk > 0.0)
            .map(|(t, gk)| (gk / g[0]).ln() / t)
            .fold(None, |acc: Option<f64>, c| Some(acc.map_or(c, |a| a.max(c))));
    }
    Ok(report)
}

/// First point where a trajectory leaves the predicted envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundViolation {
    pub time: f64,
    pub species: usize,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub pass: bool,
    pub checked: usize,
    pub slack: f64,
    pub first_violation: Option<BoundViolation>,
}

/// Checks `m0 e^{-lambda t} <= u_i(t) <= M0 e^{lambda t}` at every recorded step.
pub fn bounds_check(trajectory: &Trajectory, lambda: f64, m0: f64, big_m0: f64) -> BoundsReport {
    let slack = 1e-9 * big_m0.abs();
    let mut checked = 0;
    for d in &trajectory.diagnostics {
        let lower = m0 * (-lambda * d.time).exp();
        let upper = big_m0 * (lambda * d.time).exp();
        for (i, (&lo, &hi)) in d.entropy.species_min.iter().zip(&d.entropy.species_max).enumerate() {
            checked += 1;
            let bad = if lo < lower - slack {
                Some(lo)
            } else if hi > upper + slack {
                Some(hi)
            } else {
                None
            };
            if let Some(value) = bad {
                return BoundsReport {
                    pass: false,
                    checked,
                    slack,
                    first_violation: Some(BoundViolation {
                        time: d.time,
                        species: i,
                        value,
                        lower,
                        upper,
                    }),
                };
            }
        }
    }
    BoundsReport {
        pass: true,
        checked,
        slack,
        first_violation: None,
    }
}

/// Exact solution `(species, x, t) -> u_i(x, t)` used as convergence reference.
pub type ExactSolution = dyn Fn(usize, [f64; 2], f64) -> f64 + Sync;

/// Everything that stays fixed across a convergence study.
pub struct ConvergenceSetup<'a> {
    pub dim: usize,
    pub period: f64,
    pub make_params: &'a (dyn Fn(TorusGrid) -> Result<ModelParams> + Sync),
    pub initial: InitialData,
    /// `t_end`, solver settings, and the `tau` used by the spatial study.
    pub config: SchemeConfig,
    /// Cells per dimension used by the temporal study.
    pub temporal_cells: usize,
    pub exact: Option<&'a ExactSolution>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub taus: Vec<f64>,
    pub temporal_errors: Vec<f64>,
    pub temporal_order: Option<f64>,
    pub cells: Vec<usize>,
    pub spatial_errors: Vec<f64>,
    pub spatial_order: Option<f64>,
    pub exact_reference: bool,
}

fn check_nesting(values: &[f64], what: &str) -> Result<()> {
    if values.len() < 3 {
        return Err(Error::InsufficientResolutions(format!(
            "{what}: need at least 3 resolutions, got {}",
            values.len()
        )));
    }
    for w in values.windows(2) {
        let r = w[0] / w[1];
        if (r - 2.0).abs() > 1e-9 && (r - 0.5).abs() > 1e-9 {
            return Err(Error::InsufficientResolutions(format!(
                "{what}: consecutive resolutions must differ by a factor 2 ({} vs {})",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

fn l2_error(u: &FieldSet, v: &[Vec<f64>]) -> Result<f64> {
    let g = *u.grid();
    let mut s = 0.0;
    for (i, vi) in v.iter().enumerate() {
        let d = Field::new(g, u.field(i).values().iter().zip(vi).map(|(a, b)| a - b).collect())?;
        s += lp_norm(&d, 2.0)?.powi(2);
    }
    Ok(s.sqrt())
}

/// Averages a fine state over `2^k`-blocks onto `coarse`.
fn restrict(fine: &FieldSet, coarse: TorusGrid) -> Vec<Vec<f64>> {
    let fg = fine.grid();
    let r = fg.cells() / coarse.cells();
    let dim = coarse.dim();
    fine.fields()
        .iter()
        .map(|f| {
            let mut out = vec![0.0; coarse.len()];
            for (idx, v) in f.values().iter().enumerate() {
                let c = fg.coords(idx);
                let cc = [c[0] / r, if dim == 2 { c[1] / r } else { 0 }];
                out[coarse.index(cc)] += v;
            }
            let w = (r as f64).powi(dim as i32);
            out.iter_mut().for_each(|v| *v /= w);
            out
        })
        .collect()
}

fn run_final(setup: &ConvergenceSetup<'_>, cells: usize, tau: f64) -> Result<FieldSet> {
    let grid = TorusGrid::new(setup.dim, cells, setup.period)?;
    let params = (setup.make_params)(grid)?;
    let u0 = setup.initial.generate(grid, None)?;
    let cfg = SchemeConfig {
        tau,
        ..setup.config.clone()
    };
    let t = finished(simulate(&u0, &params, &cfg, &[])?)?;
    Ok(t.final_state().clone())
}

fn exact_values(exact: &ExactSolution, grid: TorusGrid, n: usize, t: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..grid.len()).map(|idx| exact(i, grid.center(idx), t)).collect())
        .collect()
}

/// Observed orders in time and space. Either list may be empty to skip that study.
///
/// Without an exact solution the finest run of each list is the reference.
pub fn convergence_study(tau_list: &[f64], n_list: &[usize], setup: &ConvergenceSetup<'_>) -> Result<ConvergenceReport> {
    if tau_list.is_empty() && n_list.is_empty() {
        return Err(Error::InsufficientResolutions("no resolutions given".into()));
    }
    setup.config.validate()?;
    let mut report = ConvergenceReport {
        taus: Vec::new(),
        temporal_errors: Vec::new(),
        temporal_order: None,
        cells: Vec::new(),
        spatial_errors: Vec::new(),
        spatial_order: None,
        exact_reference: setup.exact.is_some(),
    };
    if !tau_list.is_empty() {
        check_nesting(tau_list, "tau")?;
        let mut taus = tau_list.to_vec();
        taus.sort_by(|a, b| b.total_cmp(a));
        let finals = taus
            .par_iter()
            .map(|&tau| run_final(setup, setup.temporal_cells, tau))
            .collect::<Result<Vec<_>>>()?;
        let (used, errors): (Vec<f64>, Vec<f64>) = match setup.exact {
            Some(exact) => {
                let g = *finals[0].grid();
                let t = setup.config.step_count() as f64 * setup.config.tau;
                let reference = exact_values(exact, g, finals[0].species_count(), t);
                let errs = finals.iter().map(|u| l2_error(u, &reference)).collect::<Result<Vec<_>>>()?;
                (taus.clone(), errs)
            }
            None => {
                let reference = finals.last().expect("checked").to_vecs();
                let errs = finals[..finals.len() - 1]
                    .iter()
                    .map(|u| l2_error(u, &reference))
                    .collect::<Result<Vec<_>>>()?;
                (taus[..taus.len() - 1].to_vec(), errs)
            }
        };
        if errors.contains(&0.0) {
            return Err(Error::InsufficientResolutions("zero error row (identical resolutions?)".into()));
        }
        report.temporal_order = loglog_slope(&used, &errors);
        report.taus = used;
        report.temporal_errors = errors;
    }
    if !n_list.is_empty() {
        let as_f: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
        check_nesting(&as_f, "cells")?;
        let mut cells = n_list.to_vec();
        cells.sort_unstable();
        let finals = cells
            .par_iter()
            .map(|&n| run_final(setup, n, setup.config.tau))
            .collect::<Result<Vec<_>>>()?;
        let t = setup.config.step_count() as f64 * setup.config.tau;
        let (used, errors): (Vec<usize>, Vec<f64>) = match setup.exact {
            Some(exact) => {
                let errs = finals
                    .iter()
                    .map(|u| l2_error(u, &exact_values(exact, *u.grid(), u.species_count(), t)))
                    .collect::<Result<Vec<_>>>()?;
                (cells.clone(), errs)
            }
            None => {
                let finest = finals.last().expect("checked");
                let errs = finals[..finals.len() - 1]
                    .iter()
                    .map(|u| l2_error(u, &restrict(finest, *u.grid())))
                    .collect::<Result<Vec<_>>>()?;
                (cells[..cells.len() - 1].to_vec(), errs)
            }
        };
        if errors.contains(&0.0) {
            return Err(Error::InsufficientResolutions("zero error row (identical resolutions?)".into()));
        }
        let h: Vec<f64> = used.iter().map(|&n| setup.period / n as f64).collect();
        report.spatial_order = loglog_slope(&h, &errors);
        report.cells = used;
        report.spatial_errors = errors;
    }
    Ok(report)
}
