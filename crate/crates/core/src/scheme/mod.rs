//! Time integrators.
//!
//! The main integrator is implicit Euler written in entropy variables
//! `w_i = pi_i log u_i`, solved by damped Newton with a matrix-free GMRES inner
//! solve. A semi-implicit variant (implicit diffusion, explicit upwind drift)
//! is available for quick sweeps.

mod implicit;
pub mod krylov;
mod semi;

use std::sync::Arc;

use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::entropy::{
    drift_dissipation, drift_dissipation_local, fisher_dissipation, rao_entropy, rao_entropy_local,
    shannon_entropy, EntropyReport,
};
use crate::error::{Error, Result};
use crate::grid::{same_grid, FieldSet, TorusGrid};
use crate::kernels::{check_detailed_balance, weighted_asymmetry, InteractionMatrix, KernelRaster, ReversibleMeasure};
use crate::nonlocal::kernel_laplacian;

pub use implicit::{jacobian_vector_product, residual};

/// Which potential closes the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// `p_i = sum_j K_ij * u_j`
    Nonlocal,
    /// `p_i = sum_j a_ij u_j`
    Local,
}

/// Physical parameters of one run.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub sigma: f64,
    pub kernel: Option<Arc<KernelRaster>>,
    pub pi: ReversibleMeasure,
    pub interaction: InteractionMatrix,
    pub mode: Mode,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidScheme(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(())
}

impl ModelParams {
    /// Nonlocal model; the kernel must satisfy detailed balance with `pi`.
    pub fn nonlocal(sigma: f64, kernel: KernelRaster, pi: ReversibleMeasure) -> Result<Self> {
        check_sigma(sigma)?;
        let n = kernel.species_count();
        if pi.len() != n {
            return Err(Error::SpeciesMismatch {
                expected: n,
                got: pi.len(),
            });
        }
        let scale = (0..n * n)
            .map(|ij| kernel.raster(ij / n, ij % n).values().iter().fold(0.0_f64, |m, v| m.max(v.abs())))
            .fold(0.0_f64, f64::max);
        let residual = check_detailed_balance(&kernel, &pi);
        let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
        if residual > tol {
            return Err(Error::DetailedBalanceViolated { residual, tol });
        }
        let interaction = kernel.interaction().cloned().unwrap_or_else(|| InteractionMatrix::zeros(n));
        Ok(Self {
            sigma,
            kernel: Some(Arc::new(kernel)),
            pi,
            interaction,
            mode: Mode::Nonlocal,
        })
    }

    /// Local model; `pi_i a_ij` must be symmetric.
    pub fn local(sigma: f64, interaction: InteractionMatrix, pi: ReversibleMeasure) -> Result<Self> {
        check_sigma(sigma)?;
        if pi.len() != interaction.n() {
            return Err(Error::SpeciesMismatch {
                expected: interaction.n(),
                got: pi.len(),
            });
        }
        let asym = weighted_asymmetry(&interaction, &pi);
        if asym > 1e-12 * interaction.max_abs().max(1.0) {
            return Err(Error::AsymmetricWeights(asym));
        }
        Ok(Self {
            sigma,
            kernel: None,
            pi,
            interaction,
            mode: Mode::Local,
        })
    }

    pub fn species_count(&self) -> usize {
        self.pi.len()
    }

    /// The local counterpart with the same `sigma`, `pi` and `a`.
    pub fn localized(&self) -> Result<Self> {
        Self::local(self.sigma, self.interaction.clone(), self.pi.clone())
    }

    fn kernel_ref(&self) -> Result<&KernelRaster> {
        self.kernel
            .as_deref()
            .ok_or_else(|| Error::InvalidScheme("nonlocal mode requires a kernel".into()))
    }

    /// True when the potentials vanish identically.
    fn is_free(&self) -> bool {
        match self.mode {
            Mode::Local => self.interaction.is_zero(),
            Mode::Nonlocal => self.kernel.as_ref().is_none_or(|k| k.interaction().is_some_and(|a| a.is_zero())),
        }
    }

    fn check_state(&self, u: &FieldSet) -> Result<()> {
        if u.species_count() != self.species_count() {
            return Err(Error::SpeciesMismatch {
                expected: self.species_count(),
                got: u.species_count(),
            });
        }
        if let (Mode::Nonlocal, Some(k)) = (self.mode, &self.kernel) {
            same_grid(k.grid(), u.grid())?;
        }
        Ok(())
    }

    /// Potentials on raw arrays; linear in `u`.
    pub(crate) fn potential_values(&self, u: &[Vec<f64>]) -> Vec<Vec<f64>> {
        if self.is_free() {
            return vec![vec![0.0; u[0].len()]; u.len()];
        }
        match self.mode {
            Mode::Nonlocal => self.kernel.as_ref().expect("checked").apply(u),
            Mode::Local => {
                let n = u.len();
                (0..n)
                    .map(|i| {
                        let mut p = vec![0.0; u[0].len()];
                        for (j, uj) in u.iter().enumerate() {
                            let a = self.interaction.get(i, j);
                            if a != 0.0 {
                                for (pv, v) in p.iter_mut().zip(uj) {
                                    *pv += a * v;
                                }
                            }
                        }
                        p
                    })
                    .collect()
            }
        }
    }
}

/// Time integrator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ImplicitEntropy,
    SemiImplicit,
}

/// Face density used in the drift flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxAverage {
    Arithmetic,
    Upwind,
    /// `(b - a) / (log b - log a)`; turns `u D(log u)` into `D u` exactly.
    Logarithmic,
}

/// Numerical parameters of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub tau: f64,
    pub t_end: f64,
    pub variant: Variant,
    /// Bound on `tau * ||R||_inf`.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub delta_reg: f64,
    pub u_floor: f64,
    pub flux_average: FluxAverage,
    /// Semi-implicit only: fail instead of substepping when the CFL bound is violated.
    pub cfl_fatal: bool,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            t_end: 0.1,
            variant: Variant::ImplicitEntropy,
            newton_tol: 1e-11,
            newton_max_iter: 50,
            delta_reg: 0.0,
            u_floor: 1e-12,
            flux_average: FluxAverage::Arithmetic,
            cfl_fatal: false,
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScheme(m));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be >= 0, got {}", self.t_end));
        }
        if !(self.newton_tol > 0.0) {
            return bad(format!("newton_tol must be > 0, got {}", self.newton_tol));
        }
        if self.newton_max_iter == 0 {
            return bad("newton_max_iter must be >= 1".into());
        }
        if !(self.delta_reg >= 0.0 && self.delta_reg.is_finite()) {
            return bad(format!("delta_reg must be >= 0, got {}", self.delta_reg));
        }
        if !(self.u_floor > 0.0) {
            return bad(format!("u_floor must be > 0, got {}", self.u_floor));
        }
        Ok(())
    }

    /// Number of steps; `t_end` snaps to the nearest multiple of `tau`.
    pub fn step_count(&self) -> usize {
        (self.t_end / self.tau).round() as usize
    }
}

/// Per-step solver diagnostics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepReport {
    pub newton_iters: usize,
    /// `tau * ||R||_inf` at the returned state (0 for the semi-implicit variant).
    pub residual_norm: f64,
    pub mass_drift: Vec<f64>,
    pub h1_change: f64,
    pub h2_change: f64,
    pub accepted: bool,
    /// The step was split (Newton retry with `tau / 2`, or CFL substeps).
    pub retried: bool,
    pub linear_iters: usize,
    /// Mass removed by clipping negative undershoots.
    pub clipped_mass: f64,
    /// Local runs: `alpha * sum_i ||grad u_i||^2` at the new state.
    pub alpha_gradient: Option<f64>,
}

/// Entropy report at one computed state plus the step that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub time: f64,
    pub entropy: EntropyReport,
    pub step: Option<StepReport>,
}

/// Output of [`simulate`].
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<FieldSet>,
    /// One entry per computed state, starting at `t = 0`.
    pub diagnostics: Vec<Diagnostic>,
    /// Set when a step failed; the trajectory then ends at the last good state.
    pub error: Option<Error>,
}

impl Trajectory {
    pub fn is_complete(&self) -> bool {
        self.error.is_none()
    }

    pub fn final_state(&self) -> &FieldSet {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Monitored quantities of `u` under `params`.
pub fn entropy_report(u: &FieldSet, params: &ModelParams) -> Result<EntropyReport> {
    params.check_state(u)?;
    let h1 = shannon_entropy(u, &params.pi)?;
    let fisher = fisher_dissipation(u, &params.pi, params.sigma)?;
    let (h2, h2_local, drift) = match params.mode {
        Mode::Nonlocal => {
            let k = params.kernel_ref()?;
            (Some(rao_entropy(u, k, &params.pi)?), None, drift_dissipation(u, k, &params.pi)?)
        }
        Mode::Local => (
            None,
            Some(rao_entropy_local(u, &params.interaction, &params.pi)?),
            drift_dissipation_local(u, &params.interaction, &params.pi)?,
        ),
    };
    Ok(EntropyReport {
        h1,
        h2,
        h2_local,
        fisher_dissipation: fisher,
        drift_dissipation: drift,
        min_density: u.min(),
        max_density: u.max(),
        masses: u.masses(),
        species_min: u.fields().iter().map(|f| f.min()).collect(),
        species_max: u.fields().iter().map(|f| f.max()).collect(),
    })
}

/// `H_2` for nonlocal runs, `H_2^0` for local ones.
pub(crate) fn second_entropy(u: &FieldSet, params: &ModelParams) -> Result<f64> {
    match params.mode {
        Mode::Nonlocal => rao_entropy(u, params.kernel_ref()?, &params.pi),
        Mode::Local => rao_entropy_local(u, &params.interaction, &params.pi),
    }
}

fn fill_changes(prev: &FieldSet, next: &FieldSet, params: &ModelParams, rep: &mut StepReport) -> Result<()> {
    rep.mass_drift = next.masses().iter().zip(prev.masses()).map(|(a, b)| a - b).collect();
    rep.h1_change = shannon_entropy(next, &params.pi)? - shannon_entropy(prev, &params.pi)?;
    rep.h2_change = second_entropy(next, params)? - second_entropy(prev, params)?;
    Ok(())
}

/// One implicit Euler step in entropy variables.
pub fn step_implicit_entropy(
    u_prev: &FieldSet,
    params: &ModelParams,
    config: &SchemeConfig,
) -> Result<(FieldSet, StepReport)> {
    config.validate()?;
    params.check_state(u_prev)?;
    u_prev.check_nonnegative()?;
    let (u, mut rep) = implicit::step_with_retry(u_prev, params, config)?;
    fill_changes(u_prev, &u, params, &mut rep)?;
    Ok((u, rep))
}

/// Smallest eigenvalue of the symmetric matrix `(pi_i a_ij)`.
pub fn alpha_local(a: &InteractionMatrix, pi: &ReversibleMeasure) -> f64 {
    let m = a.weighted(pi);
    let sym = (&m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Implicit step of the local system `p_i = sum_j a_ij u_j`.
pub fn step_local(u_prev: &FieldSet, params: &ModelParams, config: &SchemeConfig) -> Result<(FieldSet, StepReport)> {
    let local;
    let params = if params.mode == Mode::Local {
        params
    } else {
        local = params.localized()?;
        &local
    };
    config.validate()?;
    params.check_state(u_prev)?;
    u_prev.check_nonnegative()?;
    let n = params.species_count();
    for u_sample in [
        u_prev.fields().iter().map(|f| f.min().max(config.u_floor)).collect::<Vec<_>>(),
        u_prev.fields().iter().map(|f| f.max().max(config.u_floor)).collect(),
    ] {
        let rep = check_petrovskii(&params.interaction, &u_sample)?;
        if !rep.pass {
            warn!("diag(u) a is not positively stable at u = {:?}", &u_sample[..n]);
        }
    }
    let (u, mut rep) = implicit::step_with_retry(u_prev, params, config)?;
    fill_changes(u_prev, &u, params, &mut rep)?;
    let alpha = alpha_local(&params.interaction, &params.pi);
    rep.alpha_gradient = Some(alpha * crate::entropy::gradient_energy(&u)?);
    Ok((u, rep))
}

/// Implicit diffusion, explicit upwind drift.
pub fn step_semi_implicit(
    u_prev: &FieldSet,
    params: &ModelParams,
    config: &SchemeConfig,
) -> Result<(FieldSet, StepReport)> {
    config.validate()?;
    params.check_state(u_prev)?;
    u_prev.check_nonnegative()?;
    let (u, mut rep) = semi::step(u_prev, params, config)?;
    fill_changes(u_prev, &u, params, &mut rep)?;
    Ok((u, rep))
}

fn advance(u: &FieldSet, params: &ModelParams, config: &SchemeConfig) -> Result<(FieldSet, StepReport)> {
    match (config.variant, params.mode) {
        (Variant::SemiImplicit, _) => step_semi_implicit(u, params, config),
        (Variant::ImplicitEntropy, Mode::Local) => step_local(u, params, config),
        (Variant::ImplicitEntropy, Mode::Nonlocal) => step_implicit_entropy(u, params, config),
    }
}

/// Marches `u0` to `t_end`, storing states at the requested output times.
///
/// Output times snap to the nearest step; `t = 0` and `t_end` are always stored.
pub fn simulate(
    u0: &FieldSet,
    params: &ModelParams,
    config: &SchemeConfig,
    output_times: &[f64],
) -> Result<Trajectory> {
    config.validate()?;
    params.check_state(u0)?;
    u0.check_nonnegative()?;
    let steps = config.step_count();
    let t_end = steps as f64 * config.tau;
    let mut marks = vec![false; steps + 1];
    marks[0] = true;
    marks[steps] = true;
    for &t in output_times {
        if !(t >= 0.0 && t <= config.t_end * (1.0 + 1e-12) + 1e-300) {
            return Err(Error::InvalidScheme(format!("output time {t} outside [0, {}]", config.t_end)));
        }
        marks[((t / config.tau).round() as usize).min(steps)] = true;
    }
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![u0.clone()],
        diagnostics: vec![Diagnostic {
            time: 0.0,
            entropy: entropy_report(u0, params)?,
            step: None,
        }],
        error: None,
    };
    let mut u = u0.clone();
    for k in 1..=steps {
        let time = if k == steps { t_end } else { k as f64 * config.tau };
        let step = advance(&u, params, config).and_then(|(next, rep)| {
            let entropy = entropy_report(&next, params)?;
            Ok((next, rep, entropy))
        });
        match step {
            Ok((next, rep, entropy)) => {
                u = next;
                traj.diagnostics.push(Diagnostic {
                    time,
                    entropy,
                    step: Some(rep),
                });
                if marks[k] {
                    traj.times.push(time);
                    traj.states.push(u.clone());
                }
            }
            Err(e) => {
                warn!("step {k} at t = {time} failed: {e}");
                traj.error = Some(e);
                break;
            }
        }
    }
    Ok(traj)
}

/// `lambda = max_i sum_j ||Delta K_ij||_inf mass_j(u0)`.
pub fn estimate_lambda(k: &KernelRaster, u0: &FieldSet, pi: &ReversibleMeasure) -> Result<f64> {
    let n = k.species_count();
    if u0.species_count() != n || pi.len() != n {
        return Err(Error::SpeciesMismatch {
            expected: n,
            got: u0.species_count(),
        });
    }
    same_grid(k.grid(), u0.grid())?;
    let masses = u0.masses();
    let mut lambda = 0.0_f64;
    for i in 0..n {
        let mut row = 0.0;
        for (j, m) in masses.iter().enumerate() {
            let lap = kernel_laplacian(k, i, j)?;
            let sup = lap.values().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            row += sup * m;
        }
        lambda = lambda.max(row);
    }
    Ok(lambda)
}

/// Result of a positive-stability test of `diag(u) a`.
#[derive(Debug, Clone, PartialEq)]
pub struct PetrovskiiReport {
    pub eigenvalues: Vec<Complex64>,
    pub pass: bool,
}

/// Checks whether `diag(u) a` has only eigenvalues with positive real part.
pub fn check_petrovskii(a: &InteractionMatrix, u_sample: &[f64]) -> Result<PetrovskiiReport> {
    let n = a.n();
    if u_sample.len() != n {
        return Err(Error::SpeciesMismatch {
            expected: n,
            got: u_sample.len(),
        });
    }
    if let Some((i, &v)) = u_sample.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonpositiveReference { species: i, value: v });
    }
    let m = DMatrix::from_fn(n, n, |i, j| u_sample[i] * a.get(i, j));
    let mut eigenvalues: Vec<Complex64> = m.complex_eigenvalues().iter().cloned().collect();
    eigenvalues.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    let pass = eigenvalues.iter().all(|z| z.re > 1e-12);
    Ok(PetrovskiiReport { eigenvalues, pass })
}

/// Grid used by a parameter set, if it carries a kernel.
pub fn model_grid(params: &ModelParams) -> Option<TorusGrid> {
    params.kernel.as_ref().map(|k| *k.grid())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{KernelFamily, KernelSpec};
    use crate::grid::Field;
    use std::f64::consts::PI;

    fn heat_params(n: usize) -> ModelParams {
        ModelParams::local(1.0, InteractionMatrix::zeros(n), ReversibleMeasure::uniform(n)).unwrap()
    }

    #[test]
    fn petrovskii_examples() {
        let id = InteractionMatrix::identity(2);
        assert!(check_petrovskii(&id, &[0.3, 2.0]).unwrap().pass);
        let bad = InteractionMatrix::new(vec![vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let r = check_petrovskii(&bad, &[1.0, 1.0]).unwrap();
        assert!(!r.pass);
        assert!((r.eigenvalues[0].re + 1.0).abs() < 1e-12);
        assert!((r.eigenvalues[1].re - 3.0).abs() < 1e-12);
        let good = InteractionMatrix::new(vec![vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let r = check_petrovskii(&good, &[1.0, 1.0]).unwrap();
        assert!(r.pass);
        assert!((r.eigenvalues[0].re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_of_simple_matrix() {
        let a = InteractionMatrix::new(vec![vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let pi = ReversibleMeasure::uniform(2);
        // pi normalised to 1/2 each
        assert!((alpha_local(&a, &pi) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_state_is_fixed_point() {
        let g = TorusGrid::new(1, 32, 1.0).unwrap();
        let u = FieldSet::constant(g, &[0.7, 1.3]);
        let cfg = SchemeConfig {
            tau: 0.01,
            ..Default::default()
        };
        let (v, rep) = step_local(&u, &heat_params(2), &cfg).unwrap();
        assert!(rep.accepted);
        for (a, b) in v.to_vecs().iter().flatten().zip(u.to_vecs().iter().flatten()) {
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * b);
        }
    }

    #[test]
    fn zero_horizon_trajectory() {
        let g = TorusGrid::new(1, 16, 1.0).unwrap();
        let u = FieldSet::constant(g, &[1.0]);
        let cfg = SchemeConfig {
            tau: 0.01,
            t_end: 0.0,
            ..Default::default()
        };
        let t = simulate(&u, &heat_params(1), &cfg, &[]).unwrap();
        assert_eq!(t.times, vec![0.0]);
        assert_eq!(t.states.len(), 1);
    }

    #[test]
    fn heat_mode_decay() {
        let g = TorusGrid::new(1, 64, 1.0).unwrap();
        let u0 = FieldSet::new(vec![Field::from_fn(g, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos())]).unwrap();
        let cfg = SchemeConfig {
            tau: 2.5e-4,
            t_end: 0.1,
            ..Default::default()
        };
        let t = simulate(&u0, &heat_params(1), &cfg, &[]).unwrap();
        assert!(t.is_complete());
        let u = t.final_state().field(0);
        let amp: f64 = u
            .values()
            .iter()
            .enumerate()
            .map(|(k, v)| 2.0 * v * (2.0 * PI * g.center(k)[0]).cos())
            .sum::<f64>()
            / g.len() as f64;
        let exact = 0.5 * (-4.0 * PI * PI * 0.1_f64).exp();
        assert!((amp - exact).abs() / exact < 0.03, "{amp} vs {exact}");
    }

    #[test]
    fn lambda_is_linear_in_mass() {
        let g = TorusGrid::new(1, 64, 1.0).unwrap();
        let spec = KernelSpec {
            family: KernelFamily::Gaussian { epsilon: 0.2 },
            interaction: InteractionMatrix::identity(1),
        };
        let k = KernelRaster::build(&spec, g).unwrap();
        let pi = ReversibleMeasure::uniform(1);
        assert_eq!(estimate_lambda(&k, &FieldSet::constant(g, &[0.0]), &pi).unwrap(), 0.0);
        let l1 = estimate_lambda(&k, &FieldSet::constant(g, &[1.0]), &pi).unwrap();
        let l2 = estimate_lambda(&k, &FieldSet::constant(g, &[2.0]), &pi).unwrap();
        assert!(l1 > 0.0);
        assert!((l2 - 2.0 * l1).abs() <= 1e-12 * l2);
    }

    #[test]
    fn lambda_refused_for_indicator() {
        let g = TorusGrid::new(1, 64, 1.0).unwrap();
        let spec = KernelSpec {
            family: KernelFamily::IndicatorBall { radius: 0.1 },
            interaction: InteractionMatrix::identity(1),
        };
        let k = KernelRaster::build(&spec, g).unwrap();
        let r = estimate_lambda(&k, &FieldSet::constant(g, &[1.0]), &ReversibleMeasure::uniform(1));
        assert!(matches!(r, Err(Error::KernelNotSmooth(_))));
    }

    #[test]
    fn rejects_bad_config() {
        let bad = SchemeConfig {
            tau: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(ModelParams::local(0.0, InteractionMatrix::zeros(1), ReversibleMeasure::uniform(1)).is_err());
    }
}
