//! TOML run configuration.
//!
//! ```toml
//! [grid]
//! dim = 1
//! cells = 128
//! period = 1.0
//!
//! [model]
//! sigma = 0.5
//! mode = "nonlocal"
//! interaction = [[1.0, 0.5], [0.5, 1.0]]
//!
//! [model.kernel]
//! family = "gaussian"
//! epsilon = 0.1
//!
//! [scheme]
//! tau = 1e-3
//! t_end = 0.1
//!
//! [initial]
//! generator = "random_positive"
//! base = [1.0, 1.0]
//! amplitude = 0.5
//! seed = 1
//!
//! [output]
//! directory = "out"
//! stride = 10
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FieldSet, TorusGrid};
use crate::init::InitialData;
use crate::kernels::{
    solve_reversible_measure, weighted_asymmetry, InteractionMatrix, KernelFamily, KernelRaster, KernelSpec,
    MollifierProfile, ReversibleMeasure,
};
use crate::scheme::{FluxAverage, Mode, ModelParams, SchemeConfig, Variant};

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub cells: usize,
    #[serde(default = "one")]
    pub period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    /// `gaussian`, `cauchy`, `indicator_ball` or `mollifier`.
    pub family: String,
    pub epsilon: Option<f64>,
    pub radius: Option<f64>,
    pub profile: Option<String>,
}

fn nonlocal() -> Mode {
    Mode::Nonlocal
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub sigma: f64,
    #[serde(default = "nonlocal")]
    pub mode: Mode,
    /// Defaults to the zero matrix.
    pub interaction: Option<Vec<Vec<f64>>>,
    /// Solved from detailed balance when absent.
    pub pi: Option<Vec<f64>>,
    pub kernel: Option<KernelSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: Option<String>,
    pub output_times: Vec<f64>,
    /// Store every `stride`-th step; overrides `output_times`.
    pub stride: Option<usize>,
    pub snapshots: bool,
}

fn gaussian_profile() -> String {
    "gaussian".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationSection {
    pub epsilons: Vec<f64>,
    #[serde(default = "gaussian_profile")]
    pub profile: String,
}

fn default_amplitude() -> f64 {
    1e-3
}

fn first_mode() -> Vec<i64> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniquenessSection {
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "first_mode")]
    pub mode: Vec<i64>,
    /// Constant added to the perturbation; nonzero values break mass neutrality.
    #[serde(default)]
    pub offset: f64,
    /// Settings of the same-data cross-check run.
    pub cross_variant: Option<Variant>,
    pub cross_newton_tol: Option<f64>,
    pub cross_flux_average: Option<FluxAverage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    /// Multiplies the estimated lambda (values below 1 stress the bound).
    #[serde(default = "one")]
    pub lambda_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    #[serde(default)]
    pub taus: Vec<f64>,
    #[serde(default)]
    pub cells: Vec<usize>,
    /// Grid of the temporal study; defaults to `grid.cells`.
    pub temporal_cells: Option<usize>,
}

/// Parsed and validated run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub model: ModelSection,
    #[serde(default)]
    pub scheme: SchemeConfig,
    pub initial: InitialData,
    #[serde(default)]
    pub output: OutputSection,
    pub localization: Option<LocalizationSection>,
    pub uniqueness: Option<UniquenessSection>,
    pub bounds: Option<BoundsSection>,
    pub convergence: Option<ConvergenceSection>,
    /// Non-fatal findings of validation.
    #[serde(skip)]
    pub warnings: Vec<String>,
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_profile(name: &str) -> Option<MollifierProfile> {
    MollifierProfile::parse(name)
}

impl RunConfig {
    /// Species count implied by the model and initial sections.
    pub fn species_count(&self) -> Option<usize> {
        self.model
            .interaction
            .as_ref()
            .map(|a| a.len())
            .or_else(|| self.model.pi.as_ref().map(|p| p.len()))
            .or_else(|| self.initial.species_count())
    }

    fn validate(&mut self) -> Result<()> {
        let mut errs: Vec<String> = Vec::new();
        let mut warns: Vec<String> = Vec::new();
        let g = &self.grid;
        if g.dim != 1 && g.dim != 2 {
            errs.push(format!("grid.dim must be 1 or 2, got {}", g.dim));
        }
        if g.cells < 8 || !g.cells.is_multiple_of(2) {
            errs.push(format!("grid.cells must be even and >= 8, got {}", g.cells));
        }
        if !(g.period > 0.0 && g.period.is_finite()) {
            errs.push(format!("grid.period must be > 0, got {}", g.period));
        }
        let m = &self.model;
        if !(m.sigma > 0.0 && m.sigma.is_finite()) {
            errs.push("model.sigma must be > 0".into());
        }
        let n = self.species_count();
        match n {
            None => errs.push("model.interaction is required to determine the number of species".into()),
            Some(0) => errs.push("model.interaction must have at least one row".into()),
            Some(n) => {
                if let Some(a) = &m.interaction {
                    if a.iter().any(|r| r.len() != n) {
                        errs.push(format!("model.interaction must be a square {n}x{n} matrix"));
                    } else if let Err(e) = InteractionMatrix::new(a.clone()) {
                        errs.push(format!("model.interaction: {e}"));
                    }
                }
                if let Some(pi) = &m.pi {
                    if pi.len() != n {
                        errs.push(format!("model.pi must have {n} entries, got {}", pi.len()));
                    } else if let Err(e) = ReversibleMeasure::new(pi.clone()) {
                        errs.push(format!("model.pi: {e}"));
                    }
                }
                if let Some(k) = self.initial.species_count() {
                    if k != n {
                        errs.push(format!("initial data has {k} species, model has {n}"));
                    }
                }
            }
        }
        match (&m.mode, &m.kernel) {
            (Mode::Nonlocal, None) => errs.push("model.kernel is required for mode = \"nonlocal\"".into()),
            (_, Some(k)) => {
                if let Err(e) = kernel_family(k) {
                    errs.push(e);
                } else if k.family == "indicator_ball" && self.bounds.is_some() {
                    warns.push(
                        "model.kernel: indicator_ball has no bounded Laplacian, so the lambda-based bounds check does not apply"
                            .into(),
                    );
                }
            }
            _ => {}
        }
        let s = &self.scheme;
        if !(s.tau > 0.0 && s.tau.is_finite()) {
            errs.push("scheme.tau must be > 0".into());
        }
        if !(s.t_end >= 0.0 && s.t_end.is_finite()) {
            errs.push("scheme.t_end must be >= 0".into());
        }
        if !(s.newton_tol > 0.0) {
            errs.push("scheme.newton_tol must be > 0".into());
        }
        if s.newton_max_iter == 0 {
            errs.push("scheme.newton_max_iter must be >= 1".into());
        }
        if !(s.delta_reg >= 0.0) {
            errs.push("scheme.delta_reg must be >= 0".into());
        }
        if !(s.u_floor > 0.0) {
            errs.push("scheme.u_floor must be > 0".into());
        }
        if let InitialData::Snapshot { path } = &self.initial {
            if !Path::new(path).exists() {
                errs.push(format!("initial.path {path:?} does not exist"));
            }
        }
        for t in &self.output.output_times {
            if !(*t >= 0.0 && *t <= s.t_end) {
                errs.push(format!("output.output_times entry {t} outside [0, scheme.t_end]"));
            }
        }
        if self.output.stride == Some(0) {
            errs.push("output.stride must be >= 1".into());
        }
        if let Some(l) = &self.localization {
            if l.epsilons.is_empty() || l.epsilons.iter().any(|e| !(*e > 0.0)) {
                errs.push("localization.epsilons must be a non-empty list of positive values".into());
            } else if l.epsilons.windows(2).any(|w| w[1] >= w[0]) {
                errs.push("localization.epsilons must be strictly decreasing".into());
            }
            if parse_profile(&l.profile).is_none() {
                errs.push(format!("localization.profile {:?} is unknown", l.profile));
            }
        }
        if let Some(u) = &self.uniqueness {
            if !(u.amplitude >= 0.0 && u.amplitude.is_finite()) {
                errs.push("uniqueness.amplitude must be >= 0".into());
            }
            if u.mode.len() != self.grid.dim {
                errs.push(format!("uniqueness.mode must have {} entries", self.grid.dim));
            }
            if let Some(t) = u.cross_newton_tol {
                if !(t > 0.0) {
                    errs.push("uniqueness.cross_newton_tol must be > 0".into());
                }
            }
        }
        if let Some(b) = &self.bounds {
            if !(b.lambda_scale >= 0.0) {
                errs.push("bounds.lambda_scale must be >= 0".into());
            }
        }
        if let Some(c) = &self.convergence {
            if c.taus.is_empty() && c.cells.is_empty() {
                errs.push("convergence needs taus or cells".into());
            }
            if c.taus.iter().any(|t| !(*t > 0.0)) {
                errs.push("convergence.taus must be positive".into());
            }
        }
        self.warnings = warns;
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(errs))
        }
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.grid.dim, self.grid.cells, self.grid.period)
    }

    pub fn interaction(&self) -> Result<InteractionMatrix> {
        match &self.model.interaction {
            Some(a) => InteractionMatrix::new(a.clone()),
            None => Ok(InteractionMatrix::zeros(self.species_count().unwrap_or(1))),
        }
    }

    /// Explicit `pi` (checked against the interaction matrix) or the solved one.
    pub fn measure(&self) -> Result<ReversibleMeasure> {
        let a = self.interaction()?;
        match &self.model.pi {
            Some(pi) => {
                let pi = ReversibleMeasure::new(pi.clone())?;
                let asym = weighted_asymmetry(&a, &pi);
                let tol = 1e-12 * a.max_abs().max(1.0);
                if asym > tol {
                    return Err(Error::DetailedBalanceViolated { residual: asym, tol });
                }
                Ok(pi)
            }
            None => solve_reversible_measure(&a),
        }
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        let k = self
            .model
            .kernel
            .as_ref()
            .ok_or_else(|| Error::InvalidKernel("no [model.kernel] section".into()))?;
        Ok(KernelSpec {
            family: kernel_family(k).map_err(Error::InvalidKernel)?,
            interaction: self.interaction()?,
        })
    }

    pub fn kernel(&self) -> Result<KernelRaster> {
        KernelRaster::build(&self.kernel_spec()?, self.grid()?)
    }

    /// Model parameters in the configured mode.
    pub fn params(&self) -> Result<ModelParams> {
        self.params_in(self.model.mode)
    }

    pub fn params_in(&self, mode: Mode) -> Result<ModelParams> {
        let pi = self.measure()?;
        match mode {
            Mode::Nonlocal => ModelParams::nonlocal(self.model.sigma, self.kernel()?, pi),
            Mode::Local => ModelParams::local(self.model.sigma, self.interaction()?, pi),
        }
    }

    pub fn initial_state(&self, seed: Option<u64>) -> Result<FieldSet> {
        self.initial.generate(self.grid()?, seed)
    }

    /// Output times from `stride` or the explicit list.
    pub fn output_times(&self) -> Vec<f64> {
        match self.output.stride {
            Some(s) => (0..=self.scheme.step_count())
                .step_by(s.max(1))
                .map(|k| k as f64 * self.scheme.tau)
                .collect(),
            None => self.output.output_times.clone(),
        }
    }
}

/// Kernel family of a `[model.kernel]` section, or an error message with its field path.
pub fn kernel_family(k: &KernelSection) -> std::result::Result<KernelFamily, String> {
    let positive = |v: Option<f64>, field: &str| match v {
        Some(x) if x > 0.0 && x.is_finite() => Ok(x),
        Some(_) => Err(format!("model.kernel.{field} must be > 0")),
        None => Err(format!("model.kernel.{field} is required for family {:?}", k.family)),
    };
    match k.family.as_str() {
        "gaussian" => Ok(KernelFamily::Gaussian {
            epsilon: positive(k.epsilon, "epsilon")?,
        }),
        "cauchy" => Ok(KernelFamily::Cauchy),
        "indicator_ball" | "indicator" => Ok(KernelFamily::IndicatorBall {
            radius: positive(k.radius, "radius")?,
        }),
        "mollifier" => {
            let name = k.profile.as_deref().unwrap_or("bump");
            let profile = parse_profile(name).ok_or_else(|| format!("model.kernel.profile {name:?} is unknown"))?;
            Ok(KernelFamily::Mollifier {
                epsilon: positive(k.epsilon, "epsilon")?,
                profile,
            })
        }
        other => Err(format!("model.kernel.family {other:?} is unknown")),
    }
}

/// Profile named in the `[localization]` section.
pub fn localization_profile(l: &LocalizationSection) -> Result<MollifierProfile> {
    parse_profile(&l.profile).ok_or_else(|| Error::InvalidKernel(format!("unknown profile {:?}", l.profile)))
}
