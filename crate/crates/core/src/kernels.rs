//! Interaction kernels `K_ij = a_ij K`: construction of periodised rasters,
//! detailed balance, and positive-definiteness certificates.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{pairwise_sum, Field, FieldSet, TorusGrid};
use crate::spectral::Spectral;

/// Radial profile `B` of the localisation family `a_ij / eps^d B(|z| / eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MollifierProfile {
    /// `exp(-1 / (1 - z^2))`, smooth.
    Bump,
    /// Self-convolution of a shifted, truncated Gaussian on `[-1/2, 1/2]`.
    /// Continuous with bounded second derivative and a nonnegative Fourier transform.
    Gaussian,
    /// `1 - |z|`; nonnegative transform but kinks at 0 and 1.
    Hat,
    /// `(1 + cos(pi z)) / 2`.
    Cosine,
}

impl MollifierProfile {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "bump" => Some(Self::Bump),
            "gaussian" => Some(Self::Gaussian),
            "hat" => Some(Self::Hat),
            "cosine" => Some(Self::Cosine),
            _ => None,
        }
    }

    /// Unnormalised profile on `[0, 1]`; zero outside.
    fn raw(self, z: f64) -> f64 {
        let z = z.abs();
        if z >= 1.0 {
            return 0.0;
        }
        match self {
            Self::Bump => (-1.0 / (1.0 - z * z)).exp(),
            Self::Gaussian => truncated_gaussian_autoconvolution(z),
            Self::Hat => 1.0 - z,
            Self::Cosine => 0.5 * (1.0 + (PI * z).cos()),
        }
    }

    /// Whether `Delta B` is bounded.
    pub fn has_bounded_laplacian(self) -> bool {
        !matches!(self, Self::Hat)
    }
}

const GAUSS_PROFILE_S: f64 = 0.15;

/// `(g * g)(z)` for `g(y) = exp(-y^2 / (2 s^2)) - exp(-1 / (8 s^2))` on `|y| <= 1/2`.
fn truncated_gaussian_autoconvolution(z: f64) -> f64 {
    let s = GAUSS_PROFILE_S;
    let c = (-1.0 / (8.0 * s * s)).exp();
    // overlap of [-1/2, 1/2] and [z - 1/2, z + 1/2]
    let a = (z - 0.5).max(-0.5);
    let b = (z + 0.5).min(0.5);
    if b <= a {
        return 0.0;
    }
    let erf = libm::erf;
    let sq2 = std::f64::consts::SQRT_2;
    // int_a^b G(y) G(z - y) dy
    let gg = (-z * z / (4.0 * s * s)).exp()
        * (s * PI.sqrt() / 2.0)
        * (erf((b - z / 2.0) / s) - erf((a - z / 2.0) / s));
    // int_a^b G(y) dy, and int_a^b G(z - y) dy
    let g_int = |lo: f64, hi: f64| s * (PI / 2.0).sqrt() * (erf(hi / (sq2 * s)) - erf(lo / (sq2 * s)));
    let g1 = g_int(a, b);
    let g2 = g_int(z - b, z - a);
    gg - c * (g1 + g2) + c * c * (b - a)
}

/// Composite Simpson rule on `[lo, hi]` with `m` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, m: usize) -> f64 {
    let h = (hi - lo) / m as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

/// Composite five-point Gauss-Legendre rule with `panels` equal panels.
fn gauss_legendre(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    const X: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683_1,
        0.538_469_310_105_683_1,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_47,
        0.478_628_670_499_366_47,
        0.236_926_885_056_189_08,
        0.236_926_885_056_189_08,
    ];
    let w = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let c = lo + (p as f64 + 0.5) * w;
        for (x, wt) in X.iter().zip(W) {
            total += wt * f(c + 0.5 * w * x);
        }
    }
    total * 0.5 * w
}

/// A profile scaled so that `B^eps -> delta_0` in dimension `dim`.
#[derive(Debug, Clone, Copy)]
struct NormalizedProfile {
    profile: MollifierProfile,
    scale: f64,
}

impl NormalizedProfile {
    fn new(profile: MollifierProfile, dim: usize) -> Result<Self> {
        let raw_mass = |p: &dyn Fn(f64) -> f64, rule: &dyn Fn(&dyn Fn(f64) -> f64) -> f64| {
            if dim == 1 {
                rule(&|z| p(z.abs()))
            } else {
                2.0 * PI * rule(&|r| p(r.abs()) * r.abs())
            }
        };
        let p = |z: f64| profile.raw(z);
        let mass = raw_mass(&p, &|f| {
            if dim == 1 {
                simpson(f, -1.0, 1.0, 20_000)
            } else {
                simpson(f, 0.0, 1.0, 20_000)
            }
        });
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::ProfileNormalization(mass));
        }
        let scale = 1.0 / mass;
        // independent rule for the check
        let q = |z: f64| scale * profile.raw(z);
        let check = raw_mass(&q, &|f| {
            if dim == 1 {
                gauss_legendre(f, -1.0, 1.0, 400)
            } else {
                gauss_legendre(f, 0.0, 1.0, 400)
            }
        });
        if (check - 1.0).abs() > 1e-8 {
            return Err(Error::ProfileNormalization(check));
        }
        Ok(Self { profile, scale })
    }

    fn eval(&self, z: f64) -> f64 {
        self.scale * self.profile.raw(z)
    }
}

/// Shape of the scalar kernel `K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    /// Indicator of the ball of the given radius.
    IndicatorBall { radius: f64 },
    /// `(2 pi eps^2)^{-d/2} exp(-|z|^2 / (2 eps^2))`.
    Gaussian { epsilon: f64 },
    /// `1 / (1 + |z|^2)`.
    Cauchy,
    /// `eps^{-d} B(|z| / eps)`.
    Mollifier {
        epsilon: f64,
        profile: MollifierProfile,
    },
}

impl KernelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            Self::IndicatorBall { .. } => "indicator_ball",
            Self::Gaussian { .. } => "gaussian",
            Self::Cauchy => "cauchy",
            Self::Mollifier { .. } => "mollifier",
        }
    }

    /// Whether `grad K` and `Delta K` are bounded.
    pub fn has_bounded_laplacian(&self) -> bool {
        match self {
            Self::IndicatorBall { .. } => false,
            Self::Gaussian { .. } | Self::Cauchy => true,
            Self::Mollifier { profile, .. } => profile.has_bounded_laplacian(),
        }
    }
}

/// Nonnegative `n x n` interaction coefficients, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    n: usize,
    a: Vec<f64>,
}

impl InteractionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidKernel("empty interaction matrix".into()));
        }
        let mut a = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidKernel(format!(
                    "interaction row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::InvalidInteraction { i, j, value: v });
                }
                a.push(v);
            }
        }
        Ok(Self { n, a })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            a: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = 1.0;
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.a.iter().all(|&v| v == 0.0)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.a.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// The weighted matrix `(pi_i a_ij)`.
    pub fn weighted(&self, pi: &ReversibleMeasure) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| pi.get(i) * self.get(i, j))
    }
}

/// Weights `pi_i > 0` with `sum pi_i = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReversibleMeasure {
    pi: Vec<f64>,
}

impl ReversibleMeasure {
    /// Validates positivity and normalises to unit sum.
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        if pi.is_empty() {
            return Err(Error::InvalidMeasure("empty".into()));
        }
        if let Some(v) = pi.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidMeasure(format!("entry {v} is not positive")));
        }
        let s: f64 = pi.iter().sum();
        Ok(Self {
            pi: pi.into_iter().map(|p| p / s).collect(),
        })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            pi: vec![1.0 / n as f64; n],
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        self.pi[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.pi
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }
}

/// Max over pairs of `|pi_i a_ij - pi_j a_ji|`.
pub fn weighted_asymmetry(a: &InteractionMatrix, pi: &ReversibleMeasure) -> f64 {
    let n = a.n();
    let mut r = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            r = r.max((pi.get(i) * a.get(i, j) - pi.get(j) * a.get(j, i)).abs());
        }
    }
    r
}

/// Solves `pi_i a_ij = pi_j a_ji` by spanning-tree propagation with cycle checks.
///
/// Disconnected components of the interaction graph are solved independently
/// (each rooted at weight 1) and the whole vector is normalised at the end.
pub fn solve_reversible_measure(a: &InteractionMatrix) -> Result<ReversibleMeasure> {
    let n = a.n();
    for i in 0..n {
        for j in 0..n {
            if i != j && a.get(i, j) > 0.0 && a.get(j, i) == 0.0 {
                return Err(Error::StructuralAsymmetry { i, j });
            }
        }
    }
    let mut pi = vec![0.0_f64; n];
    let mut visited = vec![false; n];
    for root in 0..n {
        if visited[root] {
            continue;
        }
        visited[root] = true;
        pi[root] = 1.0;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if i != j && !visited[j] && a.get(i, j) > 0.0 {
                    pi[j] = pi[i] * a.get(i, j) / a.get(j, i);
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    let measure = ReversibleMeasure::new(pi)?;
    let tol = 1e-12 * a.max_abs();
    for i in 0..n {
        for j in (i + 1)..n {
            let residual = (measure.get(i) * a.get(i, j) - measure.get(j) * a.get(j, i)).abs();
            if residual > tol {
                return Err(Error::NoReversibleMeasure { i, j, residual });
            }
        }
    }
    Ok(measure)
}

/// Specification of a kernel family together with its interaction matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub interaction: InteractionMatrix,
}

/// Periodised kernel samples on displacement nodes `z_k = k h` with cached
/// Fourier multipliers `hat K_ij = h^d DFT(K_ij)`.
#[derive(Debug, Clone)]
pub struct KernelRaster {
    grid: TorusGrid,
    n: usize,
    family: Option<KernelFamily>,
    interaction: Option<InteractionMatrix>,
    rasters: Vec<Field>,
    fourier: Vec<Vec<Complex64>>,
    masses: Vec<f64>,
    spectral: Spectral,
}

/// Folded displacement of raster index `k`: `min(k, N - k) h`.
fn folded(grid: &TorusGrid, idx: usize) -> [f64; 2] {
    let c = grid.coords(idx);
    let n = grid.cells();
    let mut z = [0.0; 2];
    for a in 0..grid.dim() {
        z[a] = c[a].min(n - c[a]) as f64 * grid.cell_size();
    }
    z
}

/// Lattice shifts `m` with `|m_a| <= reach` in each used dimension.
fn lattice(dim: usize, reach: i64) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    for m0 in -reach..=reach {
        if dim == 1 {
            out.push([m0 as f64, 0.0]);
        } else {
            for m1 in -reach..=reach {
                out.push([m0 as f64, m1 as f64]);
            }
        }
    }
    out
}

fn norm(z: [f64; 2]) -> f64 {
    (z[0] * z[0] + z[1] * z[1]).sqrt()
}

/// Length of `[lo, hi] ∩ [-r, r]`.
fn interval_overlap(lo: f64, hi: f64, r: f64) -> f64 {
    (hi.min(r) - lo.max(-r)).max(0.0)
}

/// Area of the rectangle `[x0, x1] x [y0, y1]` inside the disc of radius `r`.
fn rect_disc_overlap(x0: f64, x1: f64, y0: f64, y1: f64, r: f64) -> f64 {
    let lo = x0.max(-r);
    let hi = x1.min(r);
    if hi <= lo {
        return 0.0;
    }
    let s = |x: f64| (r * r - x * x).max(0.0).sqrt();
    // antiderivative of s
    let big_s = |x: f64| 0.5 * (x * s(x) + r * r * (x / r).clamp(-1.0, 1.0).asin());
    let mut breaks = vec![lo, hi];
    for y in [y0, y1] {
        if y.abs() < r {
            let xb = (r * r - y * y).sqrt();
            for x in [-xb, xb] {
                if x > lo && x < hi {
                    breaks.push(x);
                }
            }
        }
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut area = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let xm = 0.5 * (a + b);
        let sm = s(xm);
        let top_is_s = sm < y1;
        let bot_is_s = -sm > y0;
        let top = if top_is_s { sm } else { y1 };
        let bot = if bot_is_s { -sm } else { y0 };
        if top <= bot {
            continue;
        }
        let int_s = big_s(b) - big_s(a);
        let len = b - a;
        let top_int = if top_is_s { int_s } else { y1 * len };
        let bot_int = if bot_is_s { -int_s } else { y0 * len };
        area += top_int - bot_int;
    }
    area
}

impl KernelRaster {
    /// Samples `a_ij K` on the grid, periodising by lattice sums.
    pub fn build(spec: &KernelSpec, grid: TorusGrid) -> Result<Self> {
        let base = sample_family(&spec.family, &grid)?;
        let n = spec.interaction.n();
        let mut rasters = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let a = spec.interaction.get(i, j);
                rasters.push(base.map(|v| a * v));
            }
        }
        let mut out = Self::from_rasters(grid, n, rasters)?;
        out.family = Some(spec.family);
        out.interaction = Some(spec.interaction.clone());
        Ok(out)
    }

    /// General pair-dependent rasters, `rasters[i * n + j] = K_ij`.
    pub fn from_rasters(grid: TorusGrid, n: usize, rasters: Vec<Field>) -> Result<Self> {
        if rasters.len() != n * n {
            return Err(Error::SpeciesMismatch {
                expected: n * n,
                got: rasters.len(),
            });
        }
        for r in &rasters {
            crate::grid::same_grid(&grid, r.grid())?;
        }
        let spectral = Spectral::new(grid);
        let w = grid.cell_volume();
        let fourier = rasters
            .iter()
            .map(|r| {
                let mut f = spectral.forward_real(r.values());
                for c in &mut f {
                    *c *= w;
                }
                f
            })
            .collect();
        let masses = rasters.iter().map(crate::grid::integrate).collect();
        Ok(Self {
            grid,
            n,
            family: None,
            interaction: None,
            rasters,
            fourier,
            masses,
            spectral,
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn species_count(&self) -> usize {
        self.n
    }

    pub fn family(&self) -> Option<&KernelFamily> {
        self.family.as_ref()
    }

    pub fn interaction(&self) -> Option<&InteractionMatrix> {
        self.interaction.as_ref()
    }

    pub fn raster(&self, i: usize, j: usize) -> &Field {
        &self.rasters[i * self.n + j]
    }

    pub fn multipliers(&self, i: usize, j: usize) -> &[Complex64] {
        &self.fourier[i * self.n + j]
    }

    pub fn mass(&self, i: usize, j: usize) -> f64 {
        self.masses[i * self.n + j]
    }

    pub fn max_mass(&self) -> f64 {
        self.masses.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    /// `Delta K` is bounded for this kernel (unknown families count as not smooth).
    pub fn has_bounded_laplacian(&self) -> bool {
        self.family.is_some_and(|f| f.has_bounded_laplacian())
    }

    /// Maximum deviation of the cached multipliers from a fresh transform.
    pub fn fourier_consistency(&self) -> f64 {
        let w = self.grid.cell_volume();
        let mut err = 0.0_f64;
        for (r, f) in self.rasters.iter().zip(&self.fourier) {
            let fresh = self.spectral.forward_real(r.values());
            for (a, b) in fresh.iter().zip(f) {
                err = err.max((a * w - b).norm());
            }
        }
        err
    }

    /// `p_i = sum_j K_ij * v_j` on raw species arrays, through the multipliers.
    pub(crate) fn apply(&self, v: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let spectra: Vec<Vec<Complex64>> = v.iter().map(|x| self.spectral.forward_real(x)).collect();
        (0..self.n)
            .map(|i| self.spectral.inverse_real(self.combine(i, &spectra)))
            .collect()
    }

    /// `sum_j hat K_ij hat v_j` for one species.
    pub(crate) fn combine(&self, i: usize, spectra: &[Vec<Complex64>]) -> Vec<Complex64> {
        let len = self.grid.len();
        let mut acc = vec![Complex64::new(0.0, 0.0); len];
        for (j, vj) in spectra.iter().enumerate() {
            let m = self.multipliers(i, j);
            if self.masses[i * self.n + j] == 0.0 && m.iter().all(|c| c.norm() == 0.0) {
                continue;
            }
            for ((a, k), x) in acc.iter_mut().zip(m).zip(vj) {
                *a += k * x;
            }
        }
        acc
    }
}

fn sample_family(family: &KernelFamily, grid: &TorusGrid) -> Result<Field> {
    let dim = grid.dim();
    let l = grid.period();
    let h = grid.cell_size();
    let shifts = |radius: f64| lattice(dim, ((radius / l) + 0.5).ceil() as i64);
    let values: Vec<f64> = match *family {
        KernelFamily::IndicatorBall { radius } => {
            if !(radius > 0.0 && radius < l / 2.0) {
                return Err(Error::InvalidKernel(format!(
                    "indicator radius {radius} must lie in (0, L/2)"
                )));
            }
            let vol = grid.cell_volume();
            (0..grid.len())
                .map(|idx| {
                    let z = folded(grid, idx);
                    let mut area = 0.0;
                    for m in shifts(radius) {
                        let c = [z[0] + m[0] * l, z[1] + m[1] * l];
                        area += if dim == 1 {
                            interval_overlap(c[0] - h / 2.0, c[0] + h / 2.0, radius)
                        } else {
                            rect_disc_overlap(
                                c[0] - h / 2.0,
                                c[0] + h / 2.0,
                                c[1] - h / 2.0,
                                c[1] + h / 2.0,
                                radius,
                            )
                        };
                    }
                    area / vol
                })
                .collect()
        }
        KernelFamily::Gaussian { epsilon } => {
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return Err(Error::InvalidKernel(format!("gaussian epsilon {epsilon} must be > 0")));
            }
            if epsilon >= l / 2.0 {
                log::warn!("gaussian epsilon {epsilon} is not below L/2; periodisation is strong");
            }
            let c = (2.0 * PI * epsilon * epsilon).powf(-(dim as f64) / 2.0);
            // erfc(R / (sqrt 2 eps)) < 1e-14 beyond R = 8.5 eps
            let lat = shifts(8.5 * epsilon);
            (0..grid.len())
                .map(|idx| {
                    let z = folded(grid, idx);
                    let mut terms: Vec<f64> = lat
                        .iter()
                        .map(|m| {
                            let r = norm([z[0] + m[0] * l, z[1] + m[1] * l]);
                            c * (-r * r / (2.0 * epsilon * epsilon)).exp()
                        })
                        .collect();
                    terms.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    pairwise_sum(&terms)
                })
                .collect()
        }
        KernelFamily::Cauchy => {
            if dim != 1 {
                return Err(Error::InvalidKernel(
                    "the periodised Cauchy kernel diverges for d >= 2".into(),
                ));
            }
            // sum_m 1 / (1 + (x + m L)^2) = (pi / L) sinh(2 pi / L) / (cosh(2 pi / L) - cos(2 pi x / L))
            let q = 2.0 * PI / l;
            (0..grid.len())
                .map(|idx| {
                    let x = folded(grid, idx)[0];
                    (PI / l) * q.sinh() / (q.cosh() - (q * x).cos())
                })
                .collect()
        }
        KernelFamily::Mollifier { epsilon, profile } => {
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return Err(Error::InvalidKernel(format!("mollifier epsilon {epsilon} must be > 0")));
            }
            if epsilon >= l / 2.0 {
                log::warn!("mollifier epsilon {epsilon} is not below L/2");
            }
            let b = NormalizedProfile::new(profile, dim)?;
            let c = epsilon.powi(-(dim as i32));
            let lat = shifts(epsilon);
            (0..grid.len())
                .map(|idx| {
                    let z = folded(grid, idx);
                    lat.iter()
                        .map(|m| c * b.eval(norm([z[0] + m[0] * l, z[1] + m[1] * l]) / epsilon))
                        .sum()
                })
                .collect()
        }
    };
    Field::new(*grid, values)
}

/// Builds the raster of `spec` on `grid`.
pub fn build_kernel(spec: &KernelSpec, grid: TorusGrid) -> Result<KernelRaster> {
    KernelRaster::build(spec, grid)
}

/// Max over pairs and nodes of `|pi_i K_ij(z) - pi_j K_ji(-z)|`.
pub fn check_detailed_balance(k: &KernelRaster, pi: &ReversibleMeasure) -> f64 {
    let g = k.grid();
    let n = k.species_count();
    let neg: Vec<usize> = (0..g.len())
        .map(|idx| {
            let c = g.coords(idx);
            let mut m = [0usize; 2];
            for a in 0..g.dim() {
                m[a] = (g.cells() - c[a]) % g.cells();
            }
            g.index(m)
        })
        .collect();
    let mut r = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let kij = k.raster(i, j).values();
            let kji = k.raster(j, i).values();
            for (idx, &nidx) in neg.iter().enumerate() {
                r = r.max((pi.get(i) * kij[idx] - pi.get(j) * kji[nidx]).abs());
            }
        }
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    PositiveDefinite,
    NotPositiveDefinite,
    Inconclusive,
}

/// Mode minimising the smallest eigenvalue, with its eigenvector.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    /// Flat spectral index.
    pub index: usize,
    /// Signed wavenumbers per axis.
    pub mode: [i64; 2],
    /// Unit eigenvector, phase-fixed so its largest entry is real and positive.
    pub eigenvector: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdCertificate {
    pub verdict: Verdict,
    pub min_multiplier_eig: f64,
    /// `min_multiplier_eig` divided by the largest eigenvalue magnitude over all modes.
    pub normalized_min: f64,
    pub tolerance: f64,
    pub witness: Option<Witness>,
}

impl PdCertificate {
    /// Real test field `v_i(x) = Re(e_i exp(2 pi i xi . c / N))` on integer coordinates `c`.
    pub fn witness_field(&self, grid: &TorusGrid) -> Option<FieldSet> {
        let w = self.witness.as_ref()?;
        let n = grid.cells() as f64;
        let fields = w
            .eigenvector
            .iter()
            .map(|e| {
                let values = (0..grid.len())
                    .map(|idx| {
                        let c = grid.coords(idx);
                        let theta: f64 = (0..grid.dim())
                            .map(|a| 2.0 * PI * w.mode[a] as f64 * c[a] as f64 / n)
                            .sum();
                        (e * Complex64::from_polar(1.0, theta)).re
                    })
                    .collect();
                Field::from_raw(*grid, values)
            })
            .collect();
        FieldSet::new(fields).ok()
    }
}

/// Default certification tolerance, `1e-10 * max raster mass`.
pub fn default_pd_tolerance(k: &KernelRaster) -> f64 {
    1e-10 * k.max_mass().max(f64::MIN_POSITIVE)
}

/// Per-mode eigen-analysis of `M(xi) = (pi_i hat K_ij(xi))`.
///
/// The discrete quadratic form is a nonnegative combination of the Hermitian
/// parts of these matrices (Parseval), so the verdict is exact at grid resolution.
pub fn certify_positive_definite(
    k: &KernelRaster,
    pi: &ReversibleMeasure,
    tol: f64,
) -> Result<PdCertificate> {
    let residual = check_detailed_balance(k, pi);
    if residual > tol {
        return Err(Error::DetailedBalanceViolated { residual, tol });
    }
    let n = k.species_count();
    let g = k.grid();
    let mut min_eig = f64::INFINITY;
    let mut max_abs = 0.0_f64;
    let mut arg_min = 0usize;
    let mut finite = true;
    let eig_at = |idx: usize| {
        let m = DMatrix::from_fn(n, n, |i, j| k.multipliers(i, j)[idx] * pi.get(i));
        let herm = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigen()
    };
    for idx in 0..g.len() {
        let e = eig_at(idx);
        for &ev in e.eigenvalues.iter() {
            if !ev.is_finite() {
                finite = false;
            }
            max_abs = max_abs.max(ev.abs());
            if ev < min_eig {
                min_eig = ev;
                arg_min = idx;
            }
        }
    }
    let e = eig_at(arg_min);
    let (col, _) = e
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let mut v: Vec<Complex64> = e.eigenvectors.column(col).iter().copied().collect();
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
        .unwrap();
    let phase = pivot.conj() / pivot.norm();
    for c in &mut v {
        *c *= phase;
    }
    let spectral = k.spectral();
    let witness = Witness {
        index: arg_min,
        mode: spectral.mode(arg_min),
        eigenvector: v,
    };
    let verdict = if !finite {
        Verdict::Inconclusive
    } else if min_eig >= -tol {
        Verdict::PositiveDefinite
    } else {
        Verdict::NotPositiveDefinite
    };
    Ok(PdCertificate {
        verdict,
        min_multiplier_eig: min_eig,
        normalized_min: if max_abs > 0.0 { min_eig / max_abs } else { 0.0 },
        tolerance: tol,
        witness: Some(witness),
    })
}

/// Discrete double integral `sum_ij int int pi_i K_ij(x - y) v_i(x) v_j(y)`.
pub fn quadratic_form(k: &KernelRaster, pi: &ReversibleMeasure, v: &FieldSet) -> Result<f64> {
    crate::grid::same_grid(k.grid(), v.grid())?;
    if v.species_count() != k.species_count() {
        return Err(Error::SpeciesMismatch {
            expected: k.species_count(),
            got: v.species_count(),
        });
    }
    let vs = v.to_vecs();
    let p = k.apply(&vs);
    let w = k.grid().cell_volume();
    Ok((0..vs.len())
        .map(|i| {
            pi.get(i) * w * crate::grid::pairwise_sum_by(vs[i].len(), |x| vs[i][x] * p[i][x])
        })
        .sum())
}
