//! Built-in initial data.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, FieldSet, TorusGrid};

/// One Gaussian bump added to a species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub species: usize,
    pub center: Vec<f64>,
    pub width: f64,
    pub height: f64,
}

/// Initial-data generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// `u_i = values[i]`
    Constant { values: Vec<f64> },
    /// `u_i = base[i] (1 + amplitude cos(2 pi k . x / L))`
    SingleMode {
        base: Vec<f64>,
        amplitude: f64,
        #[serde(default = "default_mode")]
        mode: Vec<i64>,
    },
    /// `u_i = base[i] (1 + amplitude s_i(x))` with `s_i` a random trigonometric
    /// polynomial of degree `modes`, rescaled to `max |s_i| = 1`.
    RandomPositive {
        base: Vec<f64>,
        amplitude: f64,
        #[serde(default = "default_modes")]
        modes: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Constant background plus periodised Gaussian bumps.
    GaussianBumps { background: Vec<f64>, bumps: Vec<Bump> },
    /// State read from a snapshot file.
    Snapshot { path: String },
}

fn default_mode() -> Vec<i64> {
    vec![1]
}

fn default_modes() -> usize {
    3
}

fn check_positive(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidScheme(format!("{name} must list one value per species")));
    }
    if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::InvalidScheme(format!("{name} entries must be >= 0, got {x}")));
    }
    Ok(())
}

fn check_amplitude(amplitude: f64) -> Result<()> {
    if !(0.0..1.0).contains(&amplitude) {
        return Err(Error::InvalidScheme(format!("amplitude must lie in [0, 1), got {amplitude}")));
    }
    Ok(())
}

impl InitialData {
    /// Number of species the generator produces, when it is known without IO.
    pub fn species_count(&self) -> Option<usize> {
        match self {
            Self::Constant { values } => Some(values.len()),
            Self::SingleMode { base, .. } | Self::RandomPositive { base, .. } => Some(base.len()),
            Self::GaussianBumps { background, .. } => Some(background.len()),
            Self::Snapshot { .. } => None,
        }
    }

    /// Samples the generator at cell centres. `seed` overrides the stored seed.
    pub fn generate(&self, grid: TorusGrid, seed: Option<u64>) -> Result<FieldSet> {
        let l = grid.period();
        match self {
            Self::Constant { values } => {
                check_positive("values", values)?;
                Ok(FieldSet::constant(grid, values))
            }
            Self::SingleMode { base, amplitude, mode } => {
                check_positive("base", base)?;
                check_amplitude(*amplitude)?;
                if mode.len() != grid.dim() {
                    return Err(Error::InvalidScheme(format!(
                        "mode needs {} components, got {}",
                        grid.dim(),
                        mode.len()
                    )));
                }
                let fields = base
                    .iter()
                    .map(|&b| {
                        Field::from_fn(grid, |x| {
                            let phase: f64 = (0..grid.dim()).map(|a| mode[a] as f64 * x[a]).sum();
                            b * (1.0 + amplitude * (2.0 * PI * phase / l).cos())
                        })
                    })
                    .collect();
                FieldSet::new(fields)
            }
            Self::RandomPositive {
                base,
                amplitude,
                modes,
                seed: stored,
            } => {
                check_positive("base", base)?;
                check_amplitude(*amplitude)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(*stored));
                let m = *modes as i64;
                let mut fields = Vec::with_capacity(base.len());
                for &b in base {
                    let mut terms = Vec::new();
                    for k0 in -m..=m {
                        for k1 in if grid.dim() == 2 { -m..=m } else { 0..=0 } {
                            if (k0, k1) == (0, 0) {
                                continue;
                            }
                            let c: f64 = rng.gen_range(-1.0..1.0);
                            let phi: f64 = rng.gen_range(0.0..2.0 * PI);
                            terms.push((k0 as f64, k1 as f64, c, phi));
                        }
                    }
                    let s: Vec<f64> = (0..grid.len())
                        .map(|idx| {
                            let x = grid.center(idx);
                            terms
                                .iter()
                                .map(|&(k0, k1, c, phi)| c * (2.0 * PI * (k0 * x[0] + k1 * x[1]) / l + phi).cos())
                                .sum()
                        })
                        .collect();
                    let scale = s.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
                    let values = s
                        .iter()
                        .map(|v| b * (1.0 + amplitude * if scale > 0.0 { v / scale } else { 0.0 }))
                        .collect();
                    fields.push(Field::new(grid, values)?);
                }
                FieldSet::new(fields)
            }
            Self::GaussianBumps { background, bumps } => {
                check_positive("background", background)?;
                let mut vals: Vec<Vec<f64>> = background.iter().map(|&c| vec![c; grid.len()]).collect();
                for bump in bumps {
                    if bump.species >= background.len() {
                        return Err(Error::InvalidScheme(format!("bump species {} out of range", bump.species)));
                    }
                    if bump.center.len() != grid.dim() || !(bump.width > 0.0) || !(bump.height >= 0.0) {
                        return Err(Error::InvalidScheme("bump needs dim-length center, width > 0, height >= 0".into()));
                    }
                    for (idx, v) in vals[bump.species].iter_mut().enumerate() {
                        let x = grid.center(idx);
                        let mut r2 = 0.0;
                        for a in 0..grid.dim() {
                            let d = (x[a] - bump.center[a]).rem_euclid(l);
                            let d = d.min(l - d);
                            r2 += d * d;
                        }
                        *v += bump.height * (-r2 / (2.0 * bump.width * bump.width)).exp();
                    }
                }
                FieldSet::new(vals.into_iter().map(|v| Field::new(grid, v)).collect::<Result<_>>()?)
            }
            Self::Snapshot { path } => {
                let (state, _) = crate::io::snapshot::read_snapshot(std::path::Path::new(path))?;
                if state.grid() != &grid {
                    return Err(Error::GridMismatch);
                }
                Ok(state)
            }
        }
    }
}

/// Mass-neutral perturbation `amplitude * cos(2 pi k . x / L)` for every species.
pub fn mode_perturbation(grid: TorusGrid, n: usize, amplitude: f64, mode: &[i64]) -> FieldSet {
    let l = grid.period();
    let f = Field::from_fn(grid, |x| {
        let phase: f64 = (0..grid.dim()).map(|a| mode.get(a).copied().unwrap_or(0) as f64 * x[a]).sum();
        amplitude * (2.0 * PI * phase / l).cos()
    });
    FieldSet::from_raw(grid, vec![f.into_values(); n])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_positive_is_seeded_and_positive() {
        let g = TorusGrid::new(2, 16, 1.0).unwrap();
        let gen = InitialData::RandomPositive {
            base: vec![1.0, 2.0],
            amplitude: 0.5,
            modes: 2,
            seed: 7,
        };
        let a = gen.generate(g, None).unwrap();
        let b = gen.generate(g, None).unwrap();
        let c = gen.generate(g, Some(8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.min() >= 0.5 - 1e-12);
        assert!(a.field(1).max() <= 3.0 + 1e-12);
    }

    #[test]
    fn single_mode_mass() {
        let g = TorusGrid::new(1, 32, 2.0).unwrap();
        let u = InitialData::SingleMode {
            base: vec![1.0],
            amplitude: 0.5,
            mode: vec![1],
        }
        .generate(g, None)
        .unwrap();
        assert!((u.masses()[0] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn bumps_wrap_periodically() {
        let g = TorusGrid::new(1, 64, 1.0).unwrap();
        let u = InitialData::GaussianBumps {
            background: vec![0.1],
            bumps: vec![Bump {
                species: 0,
                center: vec![0.0],
                width: 0.05,
                height: 1.0,
            }],
        }
        .generate(g, None)
        .unwrap();
        let v = u.field(0).values();
        assert!((v[0] - v[63]).abs() < 1e-14);
    }

    #[test]
    fn perturbation_is_mass_neutral() {
        let g = TorusGrid::new(2, 16, 1.0).unwrap();
        let p = mode_perturbation(g, 2, 1e-3, &[1, 2]);
        assert!(p.masses().iter().all(|m| m.abs() < 1e-16));
    }
}
