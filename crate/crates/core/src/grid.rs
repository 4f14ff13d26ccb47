//! Uniform cell-centred grids on the periodic d-torus and the discrete calculus
//! used throughout the crate.
//!
//! Layout is row-major: in 2D the flat index is `i0 * N + i1`, so axis 0 is the
//! slow axis. Cell `k` along an axis has its centre at `(k + 1/2) h`.

use crate::error::{Error, Result};

/// A periodic uniform grid with `N` cells per dimension and period `L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusGrid {
    dim: usize,
    cells: usize,
    period: f64,
    h: f64,
}

impl TorusGrid {
    pub fn new(dim: usize, cells: usize, period: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidDimension(dim));
        }
        if cells < 8 || !cells.is_multiple_of(2) {
            return Err(Error::OddCells(cells));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::NonpositivePeriod(period));
        }
        Ok(Self {
            dim,
            cells,
            period,
            h: period / cells as f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per dimension.
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn cell_size(&self) -> f64 {
        self.h
    }

    /// Total number of cells, `N^d`.
    pub fn len(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Measure of the torus, `L^d`.
    pub fn volume(&self) -> f64 {
        self.period.powi(self.dim as i32)
    }

    /// Flat-index stride of an axis.
    pub fn stride(&self, axis: usize) -> usize {
        debug_assert!(axis < self.dim);
        if self.dim == 2 && axis == 0 {
            self.cells
        } else {
            1
        }
    }

    /// Integer coordinates of a flat index.
    pub fn coords(&self, idx: usize) -> [usize; 2] {
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx / self.cells, idx % self.cells]
        }
    }

    pub fn index(&self, coords: [usize; 2]) -> usize {
        if self.dim == 1 {
            coords[0]
        } else {
            coords[0] * self.cells + coords[1]
        }
    }

    /// Physical coordinates of the cell centre (unused axes are zero).
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let c = self.coords(idx);
        let mut x = [0.0; 2];
        for (axis, xa) in x.iter_mut().enumerate().take(self.dim) {
            *xa = (c[axis] as f64 + 0.5) * self.h;
        }
        x
    }

    /// Flat index of the cell `offset` steps away along `axis`, wrapping.
    pub fn neighbor(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let mut c = self.coords(idx);
        let n = self.cells as isize;
        c[axis] = (c[axis] as isize + offset).rem_euclid(n) as usize;
        self.index(c)
    }
}

/// Deterministic pairwise summation; the split points depend only on length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        s
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Pairwise sum of `f(i)` over `0..len`.
pub fn pairwise_sum_by(len: usize, f: impl Fn(usize) -> f64) -> f64 {
    fn rec(lo: usize, hi: usize, f: &dyn Fn(usize) -> f64) -> f64 {
        if hi - lo <= 32 {
            let mut s = 0.0;
            for i in lo..hi {
                s += f(i);
            }
            s
        } else {
            let mid = lo + (hi - lo) / 2;
            rec(lo, mid, f) + rec(mid, hi, f)
        }
    }
    rec(0, len, &f)
}

/// Cell-centred samples of a scalar on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { grid, values })
    }

    /// Builds a field without the finiteness scan; callers guarantee the length.
    pub(crate) fn from_raw(grid: TorusGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f` at cell centres.
    pub fn from_fn(grid: TorusGrid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.center(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Circular shift: `out[x + offset] = self[x]`.
    pub fn shifted(&self, offset: [isize; 2]) -> Field {
        let g = self.grid;
        let mut out = vec![0.0; g.len()];
        for (i, &v) in self.values.iter().enumerate() {
            let mut j = i;
            for (axis, &off) in offset.iter().enumerate().take(g.dim()) {
                j = g.neighbor(j, axis, off);
            }
            out[j] = v;
        }
        Field::from_raw(g, out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        same_grid(&self.grid, &other.grid)?;
        Ok(Field::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }
}

pub(crate) fn same_grid(a: &TorusGrid, b: &TorusGrid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// The state vector `u = (u_1, ..., u_n)`: one field per species on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSet {
    grid: TorusGrid,
    fields: Vec<Field>,
}

impl FieldSet {
    pub fn new(fields: Vec<Field>) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::InvalidScheme("a field set needs at least one species".into()))?;
        let grid = first.grid;
        for f in &fields {
            same_grid(&grid, &f.grid)?;
        }
        Ok(Self { grid, fields })
    }

    pub(crate) fn from_raw(grid: TorusGrid, data: Vec<Vec<f64>>) -> Self {
        Self {
            grid,
            fields: data.into_iter().map(|v| Field::from_raw(grid, v)).collect(),
        }
    }

    pub fn constant(grid: TorusGrid, values: &[f64]) -> Self {
        Self {
            grid,
            fields: values.iter().map(|&c| Field::constant(grid, c)).collect(),
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn species_count(&self) -> usize {
        self.fields.len()
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn field(&self, i: usize) -> &Field {
        &self.fields[i]
    }

    pub fn field_mut(&mut self, i: usize) -> &mut Field {
        &mut self.fields[i]
    }

    pub fn into_fields(self) -> Vec<Field> {
        self.fields
    }

    /// Copies the raw species arrays.
    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.fields.iter().map(|f| f.values.clone()).collect()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.fields.iter().map(integrate).collect()
    }

    pub fn min(&self) -> f64 {
        self.fields.iter().map(Field::min).fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.fields
            .iter()
            .map(Field::max)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn check_nonnegative(&self) -> Result<()> {
        for (species, f) in self.fields.iter().enumerate() {
            if let Some(&value) = f.values.iter().find(|&&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::NegativeDensity { species, value });
            }
        }
        Ok(())
    }

    /// `self + alpha * other`, species-wise.
    pub fn axpy(&self, alpha: f64, other: &FieldSet) -> Result<FieldSet> {
        same_grid(&self.grid, &other.grid)?;
        if self.species_count() != other.species_count() {
            return Err(Error::SpeciesMismatch {
                expected: self.species_count(),
                got: other.species_count(),
            });
        }
        let fields = self
            .fields
            .iter()
            .zip(&other.fields)
            .map(|(a, b)| a.zip_map(b, |x, y| x + alpha * y))
            .collect::<Result<Vec<_>>>()?;
        Ok(FieldSet {
            grid: self.grid,
            fields,
        })
    }

    pub fn scaled(&self, c: f64) -> FieldSet {
        FieldSet {
            grid: self.grid,
            fields: self.fields.iter().map(|f| f.map(|v| c * v)).collect(),
        }
    }
}

/// Midpoint quadrature `h^d * sum(values)`.
pub fn integrate(f: &Field) -> f64 {
    f.grid.cell_volume() * pairwise_sum(&f.values)
}

/// Discrete `L^p` norm; `p = f64::INFINITY` gives the max norm.
pub fn lp_norm(f: &Field, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidExponent(p));
    }
    if p.is_infinite() {
        return Ok(f.values.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
    }
    let w = f.grid.cell_volume();
    let s = if p == 1.0 {
        pairwise_sum_by(f.values.len(), |i| f.values[i].abs())
    } else if p == 2.0 {
        pairwise_sum_by(f.values.len(), |i| f.values[i] * f.values[i])
    } else {
        pairwise_sum_by(f.values.len(), |i| f.values[i].abs().powf(p))
    };
    Ok((w * s).powf(1.0 / p))
}

/// Centred-difference gradient, one component per axis.
pub fn gradient(f: &Field) -> Vec<Field> {
    let g = f.grid;
    let inv = 1.0 / (2.0 * g.cell_size());
    (0..g.dim())
        .map(|axis| {
            let mut out = vec![0.0; g.len()];
            for (i, o) in out.iter_mut().enumerate() {
                let p = g.neighbor(i, axis, 1);
                let m = g.neighbor(i, axis, -1);
                *o = (f.values[p] - f.values[m]) * inv;
            }
            Field::from_raw(g, out)
        })
        .collect()
}

/// Three-point (1D) / five-point (2D) periodic Laplacian.
pub fn laplacian(f: &Field) -> Field {
    let mut out = vec![0.0; f.grid.len()];
    laplacian_into(&f.grid, &f.values, &mut out);
    Field::from_raw(f.grid, out)
}

pub(crate) fn laplacian_into(g: &TorusGrid, src: &[f64], out: &mut [f64]) {
    let inv_h2 = 1.0 / (g.cell_size() * g.cell_size());
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for axis in 0..g.dim() {
            let p = g.neighbor(i, axis, 1);
            let m = g.neighbor(i, axis, -1);
            acc += src[p] - 2.0 * src[i] + src[m];
        }
        *o = acc * inv_h2;
    }
}

/// Centred-difference divergence of a vector field.
pub fn divergence(components: &[Field]) -> Result<Field> {
    let first = components.first().ok_or(Error::GridMismatch)?;
    let g = first.grid;
    if components.len() != g.dim() {
        return Err(Error::GridMismatch);
    }
    let mut out = vec![0.0; g.len()];
    for (axis, c) in components.iter().enumerate() {
        same_grid(&g, &c.grid)?;
        let dx = gradient(c);
        for (o, d) in out.iter_mut().zip(dx[axis].values()) {
            *o += d;
        }
    }
    Ok(Field::from_raw(g, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn make_grid_examples() {
        let g = TorusGrid::new(1, 8, 1.0).unwrap();
        assert_eq!(g.cell_size(), 0.125);
        let g2 = TorusGrid::new(2, 64, 1.0).unwrap();
        assert_eq!(g2.len(), 4096);
        assert_eq!(TorusGrid::new(1, 7, 1.0), Err(Error::OddCells(7)));
        assert_eq!(TorusGrid::new(3, 8, 1.0), Err(Error::InvalidDimension(3)));
        assert_eq!(TorusGrid::new(1, 6, 1.0), Err(Error::OddCells(6)));
        assert!(matches!(
            TorusGrid::new(1, 8, 0.0),
            Err(Error::NonpositivePeriod(_))
        ));
        assert_eq!(g.cell_size() * g.cells() as f64, g.period());
    }

    #[test]
    fn centers_are_offset_by_half_cell() {
        let g = TorusGrid::new(2, 8, 2.0).unwrap();
        let c = g.center(g.index([1, 3]));
        assert_eq!(c, [0.375, 0.875]);
    }

    #[test]
    fn integrate_examples() {
        let g = TorusGrid::new(1, 64, 1.0).unwrap();
        assert_eq!(integrate(&Field::constant(g, 1.0)), 1.0);
        let g2 = TorusGrid::new(2, 16, 2.0).unwrap();
        assert!((integrate(&Field::constant(g2, 3.0)) - 12.0).abs() < 1e-13);
        let f = Field::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        assert!(integrate(&f).abs() < 1e-14);
    }

    #[test]
    fn lp_norm_examples() {
        let g = TorusGrid::new(1, 16, 1.0).unwrap();
        assert_eq!(lp_norm(&Field::constant(g, 1.0), 1.0).unwrap(), 1.0);
        assert_eq!(
            lp_norm(&Field::constant(g, -2.0), f64::INFINITY).unwrap(),
            2.0
        );
        assert_eq!(
            lp_norm(&Field::constant(g, 1.0), 0.5),
            Err(Error::InvalidExponent(0.5))
        );
    }

    #[test]
    fn gradient_of_sine_is_second_order() {
        let mut errs = Vec::new();
        for n in [64usize, 128, 256] {
            let g = TorusGrid::new(1, n, 1.0).unwrap();
            let f = Field::from_fn(g, |x| (2.0 * PI * x[0]).sin());
            let d = &gradient(&f)[0];
            let exact = Field::from_fn(g, |x| 2.0 * PI * (2.0 * PI * x[0]).cos());
            let err = d.zip_map(&exact, |a, b| a - b).unwrap();
            errs.push(lp_norm(&err, f64::INFINITY).unwrap());
        }
        // Taylor remainder: (2 pi)^3 h^2 / 6.
        let h = 1.0 / 256.0;
        assert!(errs[2] <= (2.0 * PI).powi(3) * h * h / 6.0 * 1.01);
        assert!((errs[0] / errs[1]).log2() > 1.95);
        assert!((errs[1] / errs[2]).log2() > 1.95);
    }

    #[test]
    fn gradient_constant_and_sawtooth() {
        let g = TorusGrid::new(2, 8, 1.0).unwrap();
        for c in gradient(&Field::constant(g, 3.5)) {
            assert!(c.values().iter().all(|&v| v == 0.0));
        }
        let g1 = TorusGrid::new(1, 8, 1.0).unwrap();
        let saw = Field::new(g1, (0..8).map(|i| i as f64).collect()).unwrap();
        let d = &gradient(&saw)[0];
        for i in 1..7 {
            assert_eq!(d.values()[i], 1.0 / g1.cell_size());
        }
        // wrap cells see the jump, symmetrically
        assert_eq!(d.values()[0], d.values()[7]);
    }

    #[test]
    fn laplacian_of_cosine() {
        let g = TorusGrid::new(1, 256, 1.0).unwrap();
        let f = Field::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        let l = laplacian(&f);
        let exact = f.map(|v| -4.0 * PI * PI * v);
        let err = lp_norm(&l.zip_map(&exact, |a, b| a - b).unwrap(), f64::INFINITY).unwrap();
        let h = g.cell_size();
        assert!(err <= (2.0 * PI).powi(4) * h * h / 12.0 * 1.01);
        assert!(laplacian(&Field::constant(g, 2.0))
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_of_gradient_is_wide_laplacian() {
        let g = TorusGrid::new(2, 16, 1.0).unwrap();
        let f = Field::from_fn(g, |x| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos());
        let d = divergence(&gradient(&f)).unwrap();
        assert!(integrate(&d).abs() < 1e-12);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 45.0);
        assert_eq!(pairwise_sum_by(100, |i| i as f64), 4950.0);
    }
}
