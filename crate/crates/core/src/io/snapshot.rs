//! Binary state snapshots.
//!
//! Layout (little-endian): `b"NLXD"`, version `u8 = 1`, dim `u8`, species `u16`,
//! `N` as `u32` per dimension, `L` as `f64` per dimension, time `f64`, then the
//! species rasters as row-major `f64`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{FieldSet, TorusGrid};

const MAGIC: &[u8; 4] = b"NLXD";
const VERSION: u8 = 1;

pub fn encode_snapshot(state: &FieldSet, time: f64) -> Result<Vec<u8>> {
    let g = state.grid();
    let n = state.species_count();
    if n > u16::MAX as usize {
        return Err(Error::BadHeader(format!("too many species: {n}")));
    }
    if !time.is_finite() || state.fields().iter().any(|f| f.values().iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteSnapshot);
    }
    let mut out = Vec::with_capacity(32 + 8 * n * g.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(g.dim() as u8);
    out.extend_from_slice(&(n as u16).to_le_bytes());
    for _ in 0..g.dim() {
        out.extend_from_slice(&(g.cells() as u32).to_le_bytes());
    }
    for _ in 0..g.dim() {
        out.extend_from_slice(&g.period().to_le_bytes());
    }
    out.extend_from_slice(&time.to_le_bytes());
    for f in state.fields() {
        for v in f.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.pos + k > self.bytes.len() {
            return Err(Error::BadHeader("header is truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<(FieldSet, f64)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(Error::BadHeader(format!("unsupported version {version}")));
    }
    let dim = r.take(1)?[0] as usize;
    if dim != 1 && dim != 2 {
        return Err(Error::BadHeader(format!("dimension {dim}")));
    }
    let n = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
    if n == 0 {
        return Err(Error::BadHeader("zero species".into()));
    }
    let mut cells = Vec::with_capacity(dim);
    for _ in 0..dim {
        cells.push(u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize);
    }
    let mut periods = Vec::with_capacity(dim);
    for _ in 0..dim {
        periods.push(r.f64()?);
    }
    let time = r.f64()?;
    if cells.iter().any(|&c| c != cells[0]) || periods.iter().any(|&p| p != periods[0]) {
        return Err(Error::BadHeader("anisotropic grids are not supported".into()));
    }
    let grid = TorusGrid::new(dim, cells[0], periods[0]).map_err(|e| Error::BadHeader(e.to_string()))?;
    if !time.is_finite() {
        return Err(Error::NonFiniteSnapshot);
    }
    let expected = n * grid.len() * 8;
    let found = bytes.len() - r.pos;
    if found < expected {
        return Err(Error::TruncatedPayload { expected, found });
    }
    if found > expected {
        return Err(Error::BadHeader(format!("{} trailing bytes after payload", found - expected)));
    }
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let mut v = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            let x = r.f64()?;
            if !x.is_finite() {
                return Err(Error::NonFiniteSnapshot);
            }
            v.push(x);
        }
        data.push(v);
    }
    Ok((FieldSet::from_raw(grid, data), time))
}

pub fn write_snapshot(state: &FieldSet, time: f64, path: &Path) -> Result<()> {
    fs::write(path, encode_snapshot(state, time)?)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<(FieldSet, f64)> {
    decode_snapshot(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Field;

    fn sample() -> FieldSet {
        let g = TorusGrid::new(2, 8, 1.5).unwrap();
        FieldSet::new(vec![
            Field::from_fn(g, |x| (x[0] * 7.3).sin() + 1.0),
            Field::from_fn(g, |x| 1.0 / 3.0 + x[1]),
        ])
        .unwrap()
    }

    #[test]
    fn round_trip_bitwise() {
        let s = sample();
        let (back, t) = decode_snapshot(&encode_snapshot(&s, 0.125).unwrap()).unwrap();
        assert_eq!(t, 0.125);
        for (a, b) in s.to_vecs().iter().flatten().zip(back.to_vecs().iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupt_inputs() {
        let mut bytes = encode_snapshot(&sample(), 0.0).unwrap();
        let short = bytes[..bytes.len() - 8].to_vec();
        assert!(matches!(decode_snapshot(&short), Err(Error::TruncatedPayload { .. })));
        bytes[0] = b'X';
        assert_eq!(decode_snapshot(&bytes), Err(Error::BadMagic));
        let mut nan = encode_snapshot(&sample(), 0.0).unwrap();
        let k = nan.len() - 8;
        nan[k..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert_eq!(decode_snapshot(&nan), Err(Error::NonFiniteSnapshot));
    }
}
