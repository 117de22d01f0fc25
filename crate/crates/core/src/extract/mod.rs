//! Field sampling and iso-surface extraction.
//!
//! Fields are sampled at cell centers `((i+0.5)/m, …)`. Before extraction the
//! lattice is padded on every side with virtual samples lying on the faces of
//! the unit cube and valued below the threshold, so every extracted surface
//! is closed even when the field is inside at the outermost cells.

mod mc;
mod mesh;
mod ms;

pub use mc::{case_table, marching_cubes, marching_cubes_unpadded};
pub use mesh::{export_obj, parse_obj, Mesh};
pub use ms::{marching_squares, Contour};

use crate::decoder::Decoder;
use crate::error::{Error, Result};
use crate::format::{put_f32, put_u32, Reader};
use crate::voxel::VoxelGrid;

/// Added to samples that sit exactly on the threshold.
pub const ISO_NUDGE: f32 = 1e-6;

/// Interpolation parameters are kept this far from the edge endpoints so no
/// emitted triangle collapses to a point.
const EDGE_CLAMP: f64 = 1e-3;

/// Samples of a scalar field at the cell centers of an `m^D` lattice, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    m: usize,
    dims: usize,
    values: Vec<f32>,
}

impl FieldGrid {
    pub fn new(m: usize, dims: usize, values: Vec<f32>) -> Result<Self> {
        if m < 2 {
            return Err(Error::contract(format!("field resolution {m} is below 2")));
        }
        if dims != 2 && dims != 3 {
            return Err(Error::shape(format!("dimensionality must be 2 or 3, got {dims}")));
        }
        if values.len() != m.pow(dims as u32) {
            return Err(Error::shape(format!(
                "{dims}D field of side {m} needs {} values, got {}",
                m.pow(dims as u32),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field samples".into()));
        }
        Ok(Self { m, dims, values })
    }

    pub fn from_fn(m: usize, dims: usize, f: impl Fn(&[f64]) -> f32) -> Result<Self> {
        let mut values = Vec::with_capacity(m.pow(dims as u32));
        let mut p = vec![0.0; dims];
        for idx in 0..m.pow(dims as u32) {
            let mut r = idx;
            for v in p.iter_mut() {
                *v = ((r % m) as f64 + 0.5) / m as f64;
                r /= m;
            }
            values.push(f(&p));
        }
        Self::new(m, dims, values)
    }

    /// 0/1 field of a voxel grid.
    pub fn from_grid(g: &VoxelGrid) -> Self {
        Self {
            m: g.n(),
            dims: g.dims(),
            values: g.to_f32(),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Cell-center coordinates of every sample, x fastest.
    pub fn centers(m: usize, dims: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(m.pow(dims as u32) * dims);
        for idx in 0..m.pow(dims as u32) {
            let mut r = idx;
            for _ in 0..dims {
                out.push(((r % m) as f64 + 0.5) as f32 / m as f32);
                r /= m;
            }
        }
        out
    }

    /// Occupancy `value > k`; the side must be a power of two.
    pub fn threshold(&self, k: f32) -> Result<VoxelGrid> {
        VoxelGrid::new(self.m, self.dims, self.values.iter().map(|&v| v > k).collect())
    }

    /// Values with exact-threshold samples nudged upward.
    fn nudged(&self, k: f32) -> Vec<f32> {
        self.values
            .iter()
            .map(|&v| if v == k { v + ISO_NUDGE } else { v })
            .collect()
    }
}

/// Position of padded lattice index `i` (0 and `m+1` are the cube faces).
fn lattice_coord(i: usize, m: usize) -> f64 {
    if i == 0 {
        0.0
    } else if i == m + 1 {
        1.0
    } else {
        (i as f64 - 0.5) / m as f64
    }
}

/// Interpolation parameter of the crossing on an edge from `v0` to `v1`.
fn crossing(v0: f32, v1: f32, k: f32) -> f64 {
    let t = (f64::from(k) - f64::from(v0)) / (f64::from(v1) - f64::from(v0));
    t.clamp(EDGE_CLAMP, 1.0 - EDGE_CLAMP)
}

/// Padding value: 0, or below the threshold when that is not positive.
fn pad_value(k: f32) -> f32 {
    if k > 0.0 {
        0.0
    } else {
        k - 1.0
    }
}

/// Samples the decoder for code `z` at every cell center of an `m^D` lattice.
pub fn sample_field(decoder: &Decoder, z: &[f32], m: usize) -> Result<FieldGrid> {
    if m < 2 {
        return Err(Error::contract(format!("field resolution {m} is below 2")));
    }
    let dims = decoder.arch.point_dim;
    let values = decoder.decode(z, &FieldGrid::centers(m, dims))?;
    FieldGrid::new(m, dims, values)
}

/// IMFG: `"IMFG"`, version byte 1, dims byte, `u32` side per axis, f32 samples.
pub fn save_imfg(f: &FieldGrid) -> Vec<u8> {
    let mut out = b"IMFG".to_vec();
    out.push(1);
    out.push(f.dims as u8);
    for _ in 0..f.dims {
        put_u32(&mut out, f.m as u32);
    }
    for &v in &f.values {
        put_f32(&mut out, v);
    }
    out
}

pub fn load_imfg(bytes: &[u8]) -> Result<FieldGrid> {
    let mut r = Reader::new(bytes);
    r.magic(b"IMFG")?;
    let at = r.pos();
    if r.u8("version")? != 1 {
        return Err(Error::format(at, "unsupported IMFG version"));
    }
    let at = r.pos();
    let dims = r.u8("dimensionality")? as usize;
    if dims != 2 && dims != 3 {
        return Err(Error::format(at, format!("dimensionality {dims} is not 2 or 3")));
    }
    let at = r.pos();
    let sides: Vec<usize> = (0..dims)
        .map(|_| r.u32("side").map(|v| v as usize))
        .collect::<Result<_>>()?;
    let m = sides[0];
    if m < 2 || sides.iter().any(|&s| s != m) || m > 4096 {
        return Err(Error::format(at, format!("unsupported field sides {sides:?}")));
    }
    let at = r.pos();
    let values = (0..m.pow(dims as u32))
        .map(|_| r.f32("sample"))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    FieldGrid::new(m, dims, values).map_err(|e| Error::format(at, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imfg_round_trip() {
        let f = FieldGrid::from_fn(5, 3, |p| (p[0] * p[1] + p[2]) as f32).unwrap();
        let b = save_imfg(&f);
        assert_eq!(&b[..6], b"IMFG\x01\x03");
        assert_eq!(load_imfg(&b).unwrap(), f);
        assert!(load_imfg(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn centers_match_grid_convention() {
        let c = FieldGrid::centers(2, 2);
        assert_eq!(c, vec![0.25, 0.25, 0.75, 0.25, 0.25, 0.75, 0.75, 0.75]);
        assert_eq!(lattice_coord(0, 4), 0.0);
        assert_eq!(lattice_coord(1, 4), 0.125);
        assert_eq!(lattice_coord(5, 4), 1.0);
    }

    #[test]
    fn crossing_interpolates_linearly() {
        assert_eq!(crossing(0.25, 0.75, 0.5), 0.5);
        assert_eq!(crossing(0.75, 0.25, 0.5), 0.5);
        assert!((crossing(0.9, 0.1, 0.5) - 0.5).abs() < 1e-7);
        assert_eq!(crossing(0.5 - 1e-7, 0.9, 0.5), EDGE_CLAMP);
    }
}
