//! Binary occupancy grids over the unit cube (or unit square).
//!
//! Voxel `(i, j, k)` covers `[i/n, (i+1)/n) × …` and is represented by its
//! center `((i+0.5)/n, (j+0.5)/n, (k+0.5)/n)`. Storage is x fastest, then y,
//! then z.

mod io;
mod shape;

pub use io::{load_imvx, load_pgm, save_imvx, save_pgm, Manifest, ManifestEntry, Split};
pub use shape::{rasterize, rasterize_slice, Axis, Primitive, ShapeKind, ShapeSpec, MARGIN};

use crate::error::{Error, Result};

/// Largest supported side length.
pub const MAX_RESOLUTION: usize = 1024;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VoxelGrid {
    n: usize,
    dims: usize,
    occ: Vec<bool>,
}

pub(crate) fn check_resolution(n: usize) -> Result<()> {
    if !n.is_power_of_two() || n > MAX_RESOLUTION {
        return Err(Error::shape(format!(
            "resolution {n} is not a power of two in 1..={MAX_RESOLUTION}"
        )));
    }
    Ok(())
}

impl VoxelGrid {
    pub fn new(n: usize, dims: usize, occ: Vec<bool>) -> Result<Self> {
        check_resolution(n)?;
        if dims != 2 && dims != 3 {
            return Err(Error::shape(format!("dimensionality must be 2 or 3, got {dims}")));
        }
        if occ.len() != n.pow(dims as u32) {
            return Err(Error::shape(format!(
                "{dims}D grid of side {n} needs {} cells, got {}",
                n.pow(dims as u32),
                occ.len()
            )));
        }
        Ok(Self { n, dims, occ })
    }

    pub fn empty(n: usize, dims: usize) -> Result<Self> {
        Self::new(n, dims, vec![false; n.pow(dims as u32)])
    }

    pub fn full(n: usize, dims: usize) -> Result<Self> {
        Self::new(n, dims, vec![true; n.pow(dims as u32)])
    }

    /// Grid whose cell `c` (coordinates x first) is set iff `f(c)`.
    pub fn from_fn(n: usize, dims: usize, f: impl Fn(&[usize]) -> bool) -> Result<Self> {
        let mut g = Self::empty(n, dims)?;
        let mut c = vec![0; dims];
        for idx in 0..g.occ.len() {
            g.unravel(idx, &mut c);
            g.occ[idx] = f(&c);
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.occ.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occ.is_empty()
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occ
    }

    pub fn count(&self) -> usize {
        self.occ.iter().filter(|&&o| o).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.len() as f64
    }

    /// Linear index of cell coordinates (x first).
    pub fn index(&self, c: &[usize]) -> usize {
        c.iter().rev().fold(0, |acc, &v| acc * self.n + v)
    }

    pub fn unravel(&self, mut idx: usize, out: &mut [usize]) {
        for v in out.iter_mut() {
            *v = idx % self.n;
            idx /= self.n;
        }
    }

    pub fn get(&self, c: &[usize]) -> bool {
        self.occ[self.index(c)]
    }

    pub fn set(&mut self, c: &[usize], value: bool) {
        let i = self.index(c);
        self.occ[i] = value;
    }

    /// Center of cell `c` in unit coordinates.
    pub fn center(&self, c: &[usize]) -> Vec<f64> {
        c.iter().map(|&v| (v as f64 + 0.5) / self.n as f64).collect()
    }

    /// Occupancy as 0/1 floats in storage order.
    pub fn to_f32(&self) -> Vec<f32> {
        self.occ.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect()
    }

    /// Halves the resolution; a parent is set when at least half its children are.
    pub fn downsample(&self) -> Result<Self> {
        if self.n < 2 {
            return Err(Error::shape("cannot downsample a grid of side 1"));
        }
        let half = self.n / 2;
        let children = 1usize << self.dims;
        Self::from_fn(half, self.dims, |p| {
            let mut c = vec![0; self.dims];
            let mut on = 0;
            for bits in 0..children {
                for (a, v) in c.iter_mut().enumerate() {
                    *v = 2 * p[a] + ((bits >> a) & 1);
                }
                on += usize::from(self.get(&c));
            }
            2 * on >= children
        })
    }

    /// Nearest-neighbor upsampling to side `n` (a multiple of the current side).
    pub fn upsample(&self, n: usize) -> Result<Self> {
        if n < self.n || n % self.n != 0 {
            return Err(Error::shape(format!("cannot upsample side {} to {n}", self.n)));
        }
        let f = n / self.n;
        Self::from_fn(n, self.dims, |c| {
            let p: Vec<usize> = c.iter().map(|v| v / f).collect();
            self.get(&p)
        })
    }

    /// Resamples to side `n` by nearest cell lookup at cell centers.
    pub fn resample(&self, n: usize) -> Result<Self> {
        Self::from_fn(n, self.dims, |c| {
            let p: Vec<usize> = c
                .iter()
                .map(|&v| ((v as f64 + 0.5) * self.n as f64 / n as f64) as usize)
                .collect();
            self.get(&p)
        })
    }

    /// Occupancy of the cell containing `p`; `1.0` maps to the last cell.
    pub fn lookup(&self, p: &[f64]) -> Result<bool> {
        if p.len() != self.dims {
            return Err(Error::shape(format!(
                "point has {} coordinates, grid is {}D",
                p.len(),
                self.dims
            )));
        }
        let mut c = [0usize; 3];
        for (a, &v) in p.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::contract(format!("point {p:?} lies outside the unit cube")));
            }
            c[a] = ((v * self.n as f64) as usize).min(self.n - 1);
        }
        Ok(self.get(&c[..self.dims]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_majority_rule() {
        let full = VoxelGrid::full(16, 3).unwrap();
        assert_eq!(full.downsample().unwrap(), VoxelGrid::full(8, 3).unwrap());
        let empty = VoxelGrid::empty(16, 3).unwrap();
        assert_eq!(empty.downsample().unwrap(), VoxelGrid::empty(8, 3).unwrap());

        let four = VoxelGrid::from_fn(2, 3, |c| c[2] == 0).unwrap();
        assert_eq!(four.count(), 4);
        assert!(four.downsample().unwrap().get(&[0, 0, 0]));
        let three = VoxelGrid::from_fn(2, 3, |c| c[2] == 0 && c != [1, 1, 0]).unwrap();
        assert!(!three.downsample().unwrap().get(&[0, 0, 0]));

        let two = VoxelGrid::from_fn(2, 2, |c| c[0] == 0).unwrap();
        assert!(two.downsample().unwrap().get(&[0, 0]));
    }

    #[test]
    fn index_is_x_fastest() {
        let g = VoxelGrid::empty(4, 3).unwrap();
        assert_eq!(g.index(&[1, 0, 0]), 1);
        assert_eq!(g.index(&[0, 1, 0]), 4);
        assert_eq!(g.index(&[0, 0, 1]), 16);
        let mut c = [0; 3];
        g.unravel(g.index(&[3, 2, 1]), &mut c);
        assert_eq!(c, [3, 2, 1]);
    }

    #[test]
    fn lookup_bounds() {
        let mut g = VoxelGrid::empty(4, 2).unwrap();
        g.set(&[3, 3], true);
        assert!(g.lookup(&[1.0, 1.0]).unwrap());
        assert!(!g.lookup(&[0.0, 0.0]).unwrap());
        assert!(matches!(g.lookup(&[1.01, 0.5]), Err(Error::Contract(_))));
        assert!(matches!(g.lookup(&[0.5]), Err(Error::Shape(_))));
    }

    #[test]
    fn upsample_then_downsample_is_identity() {
        let g = VoxelGrid::from_fn(8, 3, |c| (c[0] + 2 * c[1] + c[2]) % 3 == 0).unwrap();
        let up = g.upsample(32).unwrap();
        assert_eq!(up.downsample().unwrap().downsample().unwrap(), g);
        assert_eq!(g.resample(32).unwrap(), up);
    }

    #[test]
    fn rejects_bad_resolution() {
        assert!(VoxelGrid::empty(12, 3).is_err());
        assert!(VoxelGrid::new(4, 3, vec![false; 63]).is_err());
    }
}
