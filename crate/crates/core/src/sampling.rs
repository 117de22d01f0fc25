//! Weighted point/label training sets drawn from voxel grids.
//!
//! Points sit at voxel centers. The naive scheme keeps every voxel with
//! weight 1. The surface-biased scheme keeps every voxel next to an occupancy
//! change and a uniform subsample of the rest, reweighted so the weights
//! still sum to the voxel count.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::format::{put_f32, put_u32, Reader};
use crate::voxel::VoxelGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    Naive,
    SurfaceBiased,
}

/// Struct-of-arrays point set; `points` holds `dims` coordinates per point.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPointSet {
    pub dims: usize,
    pub n: usize,
    pub scheme: Scheme,
    pub points: Vec<f32>,
    pub labels: Vec<f32>,
    pub weights: Vec<f32>,
}

impl SampledPointSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f32] {
        &self.points[i * self.dims..(i + 1) * self.dims]
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().map(|&w| f64::from(w)).sum()
    }

    /// `Σ w·label / n^D`, an estimate of the occupied fraction.
    pub fn weighted_occupancy(&self) -> f64 {
        let s: f64 = self
            .weights
            .iter()
            .zip(&self.labels)
            .map(|(&w, &l)| f64::from(w) * f64::from(l))
            .sum();
        s / self.n.pow(self.dims as u32) as f64
    }

    fn push_voxel(&mut self, g: &VoxelGrid, idx: usize, weight: f32) {
        let mut c = [0usize; 3];
        g.unravel(idx, &mut c[..g.dims()]);
        for &v in &c[..g.dims()] {
            self.points.push(((v as f64 + 0.5) / g.n() as f64) as f32);
        }
        self.labels.push(if g.occupancy()[idx] { 1.0 } else { 0.0 });
        self.weights.push(weight);
    }

    fn empty_for(g: &VoxelGrid, scheme: Scheme) -> Self {
        Self {
            dims: g.dims(),
            n: g.n(),
            scheme,
            points: Vec::new(),
            labels: Vec::new(),
            weights: Vec::new(),
        }
    }
}

/// Inside/outside label of the voxel containing `p`.
pub fn label_point(g: &VoxelGrid, p: &[f64]) -> Result<u8> {
    g.lookup(p).map(u8::from)
}

pub fn sample_naive(g: &VoxelGrid) -> SampledPointSet {
    let mut s = SampledPointSet::empty_for(g, Scheme::Naive);
    for idx in 0..g.len() {
        s.push_voxel(g, idx, 1.0);
    }
    s
}

/// Voxels with a Chebyshev-distance-1 neighbor of different occupancy.
pub fn near_surface(g: &VoxelGrid) -> Vec<bool> {
    let n = g.n() as isize;
    let d = g.dims();
    let offsets: Vec<[isize; 3]> = (0..3usize.pow(d as u32))
        .map(|m| {
            let mut o = [0isize; 3];
            for (a, v) in o.iter_mut().enumerate().take(d) {
                *v = ((m / 3usize.pow(a as u32)) % 3) as isize - 1;
            }
            o
        })
        .filter(|o| o.iter().any(|&v| v != 0))
        .collect();
    let occ = g.occupancy();
    let mut c = [0usize; 3];
    let mut q = [0usize; 3];
    (0..g.len())
        .map(|idx| {
            g.unravel(idx, &mut c[..d]);
            offsets.iter().any(|o| {
                for a in 0..d {
                    let v = c[a] as isize + o[a];
                    if v < 0 || v >= n {
                        return false;
                    }
                    q[a] = v as usize;
                }
                occ[g.index(&q[..d])] != occ[idx]
            })
        })
        .collect()
}

pub fn sample_surface_biased(g: &VoxelGrid, far_budget: usize, seed: u64) -> Result<SampledPointSet> {
    if far_budget == 0 {
        return Err(Error::contract("far budget must be at least 1"));
    }
    let count = g.count();
    if count == 0 || count == g.len() {
        return Err(Error::contract(
            "surface-biased sampling needs both occupied and empty voxels",
        ));
    }
    let near = near_surface(g);
    let far: Vec<usize> = (0..g.len()).filter(|&i| !near[i]).collect();
    let budget = far_budget.min(far.len());
    let weight = if budget == 0 { 1.0 } else { (far.len() as f64 / budget as f64) as f32 };
    let mut chosen = vec![false; g.len()];
    if budget > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in sample(&mut rng, far.len(), budget) {
            chosen[far[k]] = true;
        }
    }
    let mut s = SampledPointSet::empty_for(g, Scheme::SurfaceBiased);
    for idx in 0..g.len() {
        if near[idx] {
            s.push_voxel(g, idx, 1.0);
        } else if chosen[idx] {
            s.push_voxel(g, idx, weight);
        }
    }
    Ok(s)
}

/// IMPT: `"IMPT"`, version byte, dims byte, scheme byte, `u32` n, `u32`
/// count, then per point `dims × f32`, `u8` label, `f32` weight.
pub fn save_impt(s: &SampledPointSet) -> Vec<u8> {
    let mut out = b"IMPT".to_vec();
    out.push(1);
    out.push(s.dims as u8);
    out.push(match s.scheme {
        Scheme::Naive => 0,
        Scheme::SurfaceBiased => 1,
    });
    put_u32(&mut out, s.n as u32);
    put_u32(&mut out, s.len() as u32);
    for i in 0..s.len() {
        for &v in s.point(i) {
            put_f32(&mut out, v);
        }
        out.push(s.labels[i] as u8);
        put_f32(&mut out, s.weights[i]);
    }
    out
}

pub fn load_impt(bytes: &[u8]) -> Result<SampledPointSet> {
    let mut r = Reader::new(bytes);
    r.magic(b"IMPT")?;
    let at = r.pos();
    if r.u8("version")? != 1 {
        return Err(Error::format(at, "unsupported IMPT version"));
    }
    let at = r.pos();
    let dims = r.u8("dimensionality")? as usize;
    if dims != 2 && dims != 3 {
        return Err(Error::format(at, format!("dimensionality {dims} is not 2 or 3")));
    }
    let at = r.pos();
    let scheme = match r.u8("scheme")? {
        0 => Scheme::Naive,
        1 => Scheme::SurfaceBiased,
        v => return Err(Error::format(at, format!("unknown scheme tag {v}"))),
    };
    let n = r.u32("resolution")? as usize;
    let count = r.u32("point count")? as usize;
    let mut s = SampledPointSet {
        dims,
        n,
        scheme,
        points: Vec::with_capacity(count * dims),
        labels: Vec::with_capacity(count),
        weights: Vec::with_capacity(count),
    };
    for _ in 0..count {
        for _ in 0..dims {
            s.points.push(r.f32("coordinate")?);
        }
        let at = r.pos();
        let label = r.u8("label")?;
        if label > 1 {
            return Err(Error::format(at, format!("label {label} is not 0 or 1")));
        }
        s.labels.push(f32::from(label));
        s.weights.push(r.f32("weight")?);
    }
    r.finish()?;
    Ok(s)
}
