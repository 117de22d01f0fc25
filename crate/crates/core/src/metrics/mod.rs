//! Reconstruction and generation metrics.

mod kdtree;
mod lfd;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::extract::{FieldGrid, Mesh};
use crate::voxel::VoxelGrid;

pub use kdtree::{dist2, KdTree};
pub use lfd::{
    lfd_lite, lfd_lite_distance, lfd_lite_grid, render_view, rotation_permutations, view_directions,
    view_features, SilhouetteDescriptor, FEATURES, VIEW_HALF_WIDTH, VIEW_SIDE,
};

/// Points drawn from mesh vertices for Chamfer distances.
pub const CLOUD_POINTS: usize = 2048;

fn same_shape(a: &VoxelGrid, n: usize, dims: usize) -> Result<()> {
    if a.n() != n || a.dims() != dims {
        return Err(Error::shape(format!(
            "resolution mismatch: {}^{} vs {n}^{dims}",
            a.n(),
            a.dims()
        )));
    }
    Ok(())
}

/// Mean squared difference between occupancy (0/1) and field values.
pub fn voxel_mse(a: &VoxelGrid, b: &FieldGrid) -> Result<f64> {
    same_shape(a, b.m(), b.dims())?;
    let sum: f64 = a
        .occupancy()
        .iter()
        .zip(b.values())
        .map(|(&o, &v)| {
            let d = f64::from(u8::from(o)) - f64::from(v);
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Intersection over union; two empty grids count as identical.
pub fn iou(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    same_shape(a, b.n(), b.dims())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.occupancy().iter().zip(b.occupancy()) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

fn mean_nearest(from: &[[f32; 3]], to: &KdTree) -> f64 {
    from.iter().map(|p| to.nearest_dist2(p)).sum::<f64>() / from.len() as f64
}

/// Symmetric Chamfer distance: the two mean squared nearest-neighbor
/// distances, added.
pub fn chamfer(a: &[[f32; 3]], b: &[[f32; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("chamfer distance of an empty point cloud"));
    }
    let ta = KdTree::new(a);
    let tb = KdTree::new(b);
    Ok(mean_nearest(a, &tb) + mean_nearest(b, &ta))
}

/// `count` vertices drawn uniformly with replacement.
pub fn sample_vertices(mesh: &Mesh, count: usize, seed: u64) -> Result<Vec<[f32; 3]>> {
    if mesh.vertices.is_empty() {
        return Err(Error::contract("cannot sample points from an empty mesh"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| *mesh.vertices.choose(&mut rng).expect("non-empty"))
        .collect())
}

/// `out[i][j] = dist(&rows[i], &cols[j])`, evaluated in parallel.
pub fn distance_matrix<A: Sync, B: Sync>(
    rows: &[A],
    cols: &[B],
    dist: impl Fn(&A, &B) -> f64 + Sync,
) -> Vec<Vec<f64>> {
    rows.par_iter()
        .map(|a| cols.iter().map(|b| dist(a, b)).collect())
        .collect()
}

fn check_lists(g: usize, a: usize) -> Result<()> {
    if g == 0 || a == 0 {
        return Err(Error::contract("coverage and MMD need non-empty test and sample sets"));
    }
    Ok(())
}

/// Fraction of test shapes that are the nearest test shape of at least one
/// sample. `d[g][a]` is the distance from test shape `g` to sample `a`;
/// ties go to the lowest test index.
pub fn coverage(d: &[Vec<f64>]) -> Result<f64> {
    let g = d.len();
    let a = d.first().map_or(0, Vec::len);
    check_lists(g, a)?;
    let mut matched = vec![false; g];
    for j in 0..a {
        let mut best = 0;
        for i in 1..g {
            if d[i][j] < d[best][j] {
                best = i;
            }
        }
        matched[best] = true;
    }
    Ok(matched.iter().filter(|&&m| m).count() as f64 / g as f64)
}

/// Mean over test shapes of the distance to the closest sample.
pub fn mmd(d: &[Vec<f64>]) -> Result<f64> {
    let g = d.len();
    check_lists(g, d.first().map_or(0, Vec::len))?;
    Ok(d.iter()
        .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / g as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(g: &[f64], a: &[f64]) -> Vec<Vec<f64>> {
        distance_matrix(g, a, |x, y| (x - y).abs())
    }

    #[test]
    fn coverage_and_mmd_hand_cases() {
        let d = line(&[0.0, 10.0], &[1.0, 2.0, 3.0]);
        assert_eq!(coverage(&d).unwrap(), 0.5);
        assert_eq!(mmd(&d).unwrap(), 4.0);
        let same = line(&[0.0, 4.0, 9.0], &[0.0, 4.0, 9.0]);
        assert_eq!(coverage(&same).unwrap(), 1.0);
        assert_eq!(mmd(&same).unwrap(), 0.0);
        assert_eq!(coverage(&line(&[0.0, 5.0], &[0.0])).unwrap(), 0.5);
        assert!(coverage(&line(&[0.0], &[])).is_err());
        assert!(mmd(&[]).is_err());
    }

    #[test]
    fn voxel_hand_cases() {
        let full = VoxelGrid::full(16, 3).unwrap();
        let empty = VoxelGrid::empty(16, 3).unwrap();
        assert_eq!(voxel_mse(&full, &FieldGrid::from_grid(&empty)).unwrap(), 1.0);
        let mut one = empty.clone();
        one.set(&[3, 4, 5], true);
        assert_eq!(voxel_mse(&one, &FieldGrid::from_grid(&empty)).unwrap(), 1.0 / 4096.0);
        assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
        assert_eq!(iou(&full, &empty).unwrap(), 0.0);
        assert!(iou(&full, &VoxelGrid::full(8, 3).unwrap()).is_err());
        // two 8×8×4 boxes overlapping along half their length
        let a = VoxelGrid::from_fn(16, 3, |c| c[0] < 8 && c[1] < 8 && c[2] < 4).unwrap();
        let b = VoxelGrid::from_fn(16, 3, |c| (4..12).contains(&c[0]) && c[1] < 8 && c[2] < 4).unwrap();
        assert_eq!(iou(&a, &b).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn chamfer_hand_cases() {
        assert_eq!(chamfer(&[[0.0, 0.0, 0.0]], &[[1.0, 0.0, 0.0]]).unwrap(), 2.0);
        let a = [[0.1, 0.2, 0.3], [0.5, 0.5, 0.5]];
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert!(chamfer(&a, &[]).is_err());
    }
}
