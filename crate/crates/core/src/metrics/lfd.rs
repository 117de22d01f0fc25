//! A light-field-style silhouette descriptor over ten fixed orthographic views.
//!
//! Each view renders the mesh into a 64² coverage image through a window of half-width
//! 0.9 centered on the vertex centroid. Per view the descriptor holds the
//! normalized area, the compactness `P²/(4πA)`, the seven Hu moment
//! invariants (the last one as a magnitude) and eight normalized Fourier
//! magnitudes of the outer contour's centroid-distance signature. Every
//! feature is invariant to in-plane translation, rotation and mirroring, so
//! a rotation of the cube only permutes the views.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::extract::{marching_cubes, marching_squares, Contour, FieldGrid, Mesh};
use crate::voxel::VoxelGrid;

pub const VIEW_SIDE: usize = 64;
pub const VIEW_HALF_WIDTH: f64 = 0.9;
const SUPERSAMPLE: usize = 4;
/// Position of each subsample inside its fine cell, per image axis. Not
/// the center: vertices of voxel-derived meshes sit on a dyadic lattice, so
/// their axis-aligned and 45° edges would pass exactly through centers,
/// where the inside test flips under rounding. The two offsets differ by an
/// irrational amount so edges of any small rational slope miss the samples.
const SUBSAMPLE_PHASE: [f64; 2] = [
    0.5 + 1.0 / (8.0 * std::f64::consts::PI),
    0.5 - 1.0 / (8.0 * std::f64::consts::E),
];
pub const FEATURES: usize = 17;
const SIGNATURE_SAMPLES: usize = 64;
const FOURIER_TERMS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct SilhouetteDescriptor {
    pub views: Vec<[f64; FEATURES]>,
}

type V3 = [f64; 3];

fn normalize(v: V3) -> V3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Six axis directions followed by four body diagonals.
pub fn view_directions() -> [V3; 10] {
    [
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
        normalize([1.0, 1.0, 1.0]),
        normalize([1.0, 1.0, -1.0]),
        normalize([1.0, -1.0, 1.0]),
        normalize([-1.0, 1.0, 1.0]),
    ]
}

/// For each of the 24 rotations of the cube, the view each view lands on.
/// Only four diagonals are rendered; a diagonal rotated onto the opposite of
/// one of them sees the mirrored silhouette, which has the same features.
pub fn rotation_permutations() -> &'static [[usize; 10]] {
    static PERMS: OnceLock<Vec<[usize; 10]>> = OnceLock::new();
    PERMS.get_or_init(|| {
        let dirs = view_directions();
        let axes = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut out = Vec::with_capacity(24);
        for perm in axes {
            for signs in 0..8 {
                let s: Vec<f64> = (0..3).map(|i| if signs >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
                let mut m = [[0.0; 3]; 3];
                for r in 0..3 {
                    m[r][perm[r]] = s[r];
                }
                let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
                if det < 0.0 {
                    continue;
                }
                let mut p = [0usize; 10];
                for (i, d) in dirs.iter().enumerate() {
                    let rd = [dot(m[0], *d), dot(m[1], *d), dot(m[2], *d)];
                    let hit = |sign: f64| (0..10).find(|&j| (sign * dot(rd, dirs[j]) - 1.0).abs() < 1e-9);
                    p[i] = hit(1.0).or_else(|| hit(-1.0)).expect("cube rotations map views onto views");
                }
                out.push(p);
            }
        }
        out
    })
}

/// Silhouette of `mesh` seen along `dir`: per-pixel coverage in [0, 1] from
/// a 4×4 grid of subsamples.
pub fn render_view(mesh: &Mesh, dir: V3, center: V3) -> FieldGrid {
    let helper = if dir[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [0.0, 1.0, 0.0] };
    let u = normalize(cross(helper, dir));
    let v = cross(dir, u);
    let side = (VIEW_SIDE * SUPERSAMPLE) as f64;
    let scale = side / (2.0 * VIEW_HALF_WIDTH);
    let proj: Vec<[f64; 2]> = mesh
        .vertices
        .iter()
        .map(|p| {
            let q = [f64::from(p[0]) - center[0], f64::from(p[1]) - center[1], f64::from(p[2]) - center[2]];
            [(dot(q, u) + VIEW_HALF_WIDTH) * scale, (dot(q, v) + VIEW_HALF_WIDTH) * scale]
        })
        .collect();
    let fine_side = VIEW_SIDE * SUPERSAMPLE;
    let mut fine = vec![false; fine_side * fine_side];
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| proj[i as usize]);
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if area == 0.0 {
            continue;
        }
        let lo_x = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
        let hi_x = (a[0].max(b[0]).max(c[0]).ceil().max(0.0) as usize).min(fine_side);
        let lo_y = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
        let hi_y = (a[1].max(b[1]).max(c[1]).ceil().max(0.0) as usize).min(fine_side);
        let edge = |p: [f64; 2], q: [f64; 2], x: f64, y: f64| (q[0] - p[0]) * (y - p[1]) - (q[1] - p[1]) * (x - p[0]);
        for py in lo_y..hi_y {
            for px in lo_x..hi_x {
                let (x, y) = (px as f64 + SUBSAMPLE_PHASE[0], py as f64 + SUBSAMPLE_PHASE[1]);
                let e = [edge(a, b, x, y), edge(b, c, x, y), edge(c, a, x, y)];
                let inside = if area > 0.0 { e.iter().all(|&s| s >= 0.0) } else { e.iter().all(|&s| s <= 0.0) };
                if inside {
                    fine[py * fine_side + px] = true;
                }
            }
        }
    }
    let mut cover = vec![0.0f32; VIEW_SIDE * VIEW_SIDE];
    for (i, &on) in fine.iter().enumerate() {
        if on {
            let (fx, fy) = (i % fine_side, i / fine_side);
            cover[(fy / SUPERSAMPLE) * VIEW_SIDE + fx / SUPERSAMPLE] += 1.0;
        }
    }
    let per = (SUPERSAMPLE * SUPERSAMPLE) as f32;
    FieldGrid::new(VIEW_SIDE, 2, cover.into_iter().map(|c| c / per).collect()).expect("coverage is finite")
}

fn hu_moments(img: &FieldGrid) -> [f64; 7] {
    let n = img.m();
    let w = |x: usize, y: usize| f64::from(img.values()[y * n + x]);
    let (mut m00, mut m10, mut m01) = (0.0, 0.0, 0.0);
    for y in 0..n {
        for x in 0..n {
            m00 += w(x, y);
            m10 += w(x, y) * x as f64;
            m01 += w(x, y) * y as f64;
        }
    }
    let (cx, cy) = (m10 / m00, m01 / m00);
    let mut mu = [[0.0f64; 4]; 4];
    for y in 0..n {
        for x in 0..n {
            let wv = w(x, y);
            if wv > 0.0 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                for p in 0..4 {
                    for q in 0..4 - p {
                        mu[p][q] += wv * dx.powi(p as i32) * dy.powi(q as i32);
                    }
                }
            }
        }
    }
    let eta = |p: usize, q: usize| mu[p][q] / m00.powf(1.0 + (p + q) as f64 / 2.0);
    let (n20, n02, n11) = (eta(2, 0), eta(0, 2), eta(1, 1));
    let (n30, n03, n21, n12) = (eta(3, 0), eta(0, 3), eta(2, 1), eta(1, 2));
    let a = n30 + n12;
    let b = n21 + n03;
    [
        n20 + n02,
        (n20 - n02).powi(2) + 4.0 * n11 * n11,
        (n30 - 3.0 * n12).powi(2) + (3.0 * n21 - n03).powi(2),
        a * a + b * b,
        (n30 - 3.0 * n12) * a * (a * a - 3.0 * b * b) + (3.0 * n21 - n03) * b * (3.0 * a * a - b * b),
        (n20 - n02) * (a * a - b * b) + 4.0 * n11 * a * b,
        ((3.0 * n21 - n03) * a * (a * a - 3.0 * b * b) - (n30 - 3.0 * n12) * b * (3.0 * a * a - b * b)).abs(),
    ]
}

/// Magnitudes `|F_k| / |F_0|`, k = 1..=8, of the centroid-distance signature.
fn fourier_signature(c: &Contour) -> [f64; FOURIER_TERMS] {
    let pts: Vec<[f64; 2]> = c.points.iter().map(|p| p.map(f64::from)).collect();
    let n = pts.len();
    let seg: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            (b[0] - a[0]).hypot(b[1] - a[1])
        })
        .collect();
    let total: f64 = seg.iter().sum();
    let mut samples = Vec::with_capacity(SIGNATURE_SAMPLES);
    let (mut i, mut walked) = (0, 0.0);
    for s in 0..SIGNATURE_SAMPLES {
        let target = total * s as f64 / SIGNATURE_SAMPLES as f64;
        while i < n - 1 && walked + seg[i] < target {
            walked += seg[i];
            i += 1;
        }
        let t = if seg[i] > 0.0 { ((target - walked) / seg[i]).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        samples.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    let k = SIGNATURE_SAMPLES as f64;
    let cx = samples.iter().map(|p| p[0]).sum::<f64>() / k;
    let cy = samples.iter().map(|p| p[1]).sum::<f64>() / k;
    let r: Vec<f64> = samples.iter().map(|p| (p[0] - cx).hypot(p[1] - cy)).collect();
    let mag = |f: usize| {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, &v) in r.iter().enumerate() {
            let ang = -2.0 * PI * (f * j) as f64 / k;
            re += v * ang.cos();
            im += v * ang.sin();
        }
        re.hypot(im)
    };
    let f0 = mag(0);
    let mut out = [0.0; FOURIER_TERMS];
    if f0 > 0.0 {
        for (f, o) in out.iter_mut().enumerate() {
            *o = mag(f + 1) / f0;
        }
    }
    out
}

/// Feature vector of one coverage image; all zeros when nothing is covered.
pub fn view_features(img: &FieldGrid) -> [f64; FEATURES] {
    let mut f = [0.0; FEATURES];
    let area: f64 = img.values().iter().map(|&v| f64::from(v)).sum();
    if area == 0.0 {
        return f;
    }
    let side = img.m() as f64;
    let contours = marching_squares(img, 0.5).expect("2D image");
    let perimeter: f64 = contours.iter().map(|c| c.perimeter() * side).sum();
    f[0] = area / (side * side);
    f[1] = perimeter * perimeter / (4.0 * PI * area);
    f[2..9].copy_from_slice(&hu_moments(img));
    if let Some(outer) = contours.iter().max_by(|a, b| a.perimeter().total_cmp(&b.perimeter())) {
        f[9..].copy_from_slice(&fourier_signature(outer));
    }
    f
}

/// Descriptor of a closed mesh.
pub fn lfd_lite(mesh: &Mesh) -> Result<SilhouetteDescriptor> {
    if mesh.is_empty() {
        return Err(Error::contract("cannot describe an empty shape"));
    }
    let mut center = [0.0; 3];
    for v in &mesh.vertices {
        for a in 0..3 {
            center[a] += f64::from(v[a]);
        }
    }
    let nv = mesh.vertices.len() as f64;
    let center = center.map(|c| c / nv);
    let views: Vec<[f64; FEATURES]> = view_directions()
        .iter()
        .map(|&d| view_features(&render_view(mesh, d, center)))
        .collect();
    if views.iter().all(|v| v[0] == 0.0) {
        return Err(Error::contract("shape has an empty silhouette in every view"));
    }
    Ok(SilhouetteDescriptor { views })
}

/// Occupancy averaged over each cell's 3×3×3 neighbourhood (outside cells
/// count as empty), so meshes of voxel shapes lose their terracing.
fn smoothed(g: &VoxelGrid) -> FieldGrid {
    let n = g.n() as i64;
    let occ = g.occupancy();
    let at = |x: i64, y: i64, z: i64| {
        if (0..n).contains(&x) && (0..n).contains(&y) && (0..n).contains(&z) {
            f32::from(u8::from(occ[((z * n + y) * n + x) as usize]))
        } else {
            0.0
        }
    };
    let mut values = Vec::with_capacity(occ.len());
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let mut sum = 0.0;
                for dz in -1..=1 {
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            sum += at(x + dx, y + dy, z + dz);
                        }
                    }
                }
                values.push(sum / 27.0);
            }
        }
    }
    FieldGrid::new(g.n(), 3, values).expect("averages are finite")
}

/// Descriptor of a 3D voxel grid, meshed from its smoothed occupancy.
pub fn lfd_lite_grid(g: &VoxelGrid) -> Result<SilhouetteDescriptor> {
    if g.dims() != 3 {
        return Err(Error::shape("descriptors are defined for 3D shapes"));
    }
    lfd_lite(&marching_cubes(&smoothed(g), 0.5)?)
}

fn l1(a: &[f64; FEATURES], b: &[f64; FEATURES]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Smallest summed L1 view distance over the 24 cube rotations.
///
/// Terms are summed in sorted order so the result is exactly symmetric.
pub fn lfd_lite_distance(a: &SilhouetteDescriptor, b: &SilhouetteDescriptor) -> f64 {
    let mut pair = [[0.0; 10]; 10];
    for (i, va) in a.views.iter().enumerate() {
        for (j, vb) in b.views.iter().enumerate() {
            pair[i][j] = l1(va, vb);
        }
    }
    rotation_permutations()
        .iter()
        .map(|p| {
            let mut terms: Vec<f64> = (0..10).map(|i| pair[i][p[i]]).collect();
            terms.sort_by(f64::total_cmp);
            terms.iter().sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}
