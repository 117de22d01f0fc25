//! Marching cubes over the padded cell-center lattice.
//!
//! The 256-entry case table is generated rather than transcribed: on each
//! cube face the crossings are joined so that inside corners on a face
//! diagonal stay separated, oriented with the inside on the left when the
//! face is seen from outside the cube, and the face segments of a cube are
//! chained into closed loops. Two cubes sharing a face derive the same
//! segments for it, which makes the result watertight.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::{crossing, lattice_coord, pad_value, FieldGrid, Mesh};
use crate::error::{Error, Result};

/// Corner offsets: bit 0 is x, bit 1 is y, bit 2 is z.
fn corner(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// The 12 cube edges as (axis, lower corner), ordered by axis then corner.
fn edges() -> &'static [(usize, usize); 12] {
    static EDGES: OnceLock<[(usize, usize); 12]> = OnceLock::new();
    EDGES.get_or_init(|| {
        let mut out = [(0, 0); 12];
        let mut e = 0;
        for axis in 0..3 {
            for c in 0..8 {
                if c & (1 << axis) == 0 {
                    out[e] = (axis, c);
                    e += 1;
                }
            }
        }
        out
    })
}

fn edge_between(a: usize, b: usize) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    let axis = (hi ^ lo).trailing_zeros() as usize;
    edges()
        .iter()
        .position(|&(ax, c)| ax == axis && c == lo)
        .expect("corners differ in exactly one bit")
}

/// Corners of each face, counter-clockwise around the outward normal.
fn faces() -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(6);
    for axis in 0..3 {
        for side in 0..2 {
            // (u, v, n) right-handed with n the outward normal
            let (u, v) = if side == 1 {
                ((axis + 1) % 3, (axis + 2) % 3)
            } else {
                ((axis + 2) % 3, (axis + 1) % 3)
            };
            let mut cs: Vec<usize> = (0..8).filter(|&c| corner(c)[axis] == side).collect();
            cs.sort_by(|&a, &b| {
                let ang = |c: usize| {
                    let p = corner(c);
                    (p[v] as f64 - 0.5).atan2(p[u] as f64 - 0.5)
                };
                ang(a).total_cmp(&ang(b))
            });
            out.push([cs[0], cs[1], cs[2], cs[3]]);
        }
    }
    out
}

/// Loops of edge indices for every corner mask (bit `c` set = corner `c` inside).
pub fn case_table() -> &'static [Vec<Vec<u8>>] {
    static TABLE: OnceLock<Vec<Vec<Vec<u8>>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let faces = faces();
        (0..256usize)
            .map(|mask| {
                let inside = |c: usize| mask & (1 << c) != 0;
                let mut next: [Option<usize>; 12] = [None; 12];
                for q in &faces {
                    for i in 0..4 {
                        let prev = q[(i + 3) % 4];
                        if !inside(q[i]) || inside(prev) {
                            continue;
                        }
                        let mut j = i;
                        while inside(q[(j + 1) % 4]) {
                            j = (j + 1) % 4;
                        }
                        let from = edge_between(q[j], q[(j + 1) % 4]);
                        let to = edge_between(prev, q[i]);
                        next[from] = Some(to);
                    }
                }
                let mut seen = [false; 12];
                let mut loops = Vec::new();
                for start in 0..12 {
                    if seen[start] || next[start].is_none() {
                        continue;
                    }
                    let mut lp = Vec::new();
                    let mut e = start;
                    while !seen[e] {
                        seen[e] = true;
                        lp.push(e as u8);
                        e = next[e].expect("face segments close into loops");
                    }
                    loops.push(lp);
                }
                loops
            })
            .collect()
    })
}

/// Faces (axis, side) an edge lies on.
fn edge_faces(e: usize) -> [(usize, usize); 2] {
    let (axis, c) = edges()[e];
    let o = corner(c);
    let a = (axis + 1) % 3;
    let b = (axis + 2) % 3;
    [(a, o[a]), (b, o[b])]
}

fn share_face(e1: usize, e2: usize) -> bool {
    let f = edge_faces(e1);
    edge_faces(e2).iter().any(|x| f.contains(x))
}

/// Fan apex (position in the loop) per loop of every case, or `None` when
/// every apex would draw a diagonal between two crossings of one face. Such
/// a diagonal could be drawn by the neighboring cube as well, so those loops
/// are fanned around their centroid instead.
fn apex_table() -> &'static [Vec<Option<usize>>] {
    static APEX: OnceLock<Vec<Vec<Option<usize>>>> = OnceLock::new();
    APEX.get_or_init(|| {
        case_table()
            .iter()
            .map(|loops| {
                loops
                    .iter()
                    .map(|lp| {
                        let k = lp.len();
                        (0..k).find(|&s| {
                            (2..k.saturating_sub(1)).all(|i| !share_face(lp[s] as usize, lp[(s + i) % k] as usize))
                        })
                    })
                    .collect()
            })
            .collect()
    })
}

/// Triangle mesh of the `value > k` region, outward (counter-clockwise) winding.
///
/// The lattice is padded with outside samples on the cube faces, so the mesh
/// is closed.
pub fn marching_cubes(f: &FieldGrid, k: f32) -> Result<Mesh> {
    if f.dims() != 3 {
        return Err(Error::shape("marching cubes needs a 3D field"));
    }
    let m = f.m();
    let l = m + 2;
    let values = f.nudged(k);
    let mut padded = vec![pad_value(k); l * l * l];
    for z in 0..m {
        for y in 0..m {
            let src = (z * m + y) * m;
            let dst = ((z + 1) * l + (y + 1)) * l + 1;
            padded[dst..dst + m].copy_from_slice(&values[src..src + m]);
        }
    }
    let coords: Vec<f64> = (0..l).map(|i| lattice_coord(i, m)).collect();
    Ok(extract(&padded, &coords, k))
}

/// Marching cubes treating the samples themselves as cube corners, without
/// padding; surfaces reaching the outermost samples stay open.
pub fn marching_cubes_unpadded(f: &FieldGrid, k: f32) -> Result<Mesh> {
    if f.dims() != 3 {
        return Err(Error::shape("marching cubes needs a 3D field"));
    }
    let m = f.m();
    let coords: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect();
    Ok(extract(&f.nudged(k), &coords, k))
}

/// Runs the case table over a cubic lattice of side `coords.len()`.
fn extract(values: &[f32], coords: &[f64], k: f32) -> Mesh {
    let l = coords.len();
    let table = case_table();
    let apexes = apex_table();
    let edge_list = edges();
    let corner_off: Vec<usize> = (0..8)
        .map(|c| {
            let o = corner(c);
            (o[2] * l + o[1]) * l + o[0]
        })
        .collect();
    let axis_step = [1, l, l * l];

    let mut mesh = Mesh::default();
    let mut ids: HashMap<usize, u32> = HashMap::new();
    let mut lp_ids = Vec::with_capacity(12);
    for z in 0..l - 1 {
        for y in 0..l - 1 {
            for x in 0..l - 1 {
                let base = (z * l + y) * l + x;
                let mut mask = 0;
                for (c, &off) in corner_off.iter().enumerate() {
                    if values[base + off] > k {
                        mask |= 1 << c;
                    }
                }
                if mask == 0 || mask == 255 {
                    continue;
                }
                for (lp, apex) in table[mask].iter().zip(&apexes[mask]) {
                    lp_ids.clear();
                    for &e in lp {
                        let (axis, c) = edge_list[e as usize];
                        let p0 = base + corner_off[c];
                        let key = p0 * 3 + axis;
                        let id = *ids.entry(key).or_insert_with(|| {
                            let t = crossing(values[p0], values[p0 + axis_step[axis]], k);
                            let o = corner(c);
                            let cell = [x + o[0], y + o[1], z + o[2]];
                            let mut pos = [0f32; 3];
                            for a in 0..3 {
                                let lo = coords[cell[a]];
                                pos[a] = if a == axis {
                                    (lo + t * (coords[cell[a] + 1] - lo)) as f32
                                } else {
                                    lo as f32
                                };
                            }
                            mesh.vertices.push(pos);
                            (mesh.vertices.len() - 1) as u32
                        });
                        lp_ids.push(id);
                    }
                    // reversed order gives outward normals
                    let k = lp_ids.len();
                    match *apex {
                        Some(s) => {
                            for i in 1..k - 1 {
                                let (a, b, c) = (lp_ids[s], lp_ids[(s + i) % k], lp_ids[(s + i + 1) % k]);
                                mesh.triangles.push([a, c, b]);
                            }
                        }
                        None => {
                            let mut centroid = [0f64; 3];
                            for &id in &lp_ids {
                                for a in 0..3 {
                                    centroid[a] += f64::from(mesh.vertices[id as usize][a]) / k as f64;
                                }
                            }
                            mesh.vertices.push(centroid.map(|v| v as f32));
                            let hub = (mesh.vertices.len() - 1) as u32;
                            for i in 0..k {
                                mesh.triangles.push([hub, lp_ids[(i + 1) % k], lp_ids[i]]);
                            }
                        }
                    }
                }
            }
        }
    }
    mesh
}
