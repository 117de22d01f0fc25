use std::collections::{HashMap, HashSet};
use std::fmt::Write;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f32; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Use count of every undirected edge.
    fn edge_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut counts = HashMap::new();
        for t in &self.triangles {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge is shared by exactly two triangles, traversed once in each
    /// direction (closed and consistently oriented).
    pub fn is_watertight(&self) -> bool {
        if self.is_empty() {
            return true;
        }
        let mut directed = HashSet::new();
        for t in &self.triangles {
            for i in 0..3 {
                if !directed.insert((t[i], t[(i + 1) % 3])) {
                    return false;
                }
            }
        }
        directed.iter().all(|&(a, b)| directed.contains(&(b, a)))
    }

    /// Edges not shared by exactly two triangles.
    pub fn open_edges(&self) -> usize {
        self.edge_counts().values().filter(|&&c| c != 2).count()
    }

    /// `V − E + F` over the vertices referenced by triangles.
    pub fn euler_characteristic(&self) -> i64 {
        let used: HashSet<u32> = self.triangles.iter().flatten().copied().collect();
        used.len() as i64 - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }

    /// Enclosed volume from the divergence theorem; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize].map(f64::from));
                let cross = [
                    b[1] * c[2] - b[2] * c[1],
                    b[2] * c[0] - b[0] * c[2],
                    b[0] * c[1] - b[1] * c[0],
                ];
                (a[0] * cross[0] + a[1] * cross[1] + a[2] * cross[2]) / 6.0
            })
            .sum()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i as usize].map(f64::from));
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let cx = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
        0.5 * (cx[0] * cx[0] + cx[1] * cx[1] + cx[2] * cx[2]).sqrt()
    }

    pub fn check_indices(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if self.triangles.iter().flatten().any(|&i| i >= n) {
            return Err(Error::contract("triangle references a missing vertex"));
        }
        Ok(())
    }
}

/// `%.6g`-style formatting: six significant digits, trailing zeros trimmed.
fn fmt_g6(v: f32) -> String {
    let v = f64::from(v);
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-5..6).contains(&exp) {
        return format!("{v:.5e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// ASCII Wavefront OBJ: `v x y z` lines, then `f a b c` with 1-based indices.
pub fn export_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", fmt_g6(v[0]), fmt_g6(v[1]), fmt_g6(v[2]));
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

/// Reads `v` and triangular `f` records; other record types are ignored.
pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut mesh = Mesh::default();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len();
        let mut it = line.split_whitespace();
        let bad = |msg: &str| Error::format(at, format!("OBJ: {msg}"));
        match it.next() {
            Some("v") => {
                let c: Vec<f32> = it
                    .take(3)
                    .map(|s| s.parse().map_err(|_| bad("bad vertex coordinate")))
                    .collect::<Result<_>>()?;
                let [x, y, z] = c[..] else {
                    return Err(bad("vertex needs three coordinates"));
                };
                mesh.vertices.push([x, y, z]);
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|s| {
                        s.split('/')
                            .next()
                            .and_then(|i| i.parse::<u32>().ok())
                            .filter(|&i| i >= 1)
                            .map(|i| i - 1)
                            .ok_or_else(|| bad("bad face index"))
                    })
                    .collect::<Result<_>>()?;
                let [a, b, c] = idx[..] else {
                    return Err(bad("only triangular faces are supported"));
                };
                mesh.triangles.push([a, b, c]);
            }
            _ => {}
        }
    }
    mesh.check_indices()?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetra() -> Mesh {
        Mesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            triangles: vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        }
    }

    #[test]
    fn tetrahedron_topology() {
        let t = tetra();
        assert!(t.is_watertight());
        assert_eq!(t.euler_characteristic(), 2);
        assert!((t.signed_volume() - 1.0 / 6.0).abs() < 1e-12);
        let mut open = t.clone();
        open.triangles.pop();
        assert!(!open.is_watertight());
        assert_eq!(open.open_edges(), 3);
    }

    #[test]
    fn obj_round_trip() {
        assert_eq!(export_obj(&Mesh::default()), "");
        let mesh = Mesh {
            vertices: vec![[0.123_456_78, 1.0, 0.5], [0.0, 0.000_012_345_6, 0.25], [0.75, 0.5, 0.999_999_9]],
            triangles: vec![[0, 1, 2]],
        };
        let text = export_obj(&mesh);
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 1);
        assert!(text.starts_with("v 0.123457 1 0.5\n"), "{text}");
        let back = parse_obj(&text).unwrap();
        assert_eq!(back.triangles, mesh.triangles);
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-5);
            }
        }
        assert!(parse_obj("f 1 2 3\n").is_err());
    }
}
