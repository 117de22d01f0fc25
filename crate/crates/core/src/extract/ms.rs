//! Marching squares over the padded cell-center lattice.
//!
//! Saddle cells join their inside corners when the mean of the four samples
//! is inside. Loops run with the inside on their left, so the shoelace area
//! of an outer boundary is positive and that of a hole negative.

use std::collections::HashMap;

use super::{crossing, lattice_coord, pad_value, FieldGrid};
use crate::error::{Error, Result};

/// A closed polyline; the last point connects back to the first.
#[derive(Clone, Debug, PartialEq)]
pub struct Contour {
    pub points: Vec<[f32; 2]>,
}

impl Contour {
    /// Shoelace area, positive for counter-clockwise loops.
    pub fn signed_area(&self) -> f64 {
        let n = self.points.len();
        (0..n)
            .map(|i| {
                let a = self.points[i].map(f64::from);
                let b = self.points[(i + 1) % n].map(f64::from);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            / 2.0
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.points.len();
        (0..n)
            .map(|i| {
                let a = self.points[i];
                let b = self.points[(i + 1) % n];
                f64::from(a[0] - b[0]).hypot(f64::from(a[1] - b[1]))
            })
            .sum()
    }
}

/// Square corners counter-clockwise: (0,0), (1,0), (1,1), (0,1).
const CORNERS: [[usize; 2]; 4] = [[0, 0], [1, 0], [1, 1], [0, 1]];

/// Contours of the `value > k` region of a 2D field.
pub fn marching_squares(f: &FieldGrid, k: f32) -> Result<Vec<Contour>> {
    if f.dims() != 2 {
        return Err(Error::shape("marching squares needs a 2D field"));
    }
    let m = f.m();
    let l = m + 2;
    let values = f.nudged(k);
    let mut padded = vec![pad_value(k); l * l];
    for y in 0..m {
        padded[(y + 1) * l + 1..(y + 1) * l + 1 + m].copy_from_slice(&values[y * m..(y + 1) * m]);
    }
    let coords: Vec<f64> = (0..l).map(|i| lattice_coord(i, m)).collect();

    // crossing key = lower lattice point * 2 + axis
    let mut next: HashMap<usize, usize> = HashMap::new();
    let mut order: Vec<usize> = Vec::new();
    let mut pos: HashMap<usize, [f32; 2]> = HashMap::new();
    for y in 0..l - 1 {
        for x in 0..l - 1 {
            let pt = |i: usize| (y + CORNERS[i][1]) * l + x + CORNERS[i][0];
            let v: [f32; 4] = [0, 1, 2, 3].map(|i| padded[pt(i)]);
            let inside: [bool; 4] = v.map(|s| s > k);
            let count = inside.iter().filter(|&&b| b).count();
            if count == 0 || count == 4 {
                continue;
            }
            let saddle = count == 2 && inside[0] == inside[2];
            let mean = v.iter().map(|&s| f64::from(s)).sum::<f64>() / 4.0;
            // Walk runs of the corners that stay separated; when inside corners
            // are joined, that is the outside ones and the direction flips.
            let flip = saddle && mean > f64::from(k);
            let member = |i: usize| inside[i % 4] != flip;
            let mut key = |a: usize, b: usize| {
                let (a, b) = if pt(a) < pt(b) { (a, b) } else { (b, a) };
                let axis = usize::from(CORNERS[a][0] == CORNERS[b][0]);
                let kk = pt(a) * 2 + axis;
                pos.entry(kk).or_insert_with(|| {
                    let t = crossing(padded[pt(a)], padded[pt(b)], k);
                    let (cx, cy) = (x + CORNERS[a][0], y + CORNERS[a][1]);
                    if axis == 0 {
                        [(coords[cx] + t * (coords[cx + 1] - coords[cx])) as f32, coords[cy] as f32]
                    } else {
                        [coords[cx] as f32, (coords[cy] + t * (coords[cy + 1] - coords[cy])) as f32]
                    }
                });
                kk
            };
            for i in 0..4 {
                if !member(i) || member(i + 3) {
                    continue;
                }
                let mut j = i;
                while member(j + 1) {
                    j += 1;
                }
                let exit = key(j % 4, (j + 1) % 4);
                let entry = key((i + 3) % 4, i);
                let (from, to) = if flip { (entry, exit) } else { (exit, entry) };
                next.insert(from, to);
                order.push(from);
            }
        }
    }

    let mut contours = Vec::new();
    let mut done = std::collections::HashSet::new();
    for &start in &order {
        if done.contains(&start) {
            continue;
        }
        let mut points = Vec::new();
        let mut e = start;
        while done.insert(e) {
            points.push(pos[&e]);
            e = next[&e];
        }
        contours.push(Contour { points });
    }
    Ok(contours)
}
