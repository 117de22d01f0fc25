//! Exact nearest-neighbor queries over 3D points.
//!
//! Squared distances are accumulated in `f64` from the `f32` coordinates, in
//! axis order, so they match a plain double loop bit for bit.

/// Squared distance as used by every point metric.
#[inline]
pub fn dist2(a: &[f32; 3], b: &[f32; 3]) -> f64 {
    let dx = f64::from(a[0]) - f64::from(b[0]);
    let dy = f64::from(a[1]) - f64::from(b[1]);
    let dz = f64::from(a[2]) - f64::from(b[2]);
    dx * dx + dy * dy + dz * dz
}

const LEAF: usize = 8;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f32, left: usize, right: usize },
}

pub struct KdTree {
    points: Vec<[f32; 3]>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[[f32; 3]]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let slice = &mut self.points[start..end];
        let mut lo = [f32::INFINITY; 3];
        let mut hi = [f32::NEG_INFINITY; 3];
        for p in slice.iter() {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap_or(0);
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |p, q| p[axis].total_cmp(&q[axis]));
        let value = slice[mid][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, start + mid);
        let right = self.build(start + mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Smallest squared distance from `q` to the stored points.
    pub fn nearest_dist2(&self, q: &[f32; 3]) -> f64 {
        let mut best = f64::INFINITY;
        if !self.nodes.is_empty() {
            self.search(0, q, &mut best);
        }
        best
    }

    fn search(&self, id: usize, q: &[f32; 3], best: &mut f64) {
        match self.nodes[id] {
            Node::Leaf { start, end } => {
                for p in &self.points[start..end] {
                    let d = dist2(p, q);
                    if d < *best {
                        *best = d;
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                // points left of the split have coordinate <= value, right >= value
                let diff = f64::from(q[axis]) - f64::from(value);
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= *best {
                    self.search(far, q, best);
                }
            }
        }
    }
}
