//! Analytic solids used as a procedural shape corpus.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_resolution, VoxelGrid};
use crate::error::{Error, Result};

/// Every solid must lie strictly inside `[MARGIN, 1 - MARGIN]` on each axis.
pub const MARGIN: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            _ => Err(Error::contract(format!("unknown axis {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Box {
        center: [f64; 3],
        half: [f64; 3],
    },
    Cylinder {
        center: [f64; 3],
        radius: f64,
        half_height: f64,
        axis: Axis,
    },
    Torus {
        center: [f64; 3],
        major: f64,
        minor: f64,
        axis: Axis,
    },
}

fn split(p: [f64; 3], c: [f64; 3], axis: Axis) -> (f64, f64) {
    // (axial offset, squared radial distance)
    let a = axis.index();
    let mut r2 = 0.0;
    for i in 0..3 {
        if i != a {
            r2 += (p[i] - c[i]).powi(2);
        }
    }
    (p[a] - c[a], r2)
}

impl Primitive {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        match *self {
            Primitive::Sphere { center, radius } => {
                (0..3).map(|i| (p[i] - center[i]).powi(2)).sum::<f64>() <= radius * radius
            }
            Primitive::Box { center, half } => (0..3).all(|i| (p[i] - center[i]).abs() <= half[i]),
            Primitive::Cylinder {
                center,
                radius,
                half_height,
                axis,
            } => {
                let (h, r2) = split(p, center, axis);
                h.abs() <= half_height && r2 <= radius * radius
            }
            Primitive::Torus {
                center,
                major,
                minor,
                axis,
            } => {
                let (h, r2) = split(p, center, axis);
                (r2.sqrt() - major).powi(2) + h * h <= minor * minor
            }
        }
    }

    /// Axis-aligned bounds as (lower, upper).
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let (center, ext) = match *self {
            Primitive::Sphere { center, radius } => (center, [radius; 3]),
            Primitive::Box { center, half } => (center, half),
            Primitive::Cylinder {
                center,
                radius,
                half_height,
                axis,
            } => {
                let mut e = [radius; 3];
                e[axis.index()] = half_height;
                (center, e)
            }
            Primitive::Torus {
                center,
                major,
                minor,
                axis,
            } => {
                let mut e = [major + minor; 3];
                e[axis.index()] = minor;
                (center, e)
            }
        };
        let lo = [center[0] - ext[0], center[1] - ext[1], center[2] - ext[2]];
        let hi = [center[0] + ext[0], center[1] + ext[1], center[2] + ext[2]];
        (lo, hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    Box,
    Cylinder,
    Torus,
    Union,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Sphere,
        ShapeKind::Box,
        ShapeKind::Cylinder,
        ShapeKind::Torus,
        ShapeKind::Union,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Box => "box",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Torus => "torus",
            ShapeKind::Union => "union",
        }
    }
}

/// A union of primitives. A single part is just that primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSpec {
    pub parts: Vec<Primitive>,
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, amount: f64) -> [f64; 3] {
    [0; 3].map(|_: i32| 0.5 + rng.gen_range(-amount..=amount))
}

impl ShapeSpec {
    pub fn new(parts: Vec<Primitive>) -> Result<Self> {
        let s = Self { parts };
        s.validate()?;
        Ok(s)
    }

    pub fn sphere(center: [f64; 3], radius: f64) -> Result<Self> {
        Self::new(vec![Primitive::Sphere { center, radius }])
    }

    pub fn kind(&self) -> ShapeKind {
        match self.parts.as_slice() {
            [Primitive::Sphere { .. }] => ShapeKind::Sphere,
            [Primitive::Box { .. }] => ShapeKind::Box,
            [Primitive::Cylinder { .. }] => ShapeKind::Cylinder,
            [Primitive::Torus { .. }] => ShapeKind::Torus,
            _ => ShapeKind::Union,
        }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.parts.iter().any(|q| q.contains(p))
    }

    /// Rejects empty unions, non-positive sizes and solids that reach the margin.
    pub fn validate(&self) -> Result<()> {
        if self.parts.is_empty() {
            return Err(Error::contract("shape has no parts"));
        }
        for part in &self.parts {
            let sizes: Vec<f64> = match *part {
                Primitive::Sphere { radius, .. } => vec![radius],
                Primitive::Box { half, .. } => half.to_vec(),
                Primitive::Cylinder {
                    radius, half_height, ..
                } => vec![radius, half_height],
                Primitive::Torus { major, minor, .. } => vec![major - minor, minor],
            };
            if sizes.iter().any(|&s| !(s > 0.0)) {
                return Err(Error::contract(format!("degenerate primitive {part:?}")));
            }
            let (lo, hi) = part.bounds();
            if lo.iter().any(|&v| v <= MARGIN) || hi.iter().any(|&v| v >= 1.0 - MARGIN) {
                return Err(Error::contract(format!(
                    "primitive {part:?} leaves the [{MARGIN}, {}] box",
                    1.0 - MARGIN
                )));
            }
        }
        Ok(())
    }

    /// A random shape of the given kind, roughly centered in the cube.
    pub fn random<R: Rng + ?Sized>(kind: ShapeKind, rng: &mut R) -> Self {
        let center = jitter(rng, 0.04);
        let axis = Axis::ALL[rng.gen_range(0..3)];
        let parts = match kind {
            ShapeKind::Sphere => vec![Primitive::Sphere {
                center,
                radius: rng.gen_range(0.22..0.32),
            }],
            ShapeKind::Box => vec![Primitive::Box {
                center,
                half: [0; 3].map(|_: i32| rng.gen_range(0.14..0.28)),
            }],
            ShapeKind::Cylinder => vec![Primitive::Cylinder {
                center,
                radius: rng.gen_range(0.14..0.24),
                half_height: rng.gen_range(0.18..0.32),
                axis,
            }],
            ShapeKind::Torus => vec![Primitive::Torus {
                center,
                major: rng.gen_range(0.2..0.26),
                minor: rng.gen_range(0.09..0.12),
                axis,
            }],
            ShapeKind::Union => {
                let offset = rng.gen_range(0.1..0.14);
                let mut a = center;
                let mut b = center;
                a[axis.index()] += offset;
                b[axis.index()] -= offset;
                vec![
                    Primitive::Sphere {
                        center: a,
                        radius: rng.gen_range(0.14..0.2),
                    },
                    Primitive::Box {
                        center: b,
                        half: [0; 3].map(|_: i32| rng.gen_range(0.1..0.16)),
                    },
                ]
            }
        };
        Self { parts }
    }

    /// `count` shapes with kinds assigned round-robin and ids like `torus-0003`.
    pub fn corpus(count: usize, seed: u64) -> Vec<(String, ShapeSpec)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let kind = ShapeKind::ALL[i % ShapeKind::ALL.len()];
                (format!("{}-{i:04}", kind.name()), Self::random(kind, &mut rng))
            })
            .collect()
    }
}

fn check_raster(spec: &ShapeSpec, n: usize) -> Result<()> {
    check_resolution(n)?;
    if n < 8 {
        return Err(Error::shape(format!("rasterization needs side ≥ 8, got {n}")));
    }
    spec.validate()
}

/// 3D occupancy at voxel centers.
pub fn rasterize(spec: &ShapeSpec, n: usize) -> Result<VoxelGrid> {
    check_raster(spec, n)?;
    let s = n as f64;
    VoxelGrid::from_fn(n, 3, |c| {
        spec.contains([
            (c[0] as f64 + 0.5) / s,
            (c[1] as f64 + 0.5) / s,
            (c[2] as f64 + 0.5) / s,
        ])
    })
}

/// 2D glyph: the cross-section of the solid at `z = 0.5`.
pub fn rasterize_slice(spec: &ShapeSpec, n: usize) -> Result<VoxelGrid> {
    check_raster(spec, n)?;
    let s = n as f64;
    VoxelGrid::from_fn(n, 2, |c| {
        spec.contains([(c[0] as f64 + 0.5) / s, (c[1] as f64 + 0.5) / s, 0.5])
    })
}
