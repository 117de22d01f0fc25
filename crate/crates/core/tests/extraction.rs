use imfield::extract::{
    export_obj, marching_cubes, marching_squares, parse_obj, sample_field, FieldGrid, Mesh,
};
use imfield::voxel::{rasterize, Axis, Primitive};
use imfield::{Decoder, DecoderArch, ShapeSpec};
use proptest::prelude::*;

fn sphere_field(m: usize, r: f64) -> FieldGrid {
    FieldGrid::from_fn(m, 3, |p| {
        let d = ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2) + (p[2] - 0.5).powi(2)).sqrt();
        (0.5 + (r - d) * 4.0) as f32
    })
    .unwrap()
}

fn no_degenerate(mesh: &Mesh) -> bool {
    (0..mesh.triangles.len()).all(|t| mesh.triangle_area(t) > 0.0)
}

#[test]
fn sphere_mesh_is_closed_genus_zero() {
    for m in [8, 17, 32, 64] {
        let mesh = marching_cubes(&sphere_field(m, 0.3), 0.5).unwrap();
        assert!(mesh.is_watertight(), "m={m}");
        assert_eq!(mesh.euler_characteristic(), 2, "m={m}");
        assert!(no_degenerate(&mesh));
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.027;
        let vol = mesh.signed_volume();
        assert!(vol > 0.0);
        if m >= 32 {
            assert!((vol - exact).abs() / exact < 0.03, "m={m}: {vol} vs {exact}");
        }
    }
}

#[test]
fn torus_mesh_has_genus_one() {
    let spec = ShapeSpec::new(vec![Primitive::Torus {
        center: [0.5; 3],
        major: 0.25,
        minor: 0.1,
        axis: Axis::Y,
    }])
    .unwrap();
    let g = rasterize(&spec, 32).unwrap();
    let mesh = marching_cubes(&FieldGrid::from_grid(&g), 0.5).unwrap();
    assert!(mesh.is_watertight());
    assert_eq!(mesh.euler_characteristic(), 0);
}

#[test]
fn field_touching_the_border_is_still_closed() {
    let f = FieldGrid::from_fn(6, 3, |p| if p[0] < 0.6 { 0.9 } else { 0.2 }).unwrap();
    let mesh = marching_cubes(&f, 0.5).unwrap();
    assert!(mesh.is_watertight());
    assert_eq!(mesh.euler_characteristic(), 2);
}

#[test]
fn threshold_values_are_nudged_inside() {
    let f = FieldGrid::from_fn(4, 3, |p| if p[0] < 0.5 { 0.5 } else { 0.1 }).unwrap();
    let mesh = marching_cubes(&f, 0.5).unwrap();
    assert!(!mesh.is_empty());
    assert!(mesh.is_watertight());
}

#[test]
fn obj_export_round_trip_of_sphere() {
    let mesh = marching_cubes(&sphere_field(16, 0.3), 0.5).unwrap();
    let back = parse_obj(&export_obj(&mesh)).unwrap();
    assert_eq!(back.triangles, mesh.triangles);
    for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-5);
        }
    }
}

#[test]
fn decoder_sampling_is_pure_and_resolution_free() {
    let dec = Decoder::new(DecoderArch::new(4, 3), 5).unwrap();
    let z = [0.1, 0.9, 0.4, 0.3];
    let a = sample_field(&dec, &z, 2).unwrap();
    assert_eq!(a.values().len(), 8);
    assert_eq!(a, sample_field(&dec, &z, 2).unwrap());
    let fine = sample_field(&dec, &z, 24).unwrap();
    assert!(fine.values().iter().all(|&v| v > 0.0 && v < 1.0));
    // direct re-evaluation at the shared coordinates
    let pts = FieldGrid::centers(24, 3);
    let direct = dec.decode(&z, &pts[3 * 100..3 * 101]).unwrap();
    assert_eq!(direct[0], fine.values()[100]);
}

#[test]
fn marching_squares_on_a_glyph() {
    let g = imfield::voxel::rasterize_slice(&ShapeSpec::sphere([0.5; 3], 0.3).unwrap(), 64).unwrap();
    let loops = marching_squares(&FieldGrid::from_grid(&g), 0.5).unwrap();
    assert_eq!(loops.len(), 1);
}

fn lcg(mut s: u64, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 40) as f32 / (1u64 << 24) as f32
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn random_fields_give_closed_oriented_meshes(
        m in 2usize..7,
        seed in any::<u64>(),
        k in 0.2f32..0.8,
    ) {
        let f = FieldGrid::new(m, 3, lcg(seed, m * m * m)).unwrap();
        let mesh = marching_cubes(&f, k).unwrap();
        prop_assert!(mesh.is_watertight());
        prop_assert!(no_degenerate(&mesh));
        mesh.check_indices().unwrap();
        prop_assert!(mesh.is_empty() || mesh.signed_volume() > 0.0);
    }

    #[test]
    fn random_images_give_closed_loops(m in 2usize..12, seed in any::<u64>()) {
        let f = FieldGrid::new(m, 2, lcg(seed, m * m)).unwrap();
        let loops = marching_squares(&f, 0.5).unwrap();
        let area: f64 = loops.iter().map(|c| c.signed_area()).sum();
        prop_assert!(area >= 0.0);
        for c in &loops {
            prop_assert!(c.points.len() >= 3);
        }
    }
}
