use imfield::autodiff::gradcheck::{check, GradCheckOptions};
use imfield::{Error, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t32(shape: &[usize], data: &[f32]) -> Tensor<f32> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn naive_matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for p in 0..k {
                acc += f64::from(a[i * k + p]) * f64::from(b[p * n + j]);
            }
            out[i * n + j] = acc as f32;
        }
    }
    out
}

/// Direct 6-loop (per output channel and spatial position) 3D correlation.
#[allow(clippy::too_many_arguments)]
fn naive_conv3d(
    x: &[f64],
    c: usize,
    s: [usize; 3],
    w: &[f64],
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 3]) {
    let out: Vec<usize> = s.iter().map(|&e| (e + 2 * pad - k) / stride + 1).collect();
    let mut y = vec![0.0; o * out[0] * out[1] * out[2]];
    for oc in 0..o {
        for z in 0..out[0] {
            for yy in 0..out[1] {
                for xx in 0..out[2] {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for a in 0..k {
                            for b in 0..k {
                                for e in 0..k {
                                    let iz = (z * stride + a) as isize - pad as isize;
                                    let iy = (yy * stride + b) as isize - pad as isize;
                                    let ix = (xx * stride + e) as isize - pad as isize;
                                    if iz < 0 || iy < 0 || ix < 0 {
                                        continue;
                                    }
                                    let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                    if iz >= s[0] || iy >= s[1] || ix >= s[2] {
                                        continue;
                                    }
                                    acc += x[((ic * s[0] + iz) * s[1] + iy) * s[2] + ix]
                                        * w[(((oc * c + ic) * k + a) * k + b) * k + e];
                                }
                            }
                        }
                    }
                    y[((oc * out[0] + z) * out[1] + yy) * out[2] + xx] = acc;
                }
            }
        }
    }
    (y, [out[0], out[1], out[2]])
}

#[test]
fn linear_identity_and_hand_cases() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(t32(&[1, 2], &[1.0, 2.0]));
    let w = tape.constant(Tensor::identity(2));
    let b = tape.constant(Tensor::zeros(&[2]));
    let y = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0]);

    let x = tape.constant(t32(&[1, 2], &[1.0, 1.0]));
    let w = tape.constant(t32(&[2, 1], &[1.0, 1.0]));
    let b = tape.constant(t32(&[1], &[0.5]));
    let y = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[2.5]);
}

#[test]
fn linear_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x: Tensor<f32> = Tensor::uniform(&[3, 4], 1.0, &mut rng);
    let w: Tensor<f32> = Tensor::uniform(&[4, 2], 1.0, &mut rng);
    let bias: Tensor<f32> = Tensor::uniform(&[2], 1.0, &mut rng);
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(bias.clone()));
    let y = tape.linear(xv, wv, bv).unwrap();
    let mut expect = naive_matmul(x.data(), w.data(), 3, 4, 2);
    for r in 0..3 {
        for c in 0..2 {
            expect[r * 2 + c] += bias.data()[c];
        }
    }
    for (a, e) in tape.value(y).data().iter().zip(&expect) {
        assert!((a - e).abs() < 1e-6, "{a} vs {e}");
    }
}

#[test]
fn linear_rejects_mismatched_inner_dims() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(&[2, 3]));
    let w = tape.constant(Tensor::zeros(&[4, 2]));
    let b = tape.constant(Tensor::zeros(&[2]));
    assert!(matches!(tape.linear(x, w, b), Err(Error::Shape(_))));
}

#[test]
fn activations_on_scalars() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(t32(&[3], &[2.0, -1.0, 0.0]));
    let y = tape.leaky_relu(x, 0.02);
    assert_eq!(tape.value(y).data(), &[2.0, -0.02, 0.0]);

    let x = tape.constant(t32(&[3], &[0.0, 1.0, f32::INFINITY]));
    let s = tape.sigmoid(x);
    let v = tape.value(s).data();
    assert_eq!(v[0], 0.5);
    // 1 / (1 + e^-1)
    assert!((v[1] - 0.731_058_6).abs() < 1e-6);
    assert_eq!(v[2], 1.0);
}

#[test]
fn concat_cases() {
    let mut tape = Tape::<f32>::new();
    let a = tape.constant(t32(&[1, 1], &[1.0]));
    let b = tape.constant(t32(&[1, 2], &[2.0, 3.0]));
    let c = tape.concat(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);

    let a = tape.constant(t32(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let empty = tape.constant(Tensor::zeros(&[2, 0]));
    let c = tape.concat(a, empty).unwrap();
    assert_eq!(tape.value(c), tape.value(a));

    let short = tape.constant(Tensor::zeros(&[3, 1]));
    assert!(matches!(tape.concat(a, short), Err(Error::Shape(_))));
}

#[test]
fn conv_trivial_cases() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(t32(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let k1 = tape.constant(t32(&[1, 1, 1, 1], &[1.0]));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv(x, k1, b, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

    let ones = tape.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
    let k2 = tape.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
    let y = tape.conv(ones, k2, b, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0]);

    let big = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
    assert!(matches!(tape.conv(x, big, b, 1, 0), Err(Error::Shape(_))));
}

#[test]
fn conv3d_matches_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (stride, pad) in [(1, 0), (2, 1), (2, 0)] {
        let x: Tensor<f64> = Tensor::uniform(&[1, 2, 5, 4, 6], 1.0, &mut rng);
        let w: Tensor<f64> = Tensor::uniform(&[3, 2, 3, 3, 3], 1.0, &mut rng);
        let mut tape = Tape::new();
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
        let bv = tape.constant(Tensor::zeros(&[3]));
        let y = tape.conv(xv, wv, bv, stride, pad).unwrap();
        let (expect, out) = naive_conv3d(x.data(), 2, [5, 4, 6], w.data(), 3, 3, stride, pad);
        assert_eq!(tape.value(y).shape(), &[1, 3, out[0], out[1], out[2]]);
        for (a, e) in tape.value(y).data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-5);
        }
    }
}

#[test]
fn backward_simple_cases() {
    let mut tape = Tape::<f32>::new();
    let w = tape.param(t32(&[1, 3], &[0.3, -0.2, 0.9]));
    let x = tape.constant(t32(&[3, 1], &[1.0, 2.0, 3.0]));
    let unused = tape.param(t32(&[2], &[1.0, 1.0]));
    let loss = tape.matmul(w, x).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.wrt(w).data(), &[1.0, 2.0, 3.0]);
    assert_eq!(g.wrt(unused).data(), &[0.0, 0.0]);
    assert!(g.get(x).is_none());
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::<f32>::new();
    let w = tape.param(Tensor::zeros(&[2]));
    let y = tape.sigmoid(w);
    assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Tensor<f32> = Tensor::uniform(&[64, 19], 1.0, &mut rng);
        let w: Tensor<f32> = Tensor::uniform(&[19, 33], 0.5, &mut rng);
        let mut tape = Tape::new();
        let (xv, wv) = (tape.constant(x), tape.param(w));
        let b = tape.constant(Tensor::zeros(&[33]));
        let h = tape.linear(xv, wv, b).unwrap();
        let h = tape.leaky_relu(h, 0.02);
        let s = tape.sum(h);
        let g = tape.backward(s).unwrap().wrt(wv);
        (tape.value(h).clone(), g)
    };
    assert_eq!(run(), run());
}

type Build = fn(&mut Tape<f64>, &[Var]) -> imfield::Result<Var>;

/// Reduces `y` to a scalar with a fixed, non-uniform weighting of its entries.
fn project(t: &mut Tape<f64>, y: Var) -> imfield::Result<Var> {
    let shape = t.value(y).shape().to_vec();
    let n = t.value(y).len();
    let r: Vec<f64> = (0..n).map(|i| (1.3 * i as f64 + 0.7).sin()).collect();
    let r = t.constant(Tensor::new(shape, r)?);
    let p = t.mul(y, r)?;
    Ok(t.sum(p))
}

fn cases() -> Vec<(&'static str, Vec<Vec<usize>>, Build)> {
    vec![
        ("linear", vec![vec![3, 4], vec![4, 2], vec![2]], |t, v| {
            let y = t.linear(v[0], v[1], v[2])?;
            project(t, y)
        }),
        ("matmul_tt", vec![vec![4, 3], vec![2, 4]], |t, v| {
            let y = t.matmul_t(v[0], v[1], true, true)?;
            project(t, y)
        }),
        ("matmul_tn", vec![vec![4, 3], vec![4, 2]], |t, v| {
            let y = t.matmul_t(v[0], v[1], true, false)?;
            project(t, y)
        }),
        ("add_bias", vec![vec![3, 4], vec![4]], |t, v| {
            let y = t.add_bias(v[0], v[1])?;
            project(t, y)
        }),
        ("add_sub_mul", vec![vec![3, 4], vec![3, 4]], |t, v| {
            let d = t.sub(v[0], v[1])?;
            let s = t.add(v[0], v[1])?;
            let y = t.mul(d, s)?;
            project(t, y)
        }),
        ("leaky_relu", vec![vec![5, 4]], |t, v| {
            let y = t.leaky_relu(v[0], 0.02);
            project(t, y)
        }),
        ("sigmoid", vec![vec![5, 4]], |t, v| {
            let y = t.sigmoid(v[0]);
            project(t, y)
        }),
        ("sqrt_square", vec![vec![5, 4]], |t, v| {
            let s = t.square(v[0]);
            let s = t.add_scalar(s, 0.5);
            let y = t.sqrt(s);
            project(t, y)
        }),
        ("concat", vec![vec![3, 2], vec![3, 3]], |t, v| {
            let y = t.concat(v[0], v[1])?;
            project(t, y)
        }),
        ("gather_rows", vec![vec![3, 4]], |t, v| {
            let y = t.gather_rows(v[0], &[2, 0, 2, 1, 2])?;
            project(t, y)
        }),
        ("reshape", vec![vec![3, 4]], |t, v| {
            let y = t.reshape(v[0], &[2, 6])?;
            let y = t.square(y);
            project(t, y)
        }),
        ("sum_cols_mean", vec![vec![6, 3]], |t, v| {
            let s = t.sum_cols(v[0])?;
            let s = t.scale(s, 1.7);
            let y = t.mul(s, s)?;
            Ok(t.mean(y))
        }),
        ("conv2d", vec![vec![2, 2, 6, 5], vec![3, 2, 3, 3], vec![3]], |t, v| {
            let y = t.conv(v[0], v[1], v[2], 2, 1)?;
            project(t, y)
        }),
        ("conv3d", vec![vec![1, 2, 4, 5, 4], vec![2, 2, 2, 3, 2], vec![2]], |t, v| {
            let y = t.conv(v[0], v[1], v[2], 1, 0)?;
            project(t, y)
        }),
    ]
}

#[test]
fn every_op_matches_finite_differences() {
    let opts = GradCheckOptions::default();
    for (name, shapes, build) in cases() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<Tensor<f64>> = shapes
                .iter()
                .map(|s| Tensor::uniform(s, 1.0, &mut rng))
                .collect();
            let report = check(name, &inputs, &build, &opts, &mut rng).unwrap();
            assert!(report.passed(opts.tolerance), "{name} seed {seed}: {report:?}");
            assert!(report.checked > 0);
        }
    }
}
