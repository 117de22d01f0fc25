//! Finite-difference gradient suite over every tape op and the composed
//! training losses, run in `f64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{analytic_gradients, compare, BuildFn, CheckReport, GradCheckOptions};
use crate::autodiff::{Tape, Var};
use crate::decoder::{self, weighted_loss, DecoderArch};
use crate::encoder::{self, EncoderArch};
use crate::error::Result;
use crate::tensor::Tensor;
use crate::training::gan::{penalty_on_tape, MlpArch};

type Build = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// Gradient check of one case; `corrupt` scales the analytic gradients by
/// 1.01 first, which the comparison must flag.
fn run(
    name: &str,
    inputs: &[Tensor<f64>],
    build: &BuildFn,
    opts: &GradCheckOptions,
    rng: &mut ChaCha8Rng,
    corrupt: bool,
) -> Result<CheckReport> {
    let mut analytic = analytic_gradients(inputs, build)?;
    if corrupt {
        for g in &mut analytic {
            *g = g.map(|v| v * 1.01);
        }
    }
    compare(name, inputs, build, &analytic, opts, rng)
}

/// Reduces `y` to a scalar with fixed, uneven weights so that every entry
/// contributes a distinct amount.
fn project(t: &mut Tape<f64>, y: Var) -> Result<Var> {
    let shape = t.value(y).shape().to_vec();
    let n = t.value(y).len();
    let r: Vec<f64> = (0..n).map(|i| (1.3 * i as f64 + 0.7).sin()).collect();
    let r = t.constant(Tensor::new(shape, r)?);
    let p = t.mul(y, r)?;
    Ok(t.sum(p))
}

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Build)> {
    vec![
        ("linear", vec![vec![3, 4], vec![4, 2], vec![2]], |t, v| {
            let y = t.linear(v[0], v[1], v[2])?;
            project(t, y)
        }),
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y)
        }),
        ("matmul_t", vec![vec![4, 3], vec![2, 4]], |t, v| {
            let y = t.matmul_t(v[0], v[1], true, true)?;
            project(t, y)
        }),
        ("add_bias", vec![vec![3, 4], vec![4]], |t, v| {
            let y = t.add_bias(v[0], v[1])?;
            project(t, y)
        }),
        ("add", vec![vec![3, 4], vec![3, 4]], |t, v| {
            let y = t.add(v[0], v[1])?;
            let y = t.square(y);
            project(t, y)
        }),
        ("sub", vec![vec![3, 4], vec![3, 4]], |t, v| {
            let y = t.sub(v[0], v[1])?;
            let y = t.square(y);
            project(t, y)
        }),
        ("mul", vec![vec![3, 4], vec![3, 4]], |t, v| {
            let y = t.mul(v[0], v[1])?;
            project(t, y)
        }),
        ("scale_add_scalar", vec![vec![3, 4]], |t, v| {
            let y = t.scale(v[0], -1.7);
            let y = t.add_scalar(y, 0.3);
            let y = t.square(y);
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
        ("sqrt", vec![vec![5, 4]], |t, v| {
            let s = t.square(v[0]);
            let s = t.add_scalar(s, 0.5);
            let y = t.sqrt(s);
            project(t, y)
        }),
        ("square", vec![vec![5, 4]], |t, v| {
            let y = t.square(v[0]);
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
        ("sum", vec![vec![3, 4]], |t, v| {
            let y = t.square(v[0]);
            Ok(t.sum(y))
        }),
        ("mean", vec![vec![3, 4]], |t, v| {
            let y = t.square(v[0]);
            Ok(t.mean(y))
        }),
        ("sum_cols", vec![vec![6, 3]], |t, v| {
            let s = t.sum_cols(v[0])?;
            project(t, s)
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

/// Small encoder + decoder + weighted loss, every parameter an input.
fn composition(seed: u64, opts: &GradCheckOptions, corrupt: bool) -> Result<CheckReport> {
    let enc = EncoderArch::voxel(3, 8, 4);
    let mut dec = DecoderArch::new(4, 3);
    dec.widths = vec![8, 8];
    let e = crate::encoder::Encoder::new(enc.clone(), seed)?;
    let d = crate::decoder::Decoder::new(dec.clone(), seed + 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grids: Vec<f64> = (0..2 * 512).map(|i| f64::from(((i * 7 + seed as usize) % 5 < 2) as u8)).collect();
    let pts = Tensor::<f64>::uniform(&[6, 3], 0.5, &mut rng).map(|v| v + 0.5);
    let mut inputs: Vec<Tensor<f64>> = e.params.cast::<f64>().tensors().to_vec();
    let ne = inputs.len();
    inputs.extend(d.params.cast::<f64>().tensors().iter().cloned());
    let build = move |t: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
        let x = t.constant(Tensor::new(enc.input_shape(2), grids.clone())?);
        let codes = encoder::forward(&enc, t, &v[..ne], x)?;
        let p = t.constant(pts.clone());
        let pred = decoder::forward(&dec, t, &v[ne..], codes, &[0, 1, 0, 1, 1, 0], p)?;
        let labels = t.constant(Tensor::new(vec![6, 1], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0])?);
        let w = t.constant(Tensor::new(vec![6, 1], vec![1.0, 3.0, 0.5, 2.0, 1.0, 7.0])?);
        weighted_loss(t, pred, labels, w)
    };
    run("encoder+decoder+loss", &inputs, &build, opts, &mut rng, corrupt)
}

/// Gradient penalty of a two-hidden-layer critic, w.r.t. its parameters.
fn penalty(seed: u64, opts: &GradCheckOptions, corrupt: bool) -> Result<CheckReport> {
    let arch = MlpArch {
        prefix: "critic".into(),
        input_dim: 4,
        widths: vec![6, 5],
        output_dim: 1,
        sigmoid: false,
        alpha: 0.2,
    };
    let critic = crate::training::Mlp::new(arch.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xhat = Tensor::<f64>::uniform(&[5, 4], 1.0, &mut rng);
    let inputs = critic.params.cast::<f64>().tensors().to_vec();
    let build = move |t: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
        let x = t.constant(xhat.clone());
        penalty_on_tape(&arch, t, v, x)
    };
    run("gradient_penalty", &inputs, &build, opts, &mut rng, corrupt)
}

/// One merged report per op and per composed loss, over `seeds` seeds each.
pub fn gradcheck_suite(seeds: u64, opts: &GradCheckOptions, corrupt: bool) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for (name, shapes, build) in op_cases() {
        let mut merged: Option<CheckReport> = None;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| Tensor::uniform(s, 1.0, &mut rng)).collect();
            let r = run(name, &inputs, &build, opts, &mut rng, corrupt)?;
            merged = Some(match merged {
                Some(m) => m.merge(r),
                None => r,
            });
        }
        out.extend(merged);
    }
    type Case = fn(u64, &GradCheckOptions, bool) -> Result<CheckReport>;
    for case in [composition as Case, penalty] {
        let mut merged: Option<CheckReport> = None;
        for seed in 0..seeds {
            let r = case(seed, opts, corrupt)?;
            merged = Some(match merged {
                Some(m) => m.merge(r),
                None => r,
            });
        }
        out.extend(merged);
    }
    Ok(out)
}
