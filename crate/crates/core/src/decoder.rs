//! The implicit decoder `f(p, z) -> (0, 1)` and its weighted squared loss.
//!
//! An MLP over the concatenation `z ⊕ p`. With skips enabled, every hidden
//! layer after the first sees its predecessor's activations concatenated
//! with the original `z ⊕ p` again. Hidden layers use leaky ReLU, the single
//! output unit a sigmoid.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Params, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Points per forward chunk when evaluating large point sets.
pub const EVAL_CHUNK: usize = 8192;

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderArch {
    pub latent_dim: usize,
    pub point_dim: usize,
    pub widths: Vec<usize>,
    pub skip: bool,
    pub alpha: f64,
}

impl DecoderArch {
    pub fn new(latent_dim: usize, point_dim: usize) -> Self {
        Self {
            latent_dim,
            point_dim,
            widths: vec![256, 256, 128],
            skip: true,
            alpha: 0.02,
        }
    }

    fn input_dim(&self) -> usize {
        self.latent_dim + self.point_dim
    }

    /// (fan_in, fan_out) of every layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.widths.len() + 1);
        let mut prev = self.input_dim();
        for (i, &w) in self.widths.iter().enumerate() {
            let fan_in = if i > 0 && self.skip { prev + self.input_dim() } else { prev };
            shapes.push((fan_in, w));
            prev = w;
        }
        shapes.push((prev, 1));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::contract("decoder needs at least one non-empty hidden layer"));
        }
        if self.point_dim != 2 && self.point_dim != 3 {
            return Err(Error::contract(format!("point dimension {} is not 2 or 3", self.point_dim)));
        }
        if self.latent_dim == 0 {
            return Err(Error::contract("latent dimension must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::contract(format!("leaky slope {} is outside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

impl fmt::Display for DecoderArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let widths: Vec<String> = self.widths.iter().map(ToString::to_string).collect();
        write!(
            f,
            "latent={} points={} widths={} skip={} alpha={}",
            self.latent_dim,
            self.point_dim,
            widths.join(","),
            u8::from(self.skip),
            self.alpha
        )
    }
}

impl FromStr for DecoderArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::format(0, format!("bad decoder descriptor {s:?}"));
        let mut arch = DecoderArch::new(0, 0);
        for field in s.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(bad)?;
            match k {
                "latent" => arch.latent_dim = v.parse().map_err(|_| bad())?,
                "points" => arch.point_dim = v.parse().map_err(|_| bad())?,
                "widths" => {
                    arch.widths = v
                        .split(',')
                        .map(|w| w.parse().map_err(|_| bad()))
                        .collect::<Result<_>>()?
                }
                "skip" => arch.skip = v == "1",
                "alpha" => arch.alpha = v.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
        }
        arch.validate().map_err(|_| bad())?;
        Ok(arch)
    }
}

/// Points with their labels and weights; `rows[i]` picks the latent code of point `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointBatch {
    pub points: Tensor,
    pub labels: Tensor,
    pub weights: Tensor,
    pub rows: Vec<usize>,
}

impl PointBatch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub arch: DecoderArch,
    pub params: Params,
}

impl Decoder {
    /// Xavier-initialized decoder; identical seeds give identical weights.
    pub fn new(arch: DecoderArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        for (i, (fan_in, fan_out)) in arch.layer_shapes().into_iter().enumerate() {
            params.push_xavier(format!("dec.layer{i}.W"), &[fan_in, fan_out], fan_in, fan_out, &mut rng);
            params.push_zeros(format!("dec.layer{i}.b"), &[fan_out]);
        }
        Ok(Self { arch, params })
    }

    /// Rebuilds a decoder around loaded parameters, checking every shape.
    pub fn from_params(arch: DecoderArch, params: Params) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if params.len() != 2 * shapes.len() {
            return Err(Error::shape(format!(
                "decoder expects {} tensors, got {}",
                2 * shapes.len(),
                params.len()
            )));
        }
        for (i, (fan_in, fan_out)) in shapes.into_iter().enumerate() {
            if params.get(2 * i).shape() != [fan_in, fan_out] || params.get(2 * i + 1).shape() != [fan_out] {
                return Err(Error::shape(format!("decoder layer {i} has the wrong shape")));
            }
        }
        Ok(Self { arch, params })
    }

    /// Values at `points` (`b×D`, row-major) for one latent code.
    pub fn decode(&self, z: &[f32], points: &[f32]) -> Result<Vec<f32>> {
        let d = self.arch.point_dim;
        if z.len() != self.arch.latent_dim || points.len() % d != 0 {
            return Err(Error::shape(format!(
                "decode: code of length {} / {} coordinates for a decoder with latent {} and point dim {d}",
                z.len(),
                points.len(),
                self.arch.latent_dim
            )));
        }
        let code = Tensor::new(vec![1, z.len()], z.to_vec())?;
        // chunks are independent tapes, so the result does not depend on scheduling
        let parts: Vec<Vec<f32>> = points
            .par_chunks(EVAL_CHUNK * d)
            .map(|chunk| {
                let b = chunk.len() / d;
                let mut tape = Tape::new();
                let vars = self.params.bind_frozen(&mut tape);
                let codes = tape.constant(code.clone());
                let pts = tape.constant(Tensor::new(vec![b, d], chunk.to_vec())?);
                let y = forward(&self.arch, &mut tape, &vars, codes, &vec![0; b], pts)?;
                Ok(tape.value(y).data().to_vec())
            })
            .collect::<Result<_>>()?;
        let out = parts.concat();
        Ok(out)
    }
}

/// Records the decoder on `tape`: row `i` of the result is
/// `f(points[i], codes[rows[i]])`, shape `b×1`.
pub fn forward<T: Scalar>(
    arch: &DecoderArch,
    tape: &mut Tape<T>,
    params: &[Var],
    codes: Var,
    rows: &[usize],
    points: Var,
) -> Result<Var> {
    let (_, cd) = tape.value(codes).dims2()?;
    let (b, pd) = tape.value(points).dims2()?;
    if cd != arch.latent_dim || pd != arch.point_dim || rows.len() != b {
        return Err(Error::shape(format!(
            "decoder input: codes width {cd}, points {b}×{pd}, {} row ids; expected latent {} and point dim {}",
            rows.len(),
            arch.latent_dim,
            arch.point_dim
        )));
    }
    if params.len() != 2 * (arch.widths.len() + 1) {
        return Err(Error::shape("decoder parameter count mismatch"));
    }
    let z = tape.gather_rows(codes, rows)?;
    let input = tape.concat(z, points)?;
    let mut h = input;
    for i in 0..arch.widths.len() {
        let x = if i > 0 && arch.skip { tape.concat(h, input)? } else { h };
        let pre = tape.linear(x, params[2 * i], params[2 * i + 1])?;
        h = tape.leaky_relu(pre, arch.alpha);
    }
    let last = arch.widths.len();
    let logit = tape.linear(h, params[2 * last], params[2 * last + 1])?;
    Ok(tape.sigmoid(logit))
}

/// `Σ w·(pred − label)² / Σ w`.
pub fn weighted_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, labels: Var, weights: Var) -> Result<Var> {
    let w = tape.value(weights);
    if w.data().iter().any(|&v| !(v > T::zero())) {
        return Err(Error::contract("point weights must be positive"));
    }
    let total: f64 = w.data().iter().map(|v| v.as_f64()).sum();
    if !(total > 0.0) {
        return Err(Error::contract("total point weight is zero"));
    }
    let diff = tape.sub(pred, labels)?;
    let sq = tape.square(diff);
    let weighted = tape.mul(sq, weights)?;
    let s = tape.sum(weighted);
    Ok(tape.scale(s, 1.0 / total))
}
