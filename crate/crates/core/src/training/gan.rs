//! Latent GAN over autoencoder codes, trained with the WGAN-GP objective.
//!
//! The gradient penalty needs `∇ₓD` inside a differentiable loss. Rather than
//! second-order tape support, the input gradient of the MLP critic is recorded
//! as an explicit graph: `g = 1·W_outᵀ`, then `g = (g ∘ mask_i)·W_iᵀ` down the
//! hidden layers. The leaky-ReLU masks are piecewise constant, so the graph is
//! exact wherever no pre-activation sits on a kink.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{AdamConfig, AdamState, Params, Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::derive_seed;

/// Fully connected net: leaky-ReLU hidden layers, optional sigmoid output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpArch {
    pub prefix: String,
    pub input_dim: usize,
    pub widths: Vec<usize>,
    pub output_dim: usize,
    pub sigmoid: bool,
    pub alpha: f64,
}

impl MlpArch {
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut prev = self.input_dim;
        let mut out = Vec::new();
        for &w in &self.widths {
            out.push((prev, w));
            prev = w;
        }
        out.push((prev, self.output_dim));
        out
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.widths.contains(&0) {
            return Err(Error::contract(format!("{} layers must have positive widths", self.prefix)));
        }
        if self.prefix.is_empty() || self.prefix.contains(char::is_whitespace) {
            return Err(Error::contract("network prefix must be a non-empty word"));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::contract(format!("leaky slope {} is outside [0, 1)", self.alpha)));
        }
        Ok(())
    }
}

impl fmt::Display for MlpArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let widths: Vec<String> = self.widths.iter().map(usize::to_string).collect();
        write!(
            f,
            "prefix={} in={} widths={} out={} sigmoid={} alpha={}",
            self.prefix,
            self.input_dim,
            widths.join(","),
            self.output_dim,
            self.sigmoid,
            self.alpha
        )
    }
}

impl FromStr for MlpArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut a = MlpArch {
            prefix: String::new(),
            input_dim: 0,
            widths: Vec::new(),
            output_dim: 0,
            sigmoid: false,
            alpha: 0.2,
        };
        let bad = |k: &str| Error::contract(format!("bad {k} in network descriptor {s:?}"));
        for field in s.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| bad("field"))?;
            match k {
                "prefix" => a.prefix = v.to_string(),
                "in" => a.input_dim = v.parse().map_err(|_| bad(k))?,
                "widths" if v.is_empty() => a.widths.clear(),
                "widths" => {
                    a.widths = v.split(',').map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| bad(k))?
                }
                "out" => a.output_dim = v.parse().map_err(|_| bad(k))?,
                "sigmoid" => a.sigmoid = v.parse().map_err(|_| bad(k))?,
                "alpha" => a.alpha = v.parse().map_err(|_| bad(k))?,
                _ => return Err(bad("key")),
            }
        }
        a.validate()?;
        Ok(a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub arch: MlpArch,
    pub params: Params,
}

impl Mlp {
    pub fn new(arch: MlpArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        for (i, (fi, fo)) in arch.layer_shapes().into_iter().enumerate() {
            params.push_xavier(format!("{}.layer{i}.W", arch.prefix), &[fi, fo], fi, fo, &mut rng);
            params.push_zeros(format!("{}.layer{i}.b", arch.prefix), &[fo]);
        }
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: MlpArch, params: Params) -> Result<Self> {
        let fresh = Self::new(arch, 0)?;
        if fresh.params.names() != params.names()
            || fresh.params.tensors().iter().zip(params.tensors()).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::shape(format!("parameters do not match the {} layout", fresh.arch.prefix)));
        }
        Ok(Self { arch: fresh.arch, params })
    }

    /// Outputs for a `b×input_dim` batch.
    pub fn apply(&self, x: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let x = tape.constant(x);
        let (y, _) = mlp_forward(&self.arch, &mut tape, &vars, x)?;
        Ok(tape.value(y).clone())
    }
}

/// Records the MLP; also returns the leaky-ReLU slope masks of each hidden
/// layer (1 where the pre-activation is positive, `alpha` elsewhere).
pub fn mlp_forward<T: Scalar>(
    arch: &MlpArch,
    tape: &mut Tape<T>,
    params: &[Var],
    x: Var,
) -> Result<(Var, Vec<Tensor<T>>)> {
    let (_, c) = tape.value(x).dims2()?;
    if c != arch.input_dim {
        return Err(Error::shape(format!("{} expects {} inputs, got {c}", arch.prefix, arch.input_dim)));
    }
    if params.len() != 2 * (arch.widths.len() + 1) {
        return Err(Error::shape(format!("{} parameter count mismatch", arch.prefix)));
    }
    let alpha = T::of_f64(arch.alpha);
    let mut masks = Vec::with_capacity(arch.widths.len());
    let mut h = x;
    for i in 0..arch.widths.len() {
        let pre = tape.linear(h, params[2 * i], params[2 * i + 1])?;
        masks.push(tape.value(pre).map(|v| if v > T::zero() { T::one() } else { alpha }));
        h = tape.leaky_relu(pre, arch.alpha);
    }
    let l = arch.widths.len();
    let mut y = tape.linear(h, params[2 * l], params[2 * l + 1])?;
    if arch.sigmoid {
        y = tape.sigmoid(y);
    }
    Ok((y, masks))
}

/// `mean_i (‖∇ₓD(x̂_i)‖₂ − 1)²` for a linear-output, single-output critic.
pub fn penalty_on_tape<T: Scalar>(arch: &MlpArch, tape: &mut Tape<T>, params: &[Var], xhat: Var) -> Result<Var> {
    if arch.sigmoid || arch.output_dim != 1 {
        return Err(Error::contract("gradient penalty needs a scalar linear critic"));
    }
    let (b, _) = tape.value(xhat).dims2()?;
    let (_, masks) = mlp_forward(arch, tape, params, xhat)?;
    let l = arch.widths.len();
    let ones = tape.constant(Tensor::full(&[b, 1], T::one()));
    let mut g = tape.matmul_t(ones, params[2 * l], false, true)?;
    for i in (0..l).rev() {
        let m = tape.constant(masks[i].clone());
        let gm = tape.mul(g, m)?;
        g = tape.matmul_t(gm, params[2 * i], false, true)?;
    }
    let sq = tape.square(g);
    let norm2 = tape.sum_cols(sq)?;
    let norm = tape.sqrt(norm2);
    let dev = tape.add_scalar(norm, -1.0);
    let dev2 = tape.square(dev);
    Ok(tape.mean(dev2))
}

/// Per-sample `ε·real + (1−ε)·fake`, `ε ~ U(0,1)` from `seed`.
pub fn interpolates(real: &Tensor, fake: &Tensor, seed: u64) -> Result<Tensor> {
    let (b, d) = real.dims2()?;
    if fake.shape() != real.shape() {
        return Err(Error::shape(format!(
            "real batch {:?} and fake batch {:?} differ",
            real.shape(),
            fake.shape()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(b * d);
    for i in 0..b {
        let e: f32 = rng.gen();
        out.extend(real.row(i).iter().zip(fake.row(i)).map(|(&r, &f)| e * r + (1.0 - e) * f));
    }
    Tensor::new(vec![b, d], out)
}

/// Gradient penalty of `critic` at interpolates of the two batches.
pub fn gradient_penalty(critic: &Mlp, real: &Tensor, fake: &Tensor, seed: u64) -> Result<f64> {
    let xhat = interpolates(real, fake, seed)?;
    let mut tape = Tape::<f64>::new();
    let vars = critic.params.cast::<f64>().bind_frozen(&mut tape);
    let x = tape.constant(xhat.cast());
    let p = penalty_on_tape(&critic.arch, &mut tape, &vars, x)?;
    Ok(tape.value(p).data()[0])
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    /// 0 means "same as the code dimension".
    pub noise_dim: usize,
    pub hidden: usize,
    pub lambda_gp: f64,
    pub critic_steps: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            noise_dim: 0,
            hidden: 128,
            lambda_gp: 10.0,
            critic_steps: 5,
            epochs: 2000,
            batch: 16,
            lr: 1e-4,
            beta1: 0.0,
            beta2: 0.9,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_gp > 0.0) {
            return Err(Error::contract("gradient-penalty coefficient must be positive"));
        }
        if self.hidden == 0 || self.critic_steps == 0 || self.epochs == 0 || self.batch == 0 {
            return Err(Error::contract("hidden width, critic steps, epochs and batch must be at least 1"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::contract("invalid GAN optimizer settings"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanLog {
    pub epoch: usize,
    pub critic_loss: f64,
    pub generator_loss: f64,
    /// `mean D(held-out real) − mean D(G(z))`.
    pub wasserstein: f64,
    pub wallclock_s: f64,
}

impl fmt::Display for GanLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.3}",
            self.epoch, self.critic_loss, self.generator_loss, self.wasserstein, self.wallclock_s
        )
    }
}

pub struct GanTrainer {
    pub cfg: GanConfig,
    pub generator: Mlp,
    pub critic: Mlp,
    pub gen_opt: AdamState,
    pub critic_opt: AdamState,
    pub epoch: usize,
    codes: Vec<Vec<f32>>,
    held_out: Vec<Vec<f32>>,
    started: Instant,
}

impl GanTrainer {
    /// `codes` train the networks; `held_out` only feeds the logged estimate
    /// (the training codes are used when it is empty).
    pub fn new(cfg: GanConfig, codes: Vec<Vec<f32>>, held_out: Vec<Vec<f32>>) -> Result<Self> {
        cfg.validate()?;
        let d = check_codes(&codes)?;
        if held_out.iter().any(|c| c.len() != d) {
            return Err(Error::shape("held-out codes have a different dimension"));
        }
        let noise = if cfg.noise_dim == 0 { d } else { cfg.noise_dim };
        let generator = Mlp::new(
            MlpArch {
                prefix: "gen".into(),
                input_dim: noise,
                widths: vec![cfg.hidden; 2],
                output_dim: d,
                sigmoid: true,
                alpha: 0.2,
            },
            derive_seed(cfg.seed, &[10]),
        )?;
        let critic = Mlp::new(
            MlpArch {
                prefix: "critic".into(),
                input_dim: d,
                widths: vec![cfg.hidden; 2],
                output_dim: 1,
                sigmoid: false,
                alpha: 0.2,
            },
            derive_seed(cfg.seed, &[11]),
        )?;
        Ok(Self::assemble(cfg, generator, critic, codes, held_out))
    }

    fn assemble(cfg: GanConfig, generator: Mlp, critic: Mlp, codes: Vec<Vec<f32>>, held_out: Vec<Vec<f32>>) -> Self {
        let adam = cfg.adam();
        Self {
            gen_opt: AdamState::new(adam, &generator.params),
            critic_opt: AdamState::new(adam, &critic.params),
            cfg,
            generator,
            critic,
            epoch: 0,
            codes,
            held_out,
            started: Instant::now(),
        }
    }

    pub fn code_dim(&self) -> usize {
        self.generator.arch.output_dim
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    fn noise(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let k = self.generator.arch.input_dim;
        Tensor::new(vec![n, k], (0..n * k).map(|_| rng.sample(StandardNormal)).collect())
    }

    fn batch(&self, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let b = self.cfg.batch.min(self.codes.len());
        let picks: Vec<&Vec<f32>> = self.codes.choose_multiple(rng, b).collect();
        Tensor::new(vec![b, self.code_dim()], picks.into_iter().flatten().copied().collect())
    }

    /// `critic_steps` critic updates followed by one generator update.
    pub fn run_epoch(&mut self) -> Result<GanLog> {
        if self.finished() {
            return Err(Error::contract("GAN schedule already completed"));
        }
        let _ftz = super::ftz::FlushGuard::new();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, &[12, self.epoch as u64]));
        let mut critic_loss = 0.0;
        for _ in 0..self.cfg.critic_steps {
            let real = self.batch(&mut rng)?;
            let b = real.shape()[0];
            let fake = self.generator.apply(self.noise(b, &mut rng)?)?;
            let xhat = interpolates(&real, &fake, rng.gen())?;
            let mut tape = Tape::new();
            let vars = self.critic.params.bind(&mut tape);
            let r = tape.constant(real);
            let f = tape.constant(fake);
            let x = tape.constant(xhat);
            let (dr, _) = mlp_forward(&self.critic.arch, &mut tape, &vars, r)?;
            let (df, _) = mlp_forward(&self.critic.arch, &mut tape, &vars, f)?;
            let mr = tape.mean(dr);
            let mf = tape.mean(df);
            let w = tape.sub(mf, mr)?;
            let gp = penalty_on_tape(&self.critic.arch, &mut tape, &vars, x)?;
            let gp = tape.scale(gp, self.cfg.lambda_gp);
            let loss = tape.add(w, gp)?;
            critic_loss = f64::from(tape.value(loss).data()[0]);
            if !critic_loss.is_finite() {
                return Err(Error::NonFinite(format!("critic loss at GAN epoch {}", self.epoch + 1)));
            }
            let grads = tape.backward(loss)?;
            let g: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
            self.critic_opt.step(&mut self.critic.params, &g)?;
        }
        let b = self.cfg.batch.min(self.codes.len());
        let z = self.noise(b, &mut rng)?;
        let mut tape = Tape::new();
        let gv = self.generator.params.bind(&mut tape);
        let cv = self.critic.params.bind_frozen(&mut tape);
        let z = tape.constant(z);
        let (fake, _) = mlp_forward(&self.generator.arch, &mut tape, &gv, z)?;
        let (df, _) = mlp_forward(&self.critic.arch, &mut tape, &cv, fake)?;
        let m = tape.mean(df);
        let loss = tape.scale(m, -1.0);
        let generator_loss = f64::from(tape.value(loss).data()[0]);
        if !generator_loss.is_finite() {
            return Err(Error::NonFinite(format!("generator loss at GAN epoch {}", self.epoch + 1)));
        }
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor> = gv.iter().map(|&v| grads.wrt(v)).collect();
        self.gen_opt.step(&mut self.generator.params, &g)?;
        self.epoch += 1;
        Ok(GanLog {
            epoch: self.epoch,
            critic_loss,
            generator_loss,
            wasserstein: self.wasserstein_estimate()?,
            wallclock_s: self.started.elapsed().as_secs_f64(),
        })
    }

    /// Critic gap between held-out real codes and a fixed set of samples.
    pub fn wasserstein_estimate(&self) -> Result<f64> {
        let real = if self.held_out.is_empty() { &self.codes } else { &self.held_out };
        let d = self.code_dim();
        let r = Tensor::new(vec![real.len(), d], real.iter().flatten().copied().collect())?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, &[13]));
        let fake = self.generator.apply(self.noise(64, &mut rng)?)?;
        let mean = |t: Tensor| -> Result<f64> {
            let v = self.critic.apply(t)?;
            Ok(v.data().iter().map(|&x| f64::from(x)).sum::<f64>() / v.len() as f64)
        };
        Ok(mean(r)? - mean(fake)?)
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f32>>> {
        generate(&self.generator, n, seed)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.cfg.seed);
        c.epoch = self.epoch as u64;
        c.push_params(&self.generator.params);
        c.push_params(&self.critic.params);
        c.push_adam("gen", &self.gen_opt, &self.generator.params);
        c.push_adam("critic", &self.critic_opt, &self.critic.params);
        c.set_meta("kind", "gan");
        c.set_meta("gen.arch", &self.generator.arch);
        c.set_meta("critic.arch", &self.critic.arch);
        c
    }

    pub fn from_checkpoint(
        cfg: GanConfig,
        c: &Checkpoint,
        codes: Vec<Vec<f32>>,
        held_out: Vec<Vec<f32>>,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = check_codes(&codes)?;
        let generator = load_generator(c)?;
        let critic = Mlp::from_params(c.require_meta("critic.arch")?.parse()?, c.params("critic"))?;
        if generator.arch.output_dim != d || critic.arch.input_dim != d {
            return Err(Error::shape("checkpoint networks do not match the code dimension"));
        }
        let mut t = Self::assemble(cfg, generator, critic, codes, held_out);
        let adam = t.cfg.adam();
        t.gen_opt = c.adam("gen", adam, &t.generator.params)?;
        t.critic_opt = c.adam("critic", adam, &t.critic.params)?;
        t.epoch = c.epoch as usize;
        Ok(t)
    }
}

fn check_codes(codes: &[Vec<f32>]) -> Result<usize> {
    let d = codes.first().map_or(0, Vec::len);
    if d == 0 || codes.iter().any(|c| c.len() != d) {
        return Err(Error::shape("latent codes must share one positive dimension"));
    }
    if codes.iter().all(|c| c == &codes[0]) {
        return Err(Error::contract("GAN training needs at least two distinct codes"));
    }
    Ok(d)
}

pub fn load_generator(c: &Checkpoint) -> Result<Mlp> {
    Mlp::from_params(c.require_meta("gen.arch")?.parse()?, c.params("gen"))
}

/// `n` generated codes from Gaussian noise seeded by `seed`.
pub fn generate(generator: &Mlp, n: usize, seed: u64) -> Result<Vec<Vec<f32>>> {
    let k = generator.arch.input_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Tensor::new(vec![n, k], (0..n * k).map(|_| rng.sample(StandardNormal)).collect())?;
    let out = generator.apply(z)?;
    Ok((0..n).map(|i| out.row(i).to_vec()).collect())
}

/// Runs every epoch, handing each log line to `on_epoch`.
pub fn train_latent_gan(
    codes: Vec<Vec<f32>>,
    held_out: Vec<Vec<f32>>,
    cfg: GanConfig,
    mut on_epoch: impl FnMut(&GanTrainer, &GanLog) -> Result<()>,
) -> Result<GanTrainer> {
    let mut t = GanTrainer::new(cfg, codes, held_out)?;
    while !t.finished() {
        let log = t.run_epoch()?;
        on_epoch(&t, &log)?;
    }
    Ok(t)
}
