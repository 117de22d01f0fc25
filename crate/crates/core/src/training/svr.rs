//! Single-view reconstruction: an image encoder regresses autoencoder codes
//! from silhouettes while the decoder stays frozen.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamConfig, AdamState, Tape};
use crate::checkpoint::Checkpoint;
use crate::decoder::Decoder;
use crate::encoder::{self, grid_batch, render_silhouette, Encoder, EncoderArch};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::voxel::{Axis, VoxelGrid};

use super::derive_seed;

/// Silhouettes along x, y, z, each plain and mirrored.
pub const VIEWS_PER_SHAPE: usize = 6;

/// The six views of `g`, ordered axis-major (`2·axis + mirrored`).
pub fn svr_views(g: &VoxelGrid, side: usize) -> Result<Vec<VoxelGrid>> {
    let mut out = Vec::with_capacity(VIEWS_PER_SHAPE);
    for axis in Axis::ALL {
        let s = render_silhouette(g, axis, side)?;
        let f = s.flip()?;
        out.push(s);
        out.push(f);
    }
    Ok(out)
}

/// View of shape `i` withheld from training.
pub fn held_out_view(i: usize) -> usize {
    i % VIEWS_PER_SHAPE
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvrConfig {
    pub side: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SvrConfig {
    fn default() -> Self {
        Self {
            side: 32,
            epochs: 200,
            batch: 16,
            lr: 1e-4,
            seed: 0,
        }
    }
}

impl SvrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || !(self.lr > 0.0) {
            return Err(Error::contract("SVR epochs, batch and learning rate must be positive"));
        }
        if !self.side.is_power_of_two() || self.side < 16 {
            return Err(Error::contract(format!("SVR image side {} must be a power of two ≥ 16", self.side)));
        }
        Ok(())
    }
}

/// One silhouette and the code it should map to.
#[derive(Clone, Debug, PartialEq)]
pub struct SvrPair {
    pub image: VoxelGrid,
    pub code: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvrLog {
    pub epoch: usize,
    pub code_mse: f64,
    pub wallclock_s: f64,
}

impl fmt::Display for SvrLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{:.6e}\t{:.3}", self.epoch, 0, self.code_mse, self.wallclock_s)
    }
}

pub struct SvrTrainer {
    pub cfg: SvrConfig,
    pub encoder: Encoder,
    pub opt: AdamState,
    pub epoch: usize,
    inputs: Vec<Tensor>,
    codes: Vec<Vec<f32>>,
    started: Instant,
}

impl SvrTrainer {
    /// Codes must match the frozen decoder's latent width.
    pub fn new(cfg: SvrConfig, pairs: &[SvrPair], decoder: &Decoder) -> Result<Self> {
        cfg.validate()?;
        let arch = EncoderArch::image(cfg.side, decoder.arch.latent_dim);
        let encoder = Encoder::new(arch, derive_seed(cfg.seed, &[20]))?;
        Self::with_encoder(cfg, pairs, decoder, encoder)
    }

    fn with_encoder(cfg: SvrConfig, pairs: &[SvrPair], decoder: &Decoder, encoder: Encoder) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::contract("no SVR training pairs"));
        }
        let d = decoder.arch.latent_dim;
        if encoder.arch.latent_dim != d {
            return Err(Error::shape("image encoder and decoder latent widths differ"));
        }
        if let Some(p) = pairs.iter().find(|p| p.code.len() != d) {
            return Err(Error::shape(format!(
                "target code of length {} for a decoder with latent {d}",
                p.code.len()
            )));
        }
        let inputs = pairs
            .iter()
            .map(|p| grid_batch(&encoder.arch, &[&p.image]))
            .collect::<Result<_>>()?;
        let adam = AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        };
        Ok(Self {
            opt: AdamState::new(adam, &encoder.params),
            cfg,
            encoder,
            epoch: 0,
            inputs,
            codes: pairs.iter().map(|p| p.code.clone()).collect(),
            started: Instant::now(),
        })
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    /// One shuffled pass; the logged value is the mean batch code MSE.
    pub fn run_epoch(&mut self) -> Result<SvrLog> {
        if self.finished() {
            return Err(Error::contract("SVR schedule already completed"));
        }
        let _ftz = super::ftz::FlushGuard::new();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, &[21, self.epoch as u64]));
        let mut order: Vec<usize> = (0..self.inputs.len()).collect();
        order.shuffle(&mut rng);
        let d = self.encoder.arch.latent_dim;
        let (mut total, mut steps) = (0.0, 0);
        for batch in order.chunks(self.cfg.batch) {
            let x: Vec<f32> = batch.iter().flat_map(|&i| self.inputs[i].data().iter().copied()).collect();
            let y: Vec<f32> = batch.iter().flat_map(|&i| self.codes[i].iter().copied()).collect();
            let mut tape = Tape::new();
            let vars = self.encoder.params.bind(&mut tape);
            let x = tape.constant(Tensor::new(self.encoder.arch.input_shape(batch.len()), x)?);
            let y = tape.constant(Tensor::new(vec![batch.len(), d], y)?);
            let z = encoder::forward(&self.encoder.arch, &mut tape, &vars, x)?;
            let diff = tape.sub(z, y)?;
            let sq = tape.square(diff);
            let loss = tape.mean(sq);
            let value = f64::from(tape.value(loss).data()[0]);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("SVR loss at epoch {}", self.epoch + 1)));
            }
            let grads = tape.backward(loss)?;
            let g: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
            self.opt.step(&mut self.encoder.params, &g)?;
            total += value;
            steps += 1;
        }
        self.epoch += 1;
        Ok(SvrLog {
            epoch: self.epoch,
            code_mse: total / steps as f64,
            wallclock_s: self.started.elapsed().as_secs_f64(),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.cfg.seed);
        c.epoch = self.epoch as u64;
        c.push_params(&self.encoder.params);
        c.push_adam("imenc", &self.opt, &self.encoder.params);
        c.set_meta("kind", "svr");
        c.set_meta("imenc.arch", &self.encoder.arch);
        c
    }

    pub fn from_checkpoint(cfg: SvrConfig, c: &Checkpoint, pairs: &[SvrPair], decoder: &Decoder) -> Result<Self> {
        cfg.validate()?;
        let encoder = load_image_encoder(c)?;
        let mut t = Self::with_encoder(cfg, pairs, decoder, encoder)?;
        t.opt = c.adam("imenc", t.opt.config, &t.encoder.params)?;
        t.epoch = c.epoch as usize;
        Ok(t)
    }
}

pub fn load_image_encoder(c: &Checkpoint) -> Result<Encoder> {
    Encoder::from_params(c.require_meta("imenc.arch")?.parse()?, c.params("imenc"))
}

/// Mean over pairs and code entries of `(encoder(image) − code)²`.
pub fn code_mse(encoder: &Encoder, pairs: &[SvrPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::contract("no pairs to evaluate"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for p in pairs {
        let z = encoder.encode_grid(&p.image)?;
        if z.len() != p.code.len() {
            return Err(Error::shape("code dimension mismatch"));
        }
        total += z.iter().zip(&p.code).map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2)).sum::<f64>();
        count += z.len();
    }
    Ok(total / count as f64)
}

/// Runs every epoch, handing each log line to `on_epoch`.
pub fn train_svr(
    pairs: &[SvrPair],
    decoder: &Decoder,
    cfg: SvrConfig,
    mut on_epoch: impl FnMut(&SvrTrainer, &SvrLog) -> Result<()>,
) -> Result<SvrTrainer> {
    let mut t = SvrTrainer::new(cfg, pairs, decoder)?;
    while !t.finished() {
        let log = t.run_epoch()?;
        on_epoch(&t, &log)?;
    }
    Ok(t)
}
