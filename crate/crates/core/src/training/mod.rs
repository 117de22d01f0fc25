//! Progressive autoencoder training, the latent GAN, single-view regression
//! and latent interpolation.

mod ftz;
pub mod gan;
pub mod svr;

use std::fmt;
use std::time::Instant;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamConfig, AdamState};
use crate::checkpoint::Checkpoint;
use crate::decoder::{self, weighted_loss, Decoder, DecoderArch};
use crate::encoder::{self, grid_batch, Encoder, EncoderArch};
use crate::error::{Error, Result};
use crate::extract::{sample_field, FieldGrid};
use crate::sampling::{sample_naive, sample_surface_biased, SampledPointSet};
use crate::tensor::Tensor;
use crate::voxel::VoxelGrid;

use ftz::FlushGuard;

pub use gan::{generate, gradient_penalty, load_generator, train_latent_gan, GanConfig, GanLog, GanTrainer, Mlp, MlpArch};
pub use svr::{code_mse, held_out_view, load_image_encoder, svr_views, train_svr, SvrConfig, SvrLog, SvrPair, SvrTrainer, VIEWS_PER_SHAPE};

/// SplitMix64 finalizer over `seed` and a list of stream tags.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut h = seed;
    for &t in tags {
        h ^= t.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

/// `(1 − t)·z1 + t·z2`.
pub fn interpolate(z1: &[f32], z2: &[f32], t: f64) -> Result<Vec<f32>> {
    if z1.len() != z2.len() {
        return Err(Error::shape(format!(
            "cannot interpolate codes of length {} and {}",
            z1.len(),
            z2.len()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::contract(format!("interpolation parameter {t} is outside [0, 1]")));
    }
    Ok(z1
        .iter()
        .zip(z2)
        .map(|(&a, &b)| ((1.0 - t) * f64::from(a) + t * f64::from(b)) as f32)
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Strictly increasing powers of two.
    pub schedule: Vec<usize>,
    /// Epochs per stage.
    pub epochs: Vec<usize>,
    pub shapes_per_step: usize,
    /// Points drawn per shape per step, per stage.
    pub points_per_shape: Vec<usize>,
    /// Far-set budget of the surface-biased sampler, per stage.
    pub far_budget: Vec<usize>,
    /// Decoder learning rate.
    pub lr: f64,
    pub encoder_lr: f64,
    /// 3 for volumes, 2 for images.
    pub dims: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(schedule: Vec<usize>, epochs: usize) -> Self {
        let points = schedule.iter().map(|&n| if n <= 16 { 2048 } else { 4096 }).collect();
        let far = schedule.iter().map(|&n| n.pow(3) / 8).collect();
        Self {
            epochs: vec![epochs; schedule.len()],
            schedule,
            shapes_per_step: 8,
            points_per_shape: points,
            far_budget: far,
            lr: 1e-3,
            encoder_lr: 1e-4,
            dims: 3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.schedule.len();
        if k == 0 {
            return Err(Error::contract("resolution schedule is empty"));
        }
        if self.schedule.iter().any(|n| !n.is_power_of_two()) || self.schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract(format!(
                "schedule {:?} is not strictly increasing powers of two",
                self.schedule
            )));
        }
        if self.epochs.len() != k || self.points_per_shape.len() != k || self.far_budget.len() != k {
            return Err(Error::contract("per-stage settings must match the schedule length"));
        }
        if self.epochs.contains(&0) || self.points_per_shape.contains(&0) || self.far_budget.contains(&0) {
            return Err(Error::contract("epochs, points and far budgets must be at least 1"));
        }
        if self.shapes_per_step == 0 || !(self.lr > 0.0) || !(self.encoder_lr > 0.0) {
            return Err(Error::contract("shapes per step and learning rates must be positive"));
        }
        if self.dims != 2 && self.dims != 3 {
            return Err(Error::contract(format!("dimensionality {} is not 2 or 3", self.dims)));
        }
        Ok(())
    }

    /// (encoder, decoder) optimizer settings.
    pub fn adam(&self) -> (AdamConfig, AdamConfig) {
        let dec = AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        };
        (AdamConfig { lr: self.encoder_lr, ..dec }, dec)
    }

    pub fn finest(&self) -> usize {
        *self.schedule.last().expect("validated schedule")
    }
}

/// One shape at every scheduled resolution, derived from the finest grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapePyramid {
    pub grids: Vec<VoxelGrid>,
}

impl ShapePyramid {
    pub fn new(finest: VoxelGrid, schedule: &[usize]) -> Result<Self> {
        let mut grids = Vec::with_capacity(schedule.len());
        for &n in schedule.iter().rev() {
            let mut g = grids.last().cloned().unwrap_or_else(|| finest.clone());
            while g.n() > n {
                g = g.downsample()?;
            }
            if g.n() != n {
                return Err(Error::contract(format!(
                    "grid of side {} cannot provide resolution {n}",
                    finest.n()
                )));
            }
            grids.push(g);
        }
        grids.reverse();
        Ok(Self { grids })
    }

    pub fn finest(&self) -> &VoxelGrid {
        self.grids.last().expect("non-empty pyramid")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based across all stages.
    pub epoch: usize,
    pub resolution: usize,
    pub loss: f64,
    pub wallclock_s: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{:.6e}\t{:.3}", self.epoch, self.resolution, self.loss, self.wallclock_s)
    }
}

/// Parameter digests on both sides of a stage switch.
#[derive(Clone, Debug, PartialEq)]
pub struct StageBoundary {
    pub from: usize,
    pub to: usize,
    pub end_digest: (u64, u64),
    pub start_digest: Option<(u64, u64)>,
}

struct StageData {
    stage: usize,
    sets: Vec<SampledPointSet>,
    inputs: Vec<Tensor>,
}

pub struct AeTrainer {
    pub cfg: TrainConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub enc_opt: AdamState,
    pub dec_opt: AdamState,
    pub stage: usize,
    /// Epochs completed in the current stage.
    pub stage_epoch: usize,
    /// Epochs completed overall.
    pub epoch: usize,
    pub boundaries: Vec<StageBoundary>,
    started: Instant,
    data: Option<StageData>,
}

impl AeTrainer {
    /// The encoder's native side is the finest scheduled resolution.
    pub fn new(cfg: TrainConfig, latent_dim: usize, widths: Vec<usize>) -> Result<Self> {
        cfg.validate()?;
        let enc = Encoder::new(
            EncoderArch::voxel(cfg.dims, cfg.finest(), latent_dim),
            derive_seed(cfg.seed, &[1]),
        )?;
        let mut arch = DecoderArch::new(latent_dim, cfg.dims);
        arch.widths = widths;
        let dec = Decoder::new(arch, derive_seed(cfg.seed, &[2]))?;
        Ok(Self::assemble(cfg, enc, dec))
    }

    fn assemble(cfg: TrainConfig, encoder: Encoder, decoder: Decoder) -> Self {
        let (enc_adam, dec_adam) = cfg.adam();
        Self {
            enc_opt: AdamState::new(enc_adam, &encoder.params),
            dec_opt: AdamState::new(dec_adam, &decoder.params),
            cfg,
            encoder,
            decoder,
            stage: 0,
            stage_epoch: 0,
            epoch: 0,
            boundaries: Vec::new(),
            started: Instant::now(),
            data: None,
        }
    }

    pub fn finished(&self) -> bool {
        self.stage + 1 == self.cfg.schedule.len() && self.stage_epoch >= self.cfg.epochs[self.stage]
    }

    pub fn resolution(&self) -> usize {
        self.cfg.schedule[self.stage]
    }

    pub fn digests(&self) -> (u64, u64) {
        (self.encoder.params.digest(), self.decoder.params.digest())
    }

    fn prepare(&mut self, shapes: &[ShapePyramid]) -> Result<()> {
        if self.data.as_ref().is_some_and(|d| d.stage == self.stage) {
            return Ok(());
        }
        let budget = self.cfg.far_budget[self.stage];
        let mut sets = Vec::with_capacity(shapes.len());
        let mut inputs = Vec::with_capacity(shapes.len());
        for (i, s) in shapes.iter().enumerate() {
            let g = s.grids.get(self.stage).ok_or_else(|| {
                Error::contract(format!("shape {i} lacks resolution {}", self.resolution()))
            })?;
            if g.n() != self.resolution() || g.dims() != self.cfg.dims {
                return Err(Error::shape(format!(
                    "shape {i} stage grid is {}^{}, expected {}^{}",
                    g.n(),
                    g.dims(),
                    self.resolution(),
                    self.cfg.dims
                )));
            }
            let count = g.count();
            sets.push(if count == 0 || count == g.len() {
                sample_naive(g)
            } else {
                sample_surface_biased(g, budget, derive_seed(self.cfg.seed, &[3, self.stage as u64, i as u64]))?
            });
            inputs.push(grid_batch(&self.encoder.arch, &[g])?);
        }
        self.data = Some(StageData {
            stage: self.stage,
            sets,
            inputs,
        });
        Ok(())
    }

    /// One pass over all shapes in a seeded order; advances the stage when
    /// its epochs are done.
    pub fn run_epoch(&mut self, shapes: &[ShapePyramid]) -> Result<EpochLog> {
        if self.finished() {
            return Err(Error::contract("training schedule already completed"));
        }
        if shapes.is_empty() {
            return Err(Error::contract("no training shapes"));
        }
        if let Some(b) = self.boundaries.last_mut() {
            if b.start_digest.is_none() {
                b.start_digest = Some((self.encoder.params.digest(), self.decoder.params.digest()));
            }
        }
        self.prepare(shapes)?;
        let _ftz = FlushGuard::new();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, &[4, self.epoch as u64]));
        let mut order: Vec<usize> = (0..shapes.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for batch in order.chunks(self.cfg.shapes_per_step) {
            let loss = self.step(batch, &mut rng)?;
            total += loss;
            steps += 1;
        }
        self.epoch += 1;
        self.stage_epoch += 1;
        let log = EpochLog {
            epoch: self.epoch,
            resolution: self.resolution(),
            loss: total / steps as f64,
            wallclock_s: self.started.elapsed().as_secs_f64(),
        };
        if self.stage_epoch >= self.cfg.epochs[self.stage] && self.stage + 1 < self.cfg.schedule.len() {
            self.boundaries.push(StageBoundary {
                from: self.resolution(),
                to: self.cfg.schedule[self.stage + 1],
                end_digest: self.digests(),
                start_digest: None,
            });
            self.stage += 1;
            self.stage_epoch = 0;
        }
        Ok(log)
    }

    fn step(&mut self, batch: &[usize], rng: &mut ChaCha8Rng) -> Result<f64> {
        let data = self.data.as_ref().expect("prepared stage data");
        let per_shape = self.cfg.points_per_shape[self.stage];
        let mut xin = Vec::new();
        let (mut pts, mut labels, mut weights, mut rows) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (r, &s) in batch.iter().enumerate() {
            xin.extend_from_slice(data.inputs[s].data());
            let set = &data.sets[s];
            let picks: Vec<usize> = if set.len() <= per_shape {
                (0..set.len()).collect()
            } else {
                let mut p = sample(rng, set.len(), per_shape).into_vec();
                p.sort_unstable();
                p
            };
            for i in picks {
                pts.extend_from_slice(set.point(i));
                labels.push(set.labels[i]);
                weights.push(set.weights[i]);
                rows.push(r);
            }
        }
        let b = rows.len();
        let mut tape = crate::Tape::new();
        let ev = self.encoder.params.bind(&mut tape);
        let dv = self.decoder.params.bind(&mut tape);
        let x = tape.constant(Tensor::new(self.encoder.arch.input_shape(batch.len()), xin)?);
        let codes = encoder::forward(&self.encoder.arch, &mut tape, &ev, x)?;
        let p = tape.constant(Tensor::new(vec![b, self.cfg.dims], pts)?);
        let pred = decoder::forward(&self.decoder.arch, &mut tape, &dv, codes, &rows, p)?;
        let l = tape.constant(Tensor::new(vec![b, 1], labels)?);
        let w = tape.constant(Tensor::new(vec![b, 1], weights)?);
        let loss = weighted_loss(&mut tape, pred, l, w)?;
        let value = f64::from(tape.value(loss).data()[0]);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "autoencoder loss at epoch {} (resolution {})",
                self.epoch + 1,
                self.resolution()
            )));
        }
        let grads = tape.backward(loss)?;
        let eg: Vec<Tensor> = ev.iter().map(|&v| grads.wrt(v)).collect();
        let dg: Vec<Tensor> = dv.iter().map(|&v| grads.wrt(v)).collect();
        // check both before touching either network
        for (names, gs) in [(self.encoder.params.names(), &eg), (self.decoder.params.names(), &dg)] {
            if let Some((n, _)) = names.iter().zip(gs.iter()).find(|(_, g)| !g.all_finite()) {
                return Err(Error::NonFinite(format!("gradient of parameter {n}")));
            }
        }
        self.enc_opt.step(&mut self.encoder.params, &eg)?;
        self.dec_opt.step(&mut self.decoder.params, &dg)?;
        Ok(value)
    }

    /// Codes of every shape from its finest grid with the current encoder.
    pub fn codes(&self, shapes: &[ShapePyramid]) -> Result<Vec<Vec<f32>>> {
        shapes.iter().map(|s| self.encoder.encode_grid(s.finest())).collect()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(self.cfg.seed);
        c.stage = self.stage as u32;
        c.epoch = self.epoch as u64;
        c.push_params(&self.encoder.params);
        c.push_params(&self.decoder.params);
        c.push_adam("enc", &self.enc_opt, &self.encoder.params);
        c.push_adam("dec", &self.dec_opt, &self.decoder.params);
        c.set_meta("kind", "ae");
        c.set_meta("enc.arch", &self.encoder.arch);
        c.set_meta("dec.arch", &self.decoder.arch);
        c.set_meta("stage_epoch", self.stage_epoch);
        Ok(c)
    }

    /// Resumes from a checkpoint written by [`AeTrainer::to_checkpoint`].
    pub fn from_checkpoint(cfg: TrainConfig, c: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        let (encoder, decoder) = load_autoencoder(c)?;
        if encoder.arch.dims != cfg.dims || encoder.arch.side != cfg.finest() {
            return Err(Error::contract("checkpoint encoder does not match the configured schedule"));
        }
        let mut t = Self::assemble(cfg, encoder, decoder);
        let (enc_adam, dec_adam) = t.cfg.adam();
        t.enc_opt = c.adam("enc", enc_adam, &t.encoder.params)?;
        t.dec_opt = c.adam("dec", dec_adam, &t.decoder.params)?;
        t.stage = c.stage as usize;
        t.epoch = c.epoch as usize;
        t.stage_epoch = c
            .require_meta("stage_epoch")?
            .parse()
            .map_err(|_| Error::contract("bad stage_epoch entry"))?;
        if t.stage >= t.cfg.schedule.len() {
            return Err(Error::contract("checkpoint stage is beyond the configured schedule"));
        }
        Ok(t)
    }
}

/// Encoder and decoder stored in an autoencoder checkpoint.
pub fn load_autoencoder(c: &Checkpoint) -> Result<(Encoder, Decoder)> {
    let ea: EncoderArch = c.require_meta("enc.arch")?.parse()?;
    let da: DecoderArch = c.require_meta("dec.arch")?.parse()?;
    Ok((
        Encoder::from_params(ea, c.params("enc"))?,
        Decoder::from_params(da, c.params("dec"))?,
    ))
}

/// Decoder field of `g`'s code, sampled at resolution `m`.
pub fn reconstruct(encoder: &Encoder, decoder: &Decoder, g: &VoxelGrid, m: usize) -> Result<FieldGrid> {
    let z = encoder.encode_grid(g)?;
    sample_field(decoder, &z, m)
}

/// Runs every remaining epoch, handing each log line to `on_epoch`.
pub fn train_ae(
    shapes: &[ShapePyramid],
    cfg: TrainConfig,
    latent_dim: usize,
    widths: Vec<usize>,
    mut on_epoch: impl FnMut(&AeTrainer, &EpochLog) -> Result<()>,
) -> Result<AeTrainer> {
    let mut t = AeTrainer::new(cfg, latent_dim, widths)?;
    while !t.finished() {
        let log = t.run_epoch(shapes)?;
        on_epoch(&t, &log)?;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let a = [0.1, 0.7, -3.0];
        let b = [0.9, 0.2, 5.0];
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), b);
        let m = interpolate(&a, &b, 0.5).unwrap();
        for i in 0..3 {
            assert!((m[i] - (a[i] + b[i]) / 2.0).abs() < 1e-6);
        }
        assert!(interpolate(&a, &b[..2], 0.5).is_err());
        assert!(interpolate(&a, &b, 1.5).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::new(vec![16, 32], 1).validate().is_ok());
        assert!(TrainConfig::new(vec![32, 16], 1).validate().is_err());
        assert!(TrainConfig::new(vec![16, 24], 1).validate().is_err());
        assert!(TrainConfig::new(vec![], 1).validate().is_err());
        assert!(TrainConfig::new(vec![16], 0).validate().is_err());
    }

    #[test]
    fn pyramid_downsamples_from_finest() {
        let g = VoxelGrid::from_fn(32, 3, |c| c[0] < 10).unwrap();
        let p = ShapePyramid::new(g.clone(), &[8, 16, 32]).unwrap();
        assert_eq!(p.grids.iter().map(VoxelGrid::n).collect::<Vec<_>>(), vec![8, 16, 32]);
        assert_eq!(p.grids[1], g.downsample().unwrap());
        assert!(ShapePyramid::new(g, &[64]).is_err());
    }

    #[test]
    fn seeds_differ_per_stream() {
        assert_ne!(derive_seed(1, &[4, 0]), derive_seed(1, &[4, 1]));
        assert_ne!(derive_seed(1, &[4, 0]), derive_seed(2, &[4, 0]));
        assert_eq!(derive_seed(7, &[3, 1, 2]), derive_seed(7, &[3, 1, 2]));
    }
}
