//! `train-ae`, `train-gan` and `train-svr`.

use std::io::Write;
use std::path::Path;

use imfield::training::{
    held_out_view, load_autoencoder, svr_views, AeTrainer, GanTrainer, ShapePyramid, SvrPair, SvrTrainer, VIEWS_PER_SHAPE,
};
use imfield::voxel::Split;
use imfield::{Encoder, Error};

use crate::config::Config;
use crate::dataset::{Dataset, RunDir};
use crate::error::{CliError, CliResult};

pub(crate) fn emit(out: &mut dyn Write, line: &str) -> CliResult<()> {
    writeln!(out, "{line}").map_err(|e| CliError::Core(Error::io("<stdout>", e)))
}

pub fn dataset(cfg: &Config) -> CliResult<Dataset> {
    Dataset::open(Path::new(cfg.raw("paths.data")))
}

/// Codes of one split, encoded from grids at the encoder's native side.
pub fn encode_split(data: &Dataset, encoder: &Encoder, split: Split) -> CliResult<Vec<Vec<f32>>> {
    data.entries(split)
        .into_iter()
        .map(|e| Ok(encoder.encode_grid(&data.grid(e, encoder.arch.side)?)?))
        .collect()
}

pub fn train_ae(cfg: &Config, resume: bool, out: &mut dyn Write) -> CliResult<AeTrainer> {
    let s = cfg.ae()?;
    let data = dataset(cfg)?;
    let entries = data.entries(Split::Train);
    if entries.is_empty() {
        return Err(CliError::usage("the training split is empty"));
    }
    let finest = s.train.finest();
    let shapes = entries
        .iter()
        .map(|e| {
            let g = data.grid(e, finest)?;
            if g.dims() != s.train.dims {
                return Err(CliError::usage(format!(
                    "dataset is {}D but data.dims is {}",
                    g.dims(),
                    s.train.dims
                )));
            }
            Ok(ShapePyramid::new(g, &s.train.schedule)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let run = RunDir::new(cfg, "ae");
    let mut t = match run.begin(resume)? {
        Some(c) => {
            run.trim_log(c.epoch as usize)?;
            AeTrainer::from_checkpoint(s.train.clone(), &c)?
        }
        None => AeTrainer::new(s.train.clone(), s.latent_dim, s.widths.clone())?,
    };
    while !t.finished() {
        let log = t.run_epoch(&shapes)?;
        run.append_log(&log.to_string())?;
        emit(out, &log.to_string())?;
        if t.stage_epoch == 1 {
            if let Some(b) = t.boundaries.last().filter(|b| b.to == t.resolution()) {
                let same = b.start_digest == Some(b.end_digest);
                emit(out, &format!("stage\t{}->{}\twarm_start_exact\t{same}", b.from, b.to))?;
            }
        }
        run.save(log.epoch, s.save_every, t.finished(), || t.to_checkpoint())?;
    }
    Ok(t)
}

pub fn train_gan(cfg: &Config, resume: bool, out: &mut dyn Write) -> CliResult<GanTrainer> {
    let (gc, save_every) = cfg.gan()?;
    let ae = RunDir::new(cfg, "ae").require("train-ae")?;
    let (encoder, _) = load_autoencoder(&ae)?;
    let data = dataset(cfg)?;
    let codes = encode_split(&data, &encoder, Split::Train)?;
    let held_out = encode_split(&data, &encoder, Split::Test)?;
    let run = RunDir::new(cfg, "gan");
    let mut t = match run.begin(resume)? {
        Some(c) => {
            run.trim_log(c.epoch as usize)?;
            GanTrainer::from_checkpoint(gc, &c, codes, held_out)?
        }
        None => GanTrainer::new(gc, codes, held_out)?,
    };
    while !t.finished() {
        let log = t.run_epoch()?;
        run.append_log(&log.to_string())?;
        emit(out, &log.to_string())?;
        run.save(log.epoch, save_every, t.finished(), || Ok(t.to_checkpoint()))?;
    }
    Ok(t)
}

/// Silhouette/code pairs of every shape in the manifest: shape `i`
/// withholds view `i mod 6` for testing and trains on the other five.
pub struct SvrData {
    pub train: Vec<SvrPair>,
    pub test: Vec<SvrPair>,
    /// Manifest index of each test pair's shape.
    pub test_shapes: Vec<usize>,
}

pub fn svr_data(data: &Dataset, encoder: &Encoder, side: usize) -> CliResult<SvrData> {
    if encoder.arch.dims != 3 {
        return Err(CliError::usage("single-view reconstruction needs 3D data"));
    }
    let mut d = SvrData {
        train: Vec::new(),
        test: Vec::new(),
        test_shapes: Vec::new(),
    };
    for (i, e) in data.manifest.entries.iter().enumerate() {
        let g = data.grid(e, encoder.arch.side)?;
        let code = encoder.encode_grid(&g)?;
        for (v, image) in svr_views(&g, side)?.into_iter().enumerate() {
            let pair = SvrPair {
                image,
                code: code.clone(),
            };
            if v == held_out_view(i) {
                d.test.push(pair);
                d.test_shapes.push(i);
            } else {
                d.train.push(pair);
            }
        }
    }
    debug_assert_eq!(d.train.len(), d.test.len() * (VIEWS_PER_SHAPE - 1));
    Ok(d)
}

pub fn train_svr(cfg: &Config, resume: bool, out: &mut dyn Write) -> CliResult<SvrTrainer> {
    let (sc, save_every) = cfg.svr()?;
    let ae = RunDir::new(cfg, "ae").require("train-ae")?;
    let (encoder, decoder) = load_autoencoder(&ae)?;
    let data = dataset(cfg)?;
    let pairs = svr_data(&data, &encoder, sc.side)?;
    let run = RunDir::new(cfg, "svr");
    let mut t = match run.begin(resume)? {
        Some(c) => {
            run.trim_log(c.epoch as usize)?;
            SvrTrainer::from_checkpoint(sc, &c, &pairs.train, &decoder)?
        }
        None => SvrTrainer::new(sc, &pairs.train, &decoder)?,
    };
    while !t.finished() {
        let log = t.run_epoch()?;
        run.append_log(&log.to_string())?;
        emit(out, &log.to_string())?;
        run.save(log.epoch, save_every, t.finished(), || Ok(t.to_checkpoint()))?;
    }
    Ok(t)
}
