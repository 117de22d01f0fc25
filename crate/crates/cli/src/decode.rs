//! `decode` and `interpolate`.

use std::io::Write;
use std::path::{Path, PathBuf};

use imfield::checkpoint::write_atomic;
use imfield::extract::{export_obj, marching_cubes, sample_field, FieldGrid, Mesh};
use imfield::training::{generate, interpolate, load_autoencoder, load_generator, load_image_encoder};
use imfield::voxel::{load_pgm, save_pgm};
use imfield::{Decoder, Error};

use crate::config::Config;
use crate::dataset::{read, RunDir};
use crate::error::{CliError, CliResult};
use crate::train::{dataset, emit};

/// Iso level of the occupancy field.
pub const ISO: f32 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub enum CodeSource {
    /// Re-encode a dataset shape.
    Shape(String),
    /// Whitespace-separated floats.
    File(PathBuf),
    /// Generator sample for this noise seed.
    GanSample(u64),
    /// Silhouette PGM through the single-view encoder.
    Image(PathBuf),
}

/// What a decoded field turned into.
#[derive(Clone, Debug, PartialEq)]
pub enum Rendered {
    Mesh(Mesh),
    Image { side: usize, occupied: usize },
}

impl Rendered {
    pub fn describe(&self) -> String {
        match self {
            Rendered::Mesh(m) => format!("vertices\t{}\ttriangles\t{}", m.vertices.len(), m.triangles.len()),
            Rendered::Image { side, occupied } => format!("pixels\t{}\toccupied\t{occupied}", side * side),
        }
    }
}

pub fn check_res(res: usize) -> CliResult<()> {
    if res < 2 {
        return Err(CliError::usage(format!("--res {res} is below 2")));
    }
    Ok(())
}

/// File bytes for a field: an OBJ mesh in 3D, a PGM (gray or
/// thresholded) in 2D.
pub fn render(field: &FieldGrid, binarize: bool) -> CliResult<(Vec<u8>, Rendered)> {
    if field.dims() == 3 {
        let mesh = marching_cubes(field, ISO)?;
        return Ok((export_obj(&mesh).into_bytes(), Rendered::Mesh(mesh)));
    }
    let px: Vec<u8> = if binarize {
        field.values().iter().map(|&v| if v >= ISO { 255 } else { 0 }).collect()
    } else {
        field.values().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    };
    let occupied = field.values().iter().filter(|&&v| v >= ISO).count();
    let m = field.m();
    Ok((save_pgm(m, m, &px)?, Rendered::Image { side: m, occupied }))
}

fn autoencoder_decoder(cfg: &Config, checkpoint: Option<&Path>) -> CliResult<(imfield::Encoder, Decoder)> {
    let c = match checkpoint {
        Some(p) => imfield::checkpoint::Checkpoint::load(p)?,
        None => RunDir::new(cfg, "ae").require("train-ae")?,
    };
    Ok(load_autoencoder(&c)?)
}

fn parse_code(text: &str, path: &Path) -> CliResult<Vec<f32>> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<f32>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                CliError::Core(Error::Format {
                    offset: 0,
                    msg: format!("{}: {t:?} is not a finite number", path.display()),
                })
            })
        })
        .collect()
}

/// Latent code from any supported source, checked against the decoder.
pub fn resolve_code(
    cfg: &Config,
    source: &CodeSource,
    encoder: &imfield::Encoder,
    decoder: &Decoder,
) -> CliResult<Vec<f32>> {
    let z = match source {
        CodeSource::Shape(id) => {
            let data = dataset(cfg)?;
            let e = data.entry(id)?;
            encoder.encode_grid(&data.grid(e, encoder.arch.side)?)?
        }
        CodeSource::File(p) => parse_code(&String::from_utf8_lossy(&read(p)?), p)?,
        CodeSource::GanSample(seed) => {
            let g = load_generator(&RunDir::new(cfg, "gan").require("train-gan")?)?;
            generate(&g, 1, *seed)?.remove(0)
        }
        CodeSource::Image(p) => {
            let enc = load_image_encoder(&RunDir::new(cfg, "svr").require("train-svr")?)?;
            let threshold: u8 = cfg.get("svr.pgm_threshold")?;
            let img = load_pgm(&read(p)?, threshold)?;
            enc.encode_grid(&img)?
        }
    };
    if z.len() != decoder.arch.latent_dim {
        return Err(CliError::Core(Error::Shape(format!(
            "code has {} entries, the decoder expects {}",
            z.len(),
            decoder.arch.latent_dim
        ))));
    }
    Ok(z)
}

pub struct DecodeArgs {
    pub source: CodeSource,
    pub res: usize,
    pub out: PathBuf,
    pub binarize: bool,
    /// Autoencoder checkpoint; the run's latest when absent.
    pub checkpoint: Option<PathBuf>,
}

pub fn decode(cfg: &Config, args: &DecodeArgs, out: &mut dyn Write) -> CliResult<Rendered> {
    check_res(args.res)?;
    let (encoder, decoder) = autoencoder_decoder(cfg, args.checkpoint.as_deref())?;
    let z = resolve_code(cfg, &args.source, &encoder, &decoder)?;
    let (bytes, r) = render(&sample_field(&decoder, &z, args.res)?, args.binarize)?;
    write_atomic(&args.out, &bytes)?;
    if matches!(&r, Rendered::Mesh(m) if m.is_empty()) {
        eprintln!("warning: the field has no surface at level {ISO}; wrote an empty mesh");
    }
    emit(out, &r.describe())?;
    Ok(r)
}

pub struct InterpolateArgs {
    pub a: String,
    pub b: String,
    pub steps: usize,
    pub res: usize,
    pub out_dir: PathBuf,
    pub binarize: bool,
    pub checkpoint: Option<PathBuf>,
}

/// File name of step `i` in an interpolation sequence.
pub fn step_name(i: usize, dims: usize) -> String {
    format!("step-{i:03}.{}", if dims == 3 { "obj" } else { "pgm" })
}

/// Decodes codes at `t = i/(k−1)` between shapes `a` and `b`.
pub fn interpolate_shapes(cfg: &Config, args: &InterpolateArgs, out: &mut dyn Write) -> CliResult<Vec<Rendered>> {
    if args.steps < 2 {
        return Err(CliError::usage(format!("--steps {} is below 2", args.steps)));
    }
    check_res(args.res)?;
    let (encoder, decoder) = autoencoder_decoder(cfg, args.checkpoint.as_deref())?;
    let za = resolve_code(cfg, &CodeSource::Shape(args.a.clone()), &encoder, &decoder)?;
    let zb = resolve_code(cfg, &CodeSource::Shape(args.b.clone()), &encoder, &decoder)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let mut done = Vec::with_capacity(args.steps);
    for i in 0..args.steps {
        let t = i as f64 / (args.steps - 1) as f64;
        let z = interpolate(&za, &zb, t)?;
        let (bytes, r) = render(&sample_field(&decoder, &z, args.res)?, args.binarize)?;
        write_atomic(&args.out_dir.join(step_name(i, decoder.arch.point_dim)), &bytes)?;
        let extra = match &r {
            Rendered::Mesh(m) => format!("\twatertight\t{}\teuler\t{}", m.is_watertight(), m.euler_characteristic()),
            Rendered::Image { .. } => String::new(),
        };
        emit(out, &format!("step\t{i}\tt\t{t:.4}\t{}{extra}", r.describe()))?;
        done.push(r);
    }
    Ok(done)
}
