//! `eval`: reconstruction, generation and single-view suites.

use std::io::Write;
use std::path::{Path, PathBuf};

use imfield::checkpoint::{write_atomic, Checkpoint};
use imfield::extract::{marching_cubes, sample_field, FieldGrid, Mesh};
use imfield::metrics::{
    chamfer, coverage, distance_matrix, iou, lfd_lite, lfd_lite_distance, lfd_lite_grid, mmd, sample_vertices,
    voxel_mse, SilhouetteDescriptor,
};
use imfield::training::{generate, held_out_view, load_autoencoder, load_generator, load_image_encoder};
use imfield::voxel::{ManifestEntry, Split};
use imfield::{Error, VoxelGrid};

use crate::config::Config;
use crate::dataset::{Dataset, RunDir};
use crate::decode::ISO;
use crate::error::{CliError, CliResult};
use crate::report::{Measured, Report};
use crate::train::{dataset, emit, svr_data};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Ae,
    Gan,
    Svr,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Ae => "ae",
            Suite::Gan => "gan",
            Suite::Svr => "svr",
        }
    }

    fn run_kind(self) -> (&'static str, &'static str) {
        match self {
            Suite::Ae => ("ae", "train-ae"),
            Suite::Gan => ("gan", "train-gan"),
            Suite::Svr => ("svr", "train-svr"),
        }
    }
}

pub struct EvalArgs {
    pub suite: Suite,
    /// Evaluate the ground truth in place of the model.
    pub oracle: bool,
    /// Evaluate the last N numbered checkpoints and keep the best.
    pub select_best_of: Option<usize>,
    /// Checkpoint of the suite's model; the run's latest when absent.
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

struct Settings {
    res: usize,
    samples: usize,
    seed: u64,
}

/// A shape prepared for every metric: occupancy, field values, surface
/// points and silhouette descriptor (the last two absent for empty 3D
/// surfaces and for 2D shapes).
pub struct Evaluated {
    pub occupancy: VoxelGrid,
    pub field: FieldGrid,
    pub points: Option<Vec<[f32; 3]>>,
    pub descriptor: Option<SilhouetteDescriptor>,
}

impl Evaluated {
    pub fn from_grid(g: &VoxelGrid, samples: usize, seed: u64) -> CliResult<Self> {
        let field = FieldGrid::from_grid(g);
        if g.dims() != 3 || g.count() == 0 {
            return Ok(Self::flat(g.clone(), field));
        }
        let mesh = marching_cubes(&field, ISO)?;
        Ok(Self {
            points: Some(sample_vertices(&mesh, samples, seed)?),
            descriptor: Some(lfd_lite_grid(g)?),
            occupancy: g.clone(),
            field,
        })
    }

    pub fn from_field(field: FieldGrid, samples: usize, seed: u64) -> CliResult<Self> {
        let occupancy = field.threshold(ISO)?;
        if field.dims() != 3 {
            return Ok(Self::flat(occupancy, field));
        }
        let mesh: Mesh = marching_cubes(&field, ISO)?;
        if mesh.is_empty() {
            return Ok(Self::flat(occupancy, field));
        }
        Ok(Self {
            points: Some(sample_vertices(&mesh, samples, seed)?),
            descriptor: lfd_lite(&mesh).ok(),
            occupancy,
            field,
        })
    }

    fn flat(occupancy: VoxelGrid, field: FieldGrid) -> Self {
        Self {
            occupancy,
            field,
            points: None,
            descriptor: None,
        }
    }

    /// Chamfer distance; infinite when either surface is missing.
    pub fn chamfer(&self, other: &Self) -> f64 {
        match (&self.points, &other.points) {
            (Some(a), Some(b)) => chamfer(a, b).unwrap_or(f64::INFINITY),
            _ => f64::INFINITY,
        }
    }

    /// Silhouette distance; infinite when either descriptor is missing.
    pub fn lfd(&self, other: &Self) -> f64 {
        match (&self.descriptor, &other.descriptor) {
            (Some(a), Some(b)) => lfd_lite_distance(a, b),
            _ => f64::INFINITY,
        }
    }
}

fn metric_names(dims: usize) -> &'static [&'static str] {
    if dims == 3 {
        &["mse", "iou", "cd", "lfd"]
    } else {
        &["mse", "iou"]
    }
}

/// Metrics of `recon` against `truth`, in [`metric_names`] order.
fn compare(truth: &Evaluated, recon: &Evaluated) -> CliResult<Vec<f64>> {
    let mut v = vec![
        voxel_mse(&truth.occupancy, &recon.field)?,
        iou(&truth.occupancy, &recon.occupancy)?,
    ];
    if truth.occupancy.dims() == 3 {
        v.push(truth.chamfer(recon));
        v.push(truth.lfd(recon));
    }
    Ok(v)
}

fn test_entries(data: &Dataset) -> CliResult<Vec<&ManifestEntry>> {
    let t = data.entries(Split::Test);
    if t.is_empty() {
        return Err(CliError::Core(Error::Contract("the test split is empty".into())));
    }
    Ok(t)
}

/// Reconstruction metrics per test shape; ground truth stands in for the
/// model when `ckpt` is `None`.
fn ae_suite(cfg: &Config, s: &Settings, ckpt: Option<&Checkpoint>) -> CliResult<Report> {
    let model = ckpt.map(load_autoencoder).transpose()?;
    let data = dataset(cfg)?;
    let mut items = Vec::new();
    let mut dims = 3;
    for e in test_entries(&data)? {
        let gt = data.grid(e, s.res)?;
        dims = gt.dims();
        let truth = Evaluated::from_grid(&gt, s.samples, s.seed)?;
        let recon = match &model {
            None => Evaluated::from_grid(&gt, s.samples, s.seed)?,
            Some((encoder, decoder)) => {
                let z = encoder.encode_grid(&data.grid(e, encoder.arch.side)?)?;
                Evaluated::from_field(sample_field(decoder, &z, s.res)?, s.samples, s.seed)?
            }
        };
        items.push(Measured {
            name: e.id.clone(),
            category: e.category().into(),
            values: compare(&truth, &recon)?,
        });
    }
    Ok(Report::aggregate(metric_names(dims), &items))
}

/// Coverage and MMD of generated shapes against the test split; the test
/// shapes themselves stand in for the samples when `ckpt` is `None`.
fn gan_suite(cfg: &Config, s: &Settings, ckpt: Option<&Checkpoint>) -> CliResult<Report> {
    let data = dataset(cfg)?;
    let truth = test_entries(&data)?
        .into_iter()
        .map(|e| Evaluated::from_grid(&data.grid(e, s.res)?, s.samples, s.seed))
        .collect::<CliResult<Vec<_>>>()?;
    if truth[0].occupancy.dims() != 3 {
        return Err(CliError::usage("the gan suite compares 3D shapes"));
    }
    let multiplier: usize = cfg.get("eval.gan_multiplier")?;
    let distance = cfg.raw("eval.gan_distance").to_string();
    if distance != "lfd" && distance != "chamfer" {
        return Err(CliError::usage(format!("eval.gan_distance {distance:?} is not lfd or chamfer")));
    }
    let samples: Vec<Evaluated> = if let Some(ckpt) = ckpt {
        let (_, decoder) = load_autoencoder(&RunDir::new(cfg, "ae").require("train-ae")?)?;
        let generator = load_generator(ckpt)?;
        generate(&generator, multiplier * truth.len(), s.seed)?
            .iter()
            .map(|z| Evaluated::from_field(sample_field(&decoder, z, s.res)?, s.samples, s.seed))
            .collect::<CliResult<_>>()?
    } else {
        data.entries(Split::Test)
            .into_iter()
            .map(|e| Evaluated::from_grid(&data.grid(e, s.res)?, s.samples, s.seed))
            .collect::<CliResult<_>>()?
    };
    let d = distance_matrix(&truth, &samples, |g, a| if distance == "lfd" { g.lfd(a) } else { g.chamfer(a) });
    let mut r = Report::default();
    let (cov, mmd) = (coverage(&d)?, mmd(&d)?);
    r.push("cov", crate::report::Scope::Overall, "all", truth.len(), cov);
    r.push("mmd", crate::report::Scope::Overall, "all", truth.len(), mmd);
    let mean_fraction = samples.iter().map(|e| e.occupancy.fraction()).sum::<f64>() / samples.len() as f64;
    r.push("fraction", crate::report::Scope::Overall, "samples", samples.len(), mean_fraction);
    r.set("distance", &distance);
    r.set("samples", samples.len());
    r.set("cov", crate::report::format_value(cov));
    r.set("mmd", crate::report::format_value(mmd));
    Ok(r)
}

/// Metrics per held-out view; ground truth stands in for the model when
/// `ckpt` is `None`.
fn svr_suite(cfg: &Config, s: &Settings, ckpt: Option<&Checkpoint>) -> CliResult<Report> {
    let (encoder, decoder) = load_autoencoder(&RunDir::new(cfg, "ae").require("train-ae")?)?;
    let imenc = ckpt.map(load_image_encoder).transpose()?;
    let side = match &imenc {
        Some(e) => e.arch.side,
        None => cfg.get("svr.side")?,
    };
    let data = dataset(cfg)?;
    let pairs = svr_data(&data, &encoder, side)?;
    let mut items = Vec::new();
    for (k, p) in pairs.test.iter().enumerate() {
        let i = pairs.test_shapes[k];
        let e = &data.manifest.entries[i];
        let gt = data.grid(e, s.res)?;
        let truth = Evaluated::from_grid(&gt, s.samples, s.seed)?;
        let (recon, code_err) = match &imenc {
            None => (Evaluated::from_grid(&gt, s.samples, s.seed)?, 0.0),
            Some(imenc) => {
                let z = imenc.encode_grid(&p.image)?;
                let err = z.iter().zip(&p.code).map(|(&a, &b)| f64::from(a - b).powi(2)).sum::<f64>() / z.len() as f64;
                (Evaluated::from_field(sample_field(&decoder, &z, s.res)?, s.samples, s.seed)?, err)
            }
        };
        let mut values = vec![code_err];
        values.extend(compare(&truth, &recon)?);
        items.push(Measured {
            name: format!("{}/view{}", e.id, held_out_view(i)),
            category: e.category().into(),
            values,
        });
    }
    let mut names = vec!["code_mse"];
    names.extend(metric_names(3));
    Ok(Report::aggregate(&names, &items))
}

/// Larger is better.
fn score(suite: Suite, r: &Report) -> (f64, f64) {
    let get = |m: &str| r.overall(m).unwrap_or(f64::NAN);
    match suite {
        Suite::Ae => (get("iou"), -get("cd")),
        Suite::Gan => (get("cov"), -get("mmd")),
        Suite::Svr => (-get("cd"), get("iou")),
    }
}

fn candidates(cfg: &Config, args: &EvalArgs) -> CliResult<Vec<PathBuf>> {
    let (kind, command) = args.suite.run_kind();
    let run = RunDir::new(cfg, kind);
    if let Some(p) = &args.checkpoint {
        return Ok(vec![p.clone()]);
    }
    if let Some(n) = args.select_best_of {
        if n == 0 {
            return Err(CliError::usage("--select-best-of needs at least 1"));
        }
        let all = run.numbered_checkpoints()?;
        if !all.is_empty() {
            let skip = all.len().saturating_sub(n);
            return Ok(all.into_iter().skip(skip).map(|(_, p)| p).collect());
        }
    }
    run.require(command)?;
    Ok(vec![run.last()])
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn eval(cfg: &Config, args: &EvalArgs, out: &mut dyn Write) -> CliResult<Report> {
    let s = Settings {
        res: cfg.get("eval.res")?,
        samples: cfg.get("eval.samples")?,
        seed: cfg.get("eval.seed")?,
    };
    crate::decode::check_res(s.res)?;
    if s.samples == 0 {
        return Err(CliError::usage("eval.samples must be at least 1"));
    }
    let mut best: Option<(Report, (f64, f64))> = None;
    let mut tried = Vec::new();
    let paths = if args.oracle { Vec::new() } else { candidates(cfg, args)? };
    let list: Vec<Option<&PathBuf>> = if paths.is_empty() { vec![None] } else { paths.iter().map(Some).collect() };
    for path in list {
        let ckpt = path.map(|p| Checkpoint::load(p)).transpose()?;
        let mut r = match args.suite {
            Suite::Ae => ae_suite(cfg, &s, ckpt.as_ref())?,
            Suite::Gan => gan_suite(cfg, &s, ckpt.as_ref())?,
            Suite::Svr => svr_suite(cfg, &s, ckpt.as_ref())?,
        };
        let name = path.map_or_else(|| "none".to_string(), |p| file_name(p));
        let sc = score(args.suite, &r);
        tried.push(format!("{name}:{}", crate::report::format_value(sc.0)));
        r.set("checkpoint", &name);
        if best.as_ref().map_or(true, |(_, b)| sc > *b) {
            best = Some((r, sc));
        }
    }
    let (mut r, _) = best.expect("at least one candidate");
    r.set("suite", args.suite.name());
    r.set("oracle", args.oracle);
    r.set("res", s.res);
    if tried.len() > 1 {
        r.set("candidates", tried.join(","));
    }
    let text = r.to_text();
    if let Some(p) = &args.out {
        write_atomic(p, text.as_bytes())?;
    }
    emit(out, text.trim_end())?;
    Ok(r)
}
