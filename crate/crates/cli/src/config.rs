//! `key = value` run configuration.
//!
//! Every key has a default; a config file or `--key=value` flags override
//! them. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use imfield::training::{GanConfig, SvrConfig, TrainConfig};
use imfield::Error;

use crate::error::{CliError, CliResult};

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

const fn key(name: &'static str, default: &'static str, doc: &'static str) -> Key {
    Key { name, default, doc }
}

/// Resolutions that carry per-resolution sampling keys.
pub const SAMPLED_RESOLUTIONS: [usize; 5] = [8, 16, 32, 64, 128];

pub const KEYS: &[Key] = &[
    key("paths.data", "data", "dataset directory (manifest.txt + shapes/)"),
    key("paths.runs", "runs", "run directory; each trainer writes runs/<kind>/"),
    key("data.count", "20", "number of procedural shapes"),
    key("data.seed", "7", "seed of the shape generator"),
    key("data.dims", "3", "3 for volumes, 2 for images"),
    key("data.resolutions", "16,32,64", "resolutions every shape is rasterized at"),
    key("ae.schedule", "16,32", "progressive training resolutions"),
    key("ae.epochs", "500,200", "epochs per stage (one value applies to every stage)"),
    key("ae.latent_dim", "16", "latent code length"),
    key("ae.widths", "256,256,128", "decoder hidden widths"),
    key("ae.lr", "1e-3", "decoder learning rate"),
    key("ae.encoder_lr", "1e-4", "encoder learning rate"),
    key("ae.shapes_per_step", "4", "shapes per optimizer step"),
    key("ae.seed", "0", "initialization and sampling seed"),
    key("ae.save_every", "50", "epochs between numbered checkpoints"),
    key("sample.far_budget8", "64", "far-set budget at 8"),
    key("sample.far_budget16", "512", "far-set budget at 16"),
    key("sample.far_budget32", "4096", "far-set budget at 32"),
    key("sample.far_budget64", "32768", "far-set budget at 64"),
    key("sample.far_budget128", "262144", "far-set budget at 128"),
    key("sample.points8", "2048", "points per shape per step at 8"),
    key("sample.points16", "2048", "points per shape per step at 16"),
    key("sample.points32", "4096", "points per shape per step at 32"),
    key("sample.points64", "4096", "points per shape per step at 64"),
    key("sample.points128", "4096", "points per shape per step at 128"),
    key("gan.noise_dim", "0", "generator noise width (0 = latent width)"),
    key("gan.hidden", "128", "hidden width of generator and critic"),
    key("gan.lambda_gp", "10", "gradient-penalty coefficient"),
    key("gan.critic_steps", "5", "critic updates per generator update"),
    key("gan.epochs", "2000", "generator updates"),
    key("gan.batch", "16", "codes per batch"),
    key("gan.lr", "1e-4", "learning rate of both networks"),
    key("gan.beta1", "0", "Adam beta1"),
    key("gan.beta2", "0.9", "Adam beta2"),
    key("gan.seed", "0", "initialization and noise seed"),
    key("gan.save_every", "100", "epochs between numbered checkpoints"),
    key("svr.side", "32", "silhouette side in pixels"),
    key("svr.epochs", "200", "passes over the training views"),
    key("svr.batch", "16", "views per batch"),
    key("svr.lr", "1e-4", "image encoder learning rate"),
    key("svr.seed", "0", "initialization and shuffle seed"),
    key("svr.save_every", "20", "epochs between numbered checkpoints"),
    key("svr.pgm_threshold", "128", "gray level at or above which an input PGM pixel is occupied"),
    key("eval.res", "32", "field resolution for metrics"),
    key("eval.samples", "2048", "mesh vertices drawn per Chamfer point set"),
    key("eval.seed", "0", "seed for vertex draws and generated samples"),
    key("eval.gan_multiplier", "5", "generated samples per test shape"),
    key("eval.gan_distance", "lfd", "shape distance for coverage/MMD: lfd or chamfer"),
];

fn lookup(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

/// Where a value came from, for error messages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Origin {
    Default,
    Line(usize),
    Flag,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<&'static str, (String, Origin)>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|k| (k.name, (k.default.to_string(), Origin::Default)))
                .collect(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(Error::Config {
                    line,
                    msg: format!("expected key = value, got {body:?}"),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            let Some(spec) = lookup(k) else {
                return Err(Error::Config {
                    line,
                    msg: format!("unknown key {k:?}"),
                });
            };
            c.values.insert(spec.name, (v.to_string(), Origin::Line(line)));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text)?)
    }

    /// Applies a `--key=value` flag.
    pub fn set(&mut self, name: &str, value: &str) -> CliResult<()> {
        let spec = lookup(name).ok_or_else(|| CliError::usage(format!("unknown config key --{name}")))?;
        self.values.insert(spec.name, (value.to_string(), Origin::Flag));
        Ok(())
    }

    pub fn raw(&self, name: &str) -> &str {
        &self.values.get(name).unwrap_or_else(|| panic!("undeclared config key {name}")).0
    }

    fn bad(&self, name: &str, msg: String) -> CliError {
        let (value, origin) = &self.values[name];
        let msg = format!("{name} = {value:?}: {msg}");
        match origin {
            Origin::Line(line) => CliError::Core(Error::Config { line: *line, msg }),
            Origin::Flag => CliError::usage(format!("flag --{msg}")),
            Origin::Default => CliError::usage(format!("default {msg}")),
        }
    }

    pub fn get<T: FromStr>(&self, name: &str) -> CliResult<T> {
        self.raw(name)
            .parse()
            .map_err(|_| self.bad(name, format!("expected {}", std::any::type_name::<T>())))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, name: &str) -> CliResult<Vec<T>> {
        self.raw(name)
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| self.bad(name, format!("expected a list of {}", std::any::type_name::<T>())))
    }

    /// Every key with its current value and description.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "# {}\n{} = {}", k.doc, k.name, self.raw(k.name));
        }
        out
    }

    pub fn dims(&self) -> CliResult<usize> {
        let d = self.get("data.dims")?;
        if d != 2 && d != 3 {
            return Err(self.bad("data.dims", "must be 2 or 3".into()));
        }
        Ok(d)
    }

    pub fn ae(&self) -> CliResult<AeSettings> {
        let schedule: Vec<usize> = self.list("ae.schedule")?;
        let mut epochs: Vec<usize> = self.list("ae.epochs")?;
        if epochs.len() == 1 {
            epochs = vec![epochs[0]; schedule.len()];
        }
        let mut points = Vec::new();
        let mut far = Vec::new();
        for &n in &schedule {
            if !SAMPLED_RESOLUTIONS.contains(&n) {
                return Err(self.bad("ae.schedule", format!("resolution {n} is not one of {SAMPLED_RESOLUTIONS:?}")));
            }
            points.push(self.get(&format!("sample.points{n}"))?);
            far.push(self.get(&format!("sample.far_budget{n}"))?);
        }
        let train = TrainConfig {
            schedule,
            epochs,
            shapes_per_step: self.get("ae.shapes_per_step")?,
            points_per_shape: points,
            far_budget: far,
            lr: self.get("ae.lr")?,
            encoder_lr: self.get("ae.encoder_lr")?,
            dims: self.dims()?,
            seed: self.get("ae.seed")?,
        };
        train.validate().map_err(|e| self.bad("ae.schedule", e.to_string()))?;
        Ok(AeSettings {
            train,
            latent_dim: self.get("ae.latent_dim")?,
            widths: self.list("ae.widths")?,
            save_every: self.save_every("ae.save_every")?,
        })
    }

    pub fn gan(&self) -> CliResult<(GanConfig, usize)> {
        let cfg = GanConfig {
            noise_dim: self.get("gan.noise_dim")?,
            hidden: self.get("gan.hidden")?,
            lambda_gp: self.get("gan.lambda_gp")?,
            critic_steps: self.get("gan.critic_steps")?,
            epochs: self.get("gan.epochs")?,
            batch: self.get("gan.batch")?,
            lr: self.get("gan.lr")?,
            beta1: self.get("gan.beta1")?,
            beta2: self.get("gan.beta2")?,
            seed: self.get("gan.seed")?,
        };
        cfg.validate().map_err(|e| self.bad("gan.epochs", e.to_string()))?;
        Ok((cfg, self.save_every("gan.save_every")?))
    }

    pub fn svr(&self) -> CliResult<(SvrConfig, usize)> {
        let cfg = SvrConfig {
            side: self.get("svr.side")?,
            epochs: self.get("svr.epochs")?,
            batch: self.get("svr.batch")?,
            lr: self.get("svr.lr")?,
            seed: self.get("svr.seed")?,
        };
        cfg.validate().map_err(|e| self.bad("svr.side", e.to_string()))?;
        Ok((cfg, self.save_every("svr.save_every")?))
    }

    fn save_every(&self, name: &str) -> CliResult<usize> {
        let n: usize = self.get(name)?;
        if n == 0 {
            return Err(self.bad(name, "must be at least 1".into()));
        }
        Ok(n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AeSettings {
    pub train: TrainConfig,
    pub latent_dim: usize,
    pub widths: Vec<usize>,
    pub save_every: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_into_valid_settings() {
        let c = Config::default();
        let ae = c.ae().unwrap();
        assert_eq!(ae.train.schedule, [16, 32]);
        assert_eq!(ae.train.epochs, [500, 200]);
        assert_eq!(ae.train.far_budget, [512, 4096]);
        c.gan().unwrap();
        c.svr().unwrap();
        assert_eq!(c.dims().unwrap(), 3);
    }

    #[test]
    fn every_key_is_documented_once() {
        for (i, k) in KEYS.iter().enumerate() {
            assert!(!k.doc.is_empty() && !k.default.is_empty(), "{}", k.name);
            assert!(KEYS[i + 1..].iter().all(|o| o.name != k.name), "{}", k.name);
        }
        for n in SAMPLED_RESOLUTIONS {
            assert!(lookup(&format!("sample.points{n}")).is_some());
            assert!(lookup(&format!("sample.far_budget{n}")).is_some());
        }
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let e = Config::parse("# comment\nae.lr = 1e-3\n\nae.lrr = 2\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 4, .. }), "{e}");
        assert!(matches!(Config::parse("ae.lr 3\n"), Err(Error::Config { line: 1, .. })));
    }

    #[test]
    fn file_values_and_flags_override_defaults() {
        let mut c = Config::parse("ae.epochs = 3   # short\ngan.lambda_gp=5\n").unwrap();
        assert_eq!(c.ae().unwrap().train.epochs, [3, 3]);
        assert_eq!(c.gan().unwrap().0.lambda_gp, 5.0);
        c.set("gan.lambda_gp", "7").unwrap();
        assert_eq!(c.gan().unwrap().0.lambda_gp, 7.0);
        assert!(matches!(c.set("gan.nope", "1"), Err(CliError::Usage(_))));
    }

    #[test]
    fn bad_values_name_their_origin() {
        let c = Config::parse("\nae.lr = fast\n").unwrap();
        match c.ae() {
            Err(CliError::Core(Error::Config { line, .. })) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let mut c = Config::default();
        c.set("ae.schedule", "32,16").unwrap();
        assert_eq!(c.ae().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn dump_round_trips() {
        let mut c = Config::default();
        c.set("svr.epochs", "9").unwrap();
        let back = Config::parse(&c.to_text()).unwrap();
        assert_eq!(back.to_text(), c.to_text());
        assert_eq!(back.svr().unwrap().0.epochs, 9);
    }
}
