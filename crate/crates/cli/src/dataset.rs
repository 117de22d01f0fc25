//! On-disk layout of datasets and training runs.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use imfield::checkpoint::{write_atomic, Checkpoint};
use imfield::voxel::{load_imvx, rasterize, rasterize_slice, save_imvx, Manifest, ManifestEntry, Split};
use imfield::{Error, ShapeSpec, VoxelGrid};

use crate::config::Config;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.txt";

fn create_dir(p: &Path) -> CliResult<()> {
    fs::create_dir_all(p).map_err(|e| CliError::Core(Error::io(p, e)))
}

pub fn read(p: &Path) -> CliResult<Vec<u8>> {
    fs::read(p).map_err(|e| CliError::Core(Error::io(p, e)))
}

/// `<data>/manifest.txt` plus `<data>/shapes/<id>/<n>.imvx`.
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> CliResult<Self> {
        let path = root.join(MANIFEST);
        if !path.exists() {
            return Err(CliError::usage(format!(
                "no dataset manifest at {}; run gen-data first",
                path.display()
            )));
        }
        let text = String::from_utf8_lossy(&read(&path)?).into_owned();
        Ok(Self {
            root: root.to_path_buf(),
            manifest: Manifest::parse(&text)?,
        })
    }

    pub fn entries(&self, split: Split) -> Vec<&ManifestEntry> {
        self.manifest.split(split).collect()
    }

    pub fn entry(&self, id: &str) -> CliResult<&ManifestEntry> {
        self.manifest
            .get(id)
            .ok_or_else(|| CliError::usage(format!("unknown shape id {id:?}")))
    }

    /// Grid of `entry` at resolution `n`.
    pub fn grid(&self, entry: &ManifestEntry, n: usize) -> CliResult<VoxelGrid> {
        let path = self.root.join(&entry.path).join(format!("{n}.imvx"));
        if !path.exists() {
            return Err(CliError::usage(format!(
                "{} is missing; add {n} to data.resolutions and rerun gen-data",
                path.display()
            )));
        }
        Ok(load_imvx(&read(&path)?)?)
    }
}

/// Writes `data.count` procedural shapes at every resolution; the first
/// 80% (rounded down) form the training split.
pub fn gen_data(cfg: &Config) -> CliResult<Dataset> {
    let root = PathBuf::from(cfg.raw("paths.data"));
    let count: usize = cfg.get("data.count")?;
    let seed: u64 = cfg.get("data.seed")?;
    let dims = cfg.dims()?;
    let resolutions: Vec<usize> = cfg.list("data.resolutions")?;
    if count == 0 {
        return Err(CliError::usage("data.count must be at least 1"));
    }
    let train = count * 4 / 5;
    let mut manifest = Manifest::default();
    for (i, (id, spec)) in ShapeSpec::corpus(count, seed).into_iter().enumerate() {
        let rel = format!("shapes/{id}");
        let dir = root.join(&rel);
        create_dir(&dir)?;
        for &n in &resolutions {
            let g = if dims == 3 { rasterize(&spec, n)? } else { rasterize_slice(&spec, n)? };
            let path = dir.join(format!("{n}.imvx"));
            write_atomic(&path, &save_imvx(&g))?;
        }
        manifest.entries.push(ManifestEntry {
            id,
            path: rel,
            split: if i < train { Split::Train } else { Split::Test },
        });
    }
    write_atomic(&root.join(MANIFEST), manifest.to_text().as_bytes())?;
    Ok(Dataset { root, manifest })
}

/// `<runs>/<kind>/`: numbered `epoch-NNNNN.imck`, `last.imck`, `log.tsv`.
pub struct RunDir {
    pub dir: PathBuf,
}

impl RunDir {
    pub fn new(cfg: &Config, kind: &str) -> Self {
        Self {
            dir: Path::new(cfg.raw("paths.runs")).join(kind),
        }
    }

    pub fn last(&self) -> PathBuf {
        self.dir.join("last.imck")
    }

    pub fn log(&self) -> PathBuf {
        self.dir.join("log.tsv")
    }

    pub fn numbered(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch-{epoch:05}.imck"))
    }

    /// Latest checkpoint, or an error naming the command that writes it.
    pub fn require(&self, command: &str) -> CliResult<Checkpoint> {
        let p = self.last();
        if !p.exists() {
            return Err(CliError::usage(format!("no checkpoint at {}; run {command} first", p.display())));
        }
        Ok(Checkpoint::load(&p)?)
    }

    /// Starts a fresh run (removing old checkpoints and log) or, when
    /// `resume` is set, returns the checkpoint to continue from.
    pub fn begin(&self, resume: bool) -> CliResult<Option<Checkpoint>> {
        create_dir(&self.dir)?;
        if resume && self.last().exists() {
            return Ok(Some(Checkpoint::load(&self.last())?));
        }
        for e in fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))? {
            let p = e.map_err(|e| Error::io(&self.dir, e))?.path();
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.ends_with(".imck") || name == "log.tsv" {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        Ok(None)
    }

    /// Drops log lines past `epoch`, which a resumed run will write again.
    pub fn trim_log(&self, epoch: usize) -> CliResult<()> {
        let p = self.log();
        if !p.exists() {
            return Ok(());
        }
        let text = String::from_utf8_lossy(&read(&p)?).into_owned();
        let kept: String = text
            .lines()
            .filter(|l| l.split('\t').next().and_then(|e| e.parse::<usize>().ok()).is_some_and(|e| e <= epoch))
            .map(|l| format!("{l}\n"))
            .collect();
        write_atomic(&p, kept.as_bytes())?;
        Ok(())
    }

    pub fn append_log(&self, line: &str) -> CliResult<()> {
        let p = self.log();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&p)
            .map_err(|e| Error::io(&p, e))?;
        writeln!(f, "{line}").map_err(|e| CliError::Core(Error::io(&p, e)))
    }

    /// Every `save_every` epochs and at the end: a numbered checkpoint and
    /// `last.imck`.
    pub fn save(
        &self,
        epoch: usize,
        save_every: usize,
        finished: bool,
        make: impl FnOnce() -> imfield::Result<Checkpoint>,
    ) -> CliResult<bool> {
        if epoch % save_every != 0 && !finished {
            return Ok(false);
        }
        let bytes = make()?.to_bytes()?;
        write_atomic(&self.numbered(epoch), &bytes)?;
        write_atomic(&self.last(), &bytes)?;
        Ok(true)
    }

    /// Numbered checkpoints, oldest first.
    pub fn numbered_checkpoints(&self) -> CliResult<Vec<(usize, PathBuf)>> {
        let mut out = Vec::new();
        if !self.dir.exists() {
            return Ok(out);
        }
        for e in fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))? {
            let p = e.map_err(|e| Error::io(&self.dir, e))?.path();
            let epoch = p
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("epoch-")?.strip_suffix(".imck")?.parse().ok());
            if let Some(epoch) = epoch {
                out.push((epoch, p));
            }
        }
        out.sort();
        Ok(out)
    }
}
