//! IMCK checkpoint files: named f32 arrays plus a metadata block.
//!
//! Layout (little-endian): `"IMCK"`, `u32` version, `u32` array count; per
//! array a `u32`-length UTF-8 name, `u32` rank, `u32` dims, f32 payload.
//! The trailing metadata block holds `u32` stage, `u64` epoch, `u64` seed and
//! a `u32`-counted list of string key/value pairs (architecture descriptors,
//! optimizer step counts and the like).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::{AdamConfig, AdamState, Params};
use crate::error::{Error, Result};
use crate::format::{put_f32, put_string, put_u32, put_u64, to_u32, Reader};
use crate::tensor::Tensor;

pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub arrays: Vec<(String, Tensor)>,
    pub stage: u32,
    pub epoch: u64,
    pub seed: u64,
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = b"IMCK".to_vec();
        put_u32(&mut out, VERSION);
        put_u32(&mut out, to_u32(self.arrays.len(), "array count")?);
        for (name, t) in &self.arrays {
            put_string(&mut out, name);
            put_u32(&mut out, to_u32(t.rank(), "rank")?);
            for &d in t.shape() {
                put_u32(&mut out, to_u32(d, "dimension")?);
            }
            for &v in t.data() {
                put_f32(&mut out, v);
            }
        }
        put_u32(&mut out, self.stage);
        put_u64(&mut out, self.epoch);
        put_u64(&mut out, self.seed);
        put_u32(&mut out, to_u32(self.meta.len(), "metadata count")?);
        for (k, v) in &self.meta {
            put_string(&mut out, k);
            put_string(&mut out, v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(b"IMCK")?;
        let at = r.pos();
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format(
                at,
                format!("checkpoint version {version} is not supported (expected {VERSION})"),
            ));
        }
        let count = r.u32("array count")?;
        let mut arrays = Vec::new();
        for _ in 0..count {
            let name = r.string("array name")?;
            let rank = r.u32("rank")? as usize;
            let shape = (0..rank)
                .map(|_| r.u32("dimension").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let at = r.pos();
            let len = len
                .filter(|&l| l.checked_mul(4).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::format(at, format!("truncated payload of {name}")))?;
            let data = (0..len).map(|_| r.f32("payload")).collect::<Result<Vec<_>>>()?;
            arrays.push((name, Tensor::new(shape, data)?));
        }
        let stage = r.u32("stage")?;
        let epoch = r.u64("epoch")?;
        let seed = r.u64("seed")?;
        let n = r.u32("metadata count")?;
        let mut meta = Vec::new();
        for _ in 0..n {
            let k = r.string("metadata key")?;
            let v = r.string("metadata value")?;
            meta.push((k, v));
        }
        r.finish()?;
        Ok(Self {
            arrays,
            stage,
            epoch,
            seed,
            meta,
        })
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::contract(format!("checkpoint has no {key:?} entry")))
    }

    pub fn push_params(&mut self, params: &Params) {
        for (name, t) in params.iter() {
            self.arrays.push((name.to_string(), t.clone()));
        }
    }

    /// Arrays whose names start with `prefix.`, in file order.
    pub fn params(&self, prefix: &str) -> Params {
        let mut p = Params::new();
        let dotted = format!("{prefix}.");
        for (name, t) in &self.arrays {
            if name.starts_with(&dotted) {
                p.push(name.clone(), t.clone());
            }
        }
        p
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let dotted = format!("{prefix}.");
        self.arrays.iter().any(|(n, _)| n.starts_with(&dotted))
    }

    /// Stores Adam moments as `opt.<group>.m.<param>` / `opt.<group>.v.<param>`.
    pub fn push_adam(&mut self, group: &str, state: &AdamState, params: &Params) {
        for (i, name) in params.names().iter().enumerate() {
            self.arrays.push((format!("opt.{group}.m.{name}"), state.m[i].clone()));
            self.arrays.push((format!("opt.{group}.v.{name}"), state.v[i].clone()));
        }
        self.set_meta(&format!("opt.{group}.t"), state.t);
    }

    pub fn adam(&self, group: &str, config: AdamConfig, params: &Params) -> Result<AdamState> {
        let find = |kind: &str, name: &str| {
            let key = format!("opt.{group}.{kind}.{name}");
            self.arrays
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::contract(format!("checkpoint lacks optimizer array {key}")))
        };
        let mut state = AdamState::new(config, params);
        for (i, name) in params.names().iter().enumerate() {
            state.m[i] = find("m", name)?;
            state.v[i] = find("v", name)?;
        }
        state.t = self
            .require_meta(&format!("opt.{group}.t"))?
            .parse()
            .map_err(|_| Error::contract(format!("bad optimizer step count for {group}")))?;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::contract(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
