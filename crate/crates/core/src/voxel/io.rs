//! IMVX voxel files, binary PGM images and dataset manifests.
//!
//! IMVX layout: `"IMVX"`, version byte `1`, dimensionality byte (2 or 3),
//! one little-endian `u32` side length per axis, then the occupancy bits in
//! storage order (x fastest), most significant bit first within each byte.

use std::fmt;

use super::{check_resolution, VoxelGrid};
use crate::error::{Error, Result};
use crate::format::{put_u32, Reader};

const IMVX_VERSION: u8 = 1;

pub fn save_imvx(g: &VoxelGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 4 * g.dims() + g.len().div_ceil(8));
    out.extend_from_slice(b"IMVX");
    out.push(IMVX_VERSION);
    out.push(g.dims() as u8);
    for _ in 0..g.dims() {
        put_u32(&mut out, g.n() as u32);
    }
    let mut bytes = vec![0u8; g.len().div_ceil(8)];
    for (i, &o) in g.occupancy().iter().enumerate() {
        if o {
            bytes[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out.extend_from_slice(&bytes);
    out
}

pub fn load_imvx(bytes: &[u8]) -> Result<VoxelGrid> {
    let mut r = Reader::new(bytes);
    r.magic(b"IMVX")?;
    let at = r.pos();
    let version = r.u8("version")?;
    if version != IMVX_VERSION {
        return Err(Error::format(at, format!("unsupported IMVX version {version}")));
    }
    let at = r.pos();
    let dims = r.u8("dimensionality")? as usize;
    if dims != 2 && dims != 3 {
        return Err(Error::format(at, format!("dimensionality {dims} is not 2 or 3")));
    }
    let at = r.pos();
    let sides: Vec<usize> = (0..dims)
        .map(|_| r.u32("side length").map(|v| v as usize))
        .collect::<Result<_>>()?;
    let n = sides[0];
    if sides.iter().any(|&s| s != n) || check_resolution(n).is_err() || n == 0 {
        return Err(Error::format(at, format!("unsupported resolution {sides:?}")));
    }
    let cells = n.pow(dims as u32);
    let payload = r.take(cells.div_ceil(8), "occupancy payload")?;
    r.finish()?;
    let occ = (0..cells).map(|i| payload[i / 8] & (0x80 >> (i % 8)) != 0).collect();
    VoxelGrid::new(n, dims, occ)
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn pgm_token(bytes: &[u8], pos: &mut usize) -> Result<(usize, String)> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(start, "truncated PGM header"));
    }
    Ok((start, String::from_utf8_lossy(&bytes[start..*pos]).into_owned()))
}

fn pgm_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let (at, tok) = pgm_token(bytes, pos)?;
    tok.parse()
        .map_err(|_| Error::format(at, format!("PGM {what} {tok:?} is not a number")))
}

/// Binary (P5) PGM with maxval 255, square and power-of-two sided. A pixel is
/// occupied iff its gray value is at least `threshold`. Row `r` of the image
/// becomes `y = r`.
pub fn load_pgm(bytes: &[u8], threshold: u8) -> Result<VoxelGrid> {
    let mut pos = 0;
    let (at, magic) = pgm_token(bytes, &mut pos)?;
    if magic != "P5" {
        return Err(Error::format(at, format!("not a binary PGM (magic {magic:?})")));
    }
    let at = pos;
    let w = pgm_number(bytes, &mut pos, "width")?;
    let h = pgm_number(bytes, &mut pos, "height")?;
    if w != h {
        return Err(Error::format(at, format!("PGM is {w}×{h}, expected a square image")));
    }
    if w == 0 || check_resolution(w).is_err() {
        return Err(Error::format(at, format!("PGM side {w} is not a supported power of two")));
    }
    let at = pos;
    let maxval = pgm_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::format(at, format!("PGM maxval {maxval} is not 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = w * h;
    if bytes.len() < pos + need {
        return Err(Error::format(
            bytes.len().min(pos),
            format!("truncated PGM raster: need {need} bytes"),
        ));
    }
    let occ = bytes[pos..pos + need].iter().map(|&v| v >= threshold).collect();
    VoxelGrid::new(w, 2, occ)
}

/// Binary PGM of a `width×height` gray raster.
pub fn save_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::shape(format!(
            "{width}×{height} image needs {} pixels, got {}",
            width * height,
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

impl VoxelGrid {
    /// 2D grid as a black/white PGM.
    pub fn to_pgm(&self) -> Result<Vec<u8>> {
        if self.dims() != 2 {
            return Err(Error::shape("only 2D grids convert to PGM"));
        }
        let px: Vec<u8> = self.occupancy().iter().map(|&o| if o { 255 } else { 0 }).collect();
        save_pgm(self.n(), self.n(), &px)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory.
    pub path: String,
    pub split: Split,
}

impl ManifestEntry {
    /// Everything before the last `-` of the id (`torus-0003` → `torus`).
    pub fn category(&self) -> &str {
        self.id.rsplit_once('-').map_or(&self.id, |(c, _)| c)
    }
}

/// `<id> <path> <split>` per line; blank lines and `#` comments ignored.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0;
        for (lineno, line) in text.split_inclusive('\n').enumerate() {
            let start = offset;
            offset += line.len();
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            let bad = |msg: String| Error::format(start, format!("manifest line {}: {msg}", lineno + 1));
            let [id, path, split] = fields[..] else {
                return Err(bad(format!("expected 3 fields, got {}", fields.len())));
            };
            let split = match split {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(bad(format!("unknown split {other:?}"))),
            };
            if entries.iter().any(|e: &ManifestEntry| e.id == id) {
                return Err(bad(format!("duplicate id {id:?}")));
            }
            entries.push(ManifestEntry {
                id: id.to_string(),
                path: path.to_string(),
                split,
            });
        }
        Ok(Self { entries })
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{} {} {}\n", e.id, e.path, e.split))
            .collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}
