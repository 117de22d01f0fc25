//! Convolutional shape encoders and orthographic silhouettes.
//!
//! Each conv layer has kernel 4, stride 2 and padding 1, so it halves the
//! spatial extent. Channel counts start at `base` and double per layer up to
//! `max_channels`. The flattened last feature map goes through one dense
//! layer and a sigmoid, so codes live in `(0, 1)^d`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Params, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::voxel::{Axis, VoxelGrid};

const KERNEL: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderArch {
    /// Parameter name prefix, e.g. `enc` or `imenc`.
    pub prefix: String,
    pub dims: usize,
    /// Native input side length.
    pub side: usize,
    pub layers: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub latent_dim: usize,
    pub alpha: f64,
}

impl EncoderArch {
    /// Voxel encoder that reduces `side` all the way down to a single cell.
    pub fn voxel(dims: usize, side: usize, latent_dim: usize) -> Self {
        Self {
            prefix: "enc".into(),
            dims,
            side,
            layers: side.trailing_zeros() as usize,
            base_channels: 16,
            max_channels: 128,
            latent_dim,
            alpha: 0.02,
        }
    }

    /// Four-layer encoder for single-channel square images.
    pub fn image(side: usize, latent_dim: usize) -> Self {
        Self {
            prefix: "imenc".into(),
            dims: 2,
            side,
            layers: 4,
            base_channels: 16,
            max_channels: 128,
            latent_dim,
            alpha: 0.02,
        }
    }

    pub fn channels(&self, layer: usize) -> usize {
        (self.base_channels << layer).min(self.max_channels)
    }

    fn flat_dim(&self) -> usize {
        let s = self.side >> self.layers;
        self.channels(self.layers - 1) * s.pow(self.dims as u32)
    }

    fn validate(&self) -> Result<()> {
        if self.dims != 2 && self.dims != 3 {
            return Err(Error::contract("encoder dimensionality must be 2 or 3"));
        }
        if self.layers == 0 || !self.side.is_power_of_two() || self.side >> self.layers == 0 {
            return Err(Error::contract(format!(
                "{} layers cannot halve side {}",
                self.layers, self.side
            )));
        }
        if self.latent_dim == 0 || self.base_channels == 0 {
            return Err(Error::contract("encoder widths must be positive"));
        }
        Ok(())
    }

    /// Expected input shape for a batch of `b`.
    pub fn input_shape(&self, b: usize) -> Vec<usize> {
        let mut s = vec![b, 1];
        s.extend(std::iter::repeat(self.side).take(self.dims));
        s
    }
}

impl fmt::Display for EncoderArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "prefix={} dims={} side={} layers={} base={} max={} latent={} alpha={}",
            self.prefix,
            self.dims,
            self.side,
            self.layers,
            self.base_channels,
            self.max_channels,
            self.latent_dim,
            self.alpha
        )
    }
}

impl FromStr for EncoderArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::format(0, format!("bad encoder descriptor {s:?}"));
        let mut arch = EncoderArch::image(0, 0);
        let num = |v: &str| v.parse::<usize>().map_err(|_| bad());
        for field in s.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(bad)?;
            match k {
                "prefix" => arch.prefix = v.to_string(),
                "dims" => arch.dims = num(v)?,
                "side" => arch.side = num(v)?,
                "layers" => arch.layers = num(v)?,
                "base" => arch.base_channels = num(v)?,
                "max" => arch.max_channels = num(v)?,
                "latent" => arch.latent_dim = num(v)?,
                "alpha" => arch.alpha = v.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
        }
        arch.validate().map_err(|_| bad())?;
        Ok(arch)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub arch: EncoderArch,
    pub params: Params,
}

impl Encoder {
    pub fn new(arch: EncoderArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let taps = KERNEL.pow(arch.dims as u32);
        let mut cin = 1;
        for i in 0..arch.layers {
            let cout = arch.channels(i);
            let mut shape = vec![cout, cin];
            shape.extend(std::iter::repeat(KERNEL).take(arch.dims));
            params.push_xavier(format!("{}.layer{i}.W", arch.prefix), &shape, cin * taps, cout * taps, &mut rng);
            params.push_zeros(format!("{}.layer{i}.b", arch.prefix), &[cout]);
            cin = cout;
        }
        let (fi, fo) = (arch.flat_dim(), arch.latent_dim);
        let l = arch.layers;
        params.push_xavier(format!("{}.layer{l}.W", arch.prefix), &[fi, fo], fi, fo, &mut rng);
        params.push_zeros(format!("{}.layer{l}.b", arch.prefix), &[fo]);
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: EncoderArch, params: Params) -> Result<Self> {
        let fresh = Self::new(arch, 0)?;
        if fresh.params.names() != params.names()
            || fresh.params.tensors().iter().zip(params.tensors()).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::shape(format!(
                "parameters do not match the {} encoder layout",
                fresh.arch.prefix
            )));
        }
        Ok(Self { arch: fresh.arch, params })
    }

    /// Codes for a batch input of shape [`EncoderArch::input_shape`].
    pub fn encode(&self, input: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let x = tape.constant(input);
        let z = forward(&self.arch, &mut tape, &vars, x)?;
        Ok(tape.value(z).clone())
    }

    /// Code of one voxel grid, upsampled to the native side when coarser.
    pub fn encode_grid(&self, g: &VoxelGrid) -> Result<Vec<f32>> {
        Ok(self.encode(grid_batch(&self.arch, &[g])?)?.into_data())
    }
}

/// Stacks grids into an encoder input, nearest-upsampling coarse ones.
pub fn grid_batch(arch: &EncoderArch, grids: &[&VoxelGrid]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(grids.len() * arch.side.pow(arch.dims as u32));
    for g in grids {
        if g.dims() != arch.dims {
            return Err(Error::shape(format!("{}D grid for a {}D encoder", g.dims(), arch.dims)));
        }
        if g.n() > arch.side || arch.side % g.n() != 0 {
            return Err(Error::shape(format!(
                "grid side {} is incompatible with encoder side {}",
                g.n(),
                arch.side
            )));
        }
        if g.n() == arch.side {
            data.extend(g.to_f32());
        } else {
            data.extend(g.upsample(arch.side)?.to_f32());
        }
    }
    Tensor::new(arch.input_shape(grids.len()), data)
}

/// Records the encoder on `tape`; returns `b×d` codes.
pub fn forward<T: Scalar>(arch: &EncoderArch, tape: &mut Tape<T>, params: &[Var], x: Var) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != arch.dims + 2 || shape[1..] != arch.input_shape(1)[1..] {
        return Err(Error::shape(format!(
            "encoder input {shape:?} does not match {:?}",
            arch.input_shape(shape.first().copied().unwrap_or(0))
        )));
    }
    if params.len() != 2 * (arch.layers + 1) {
        return Err(Error::shape("encoder parameter count mismatch"));
    }
    let b = shape[0];
    let mut h = x;
    for i in 0..arch.layers {
        let y = tape.conv(h, params[2 * i], params[2 * i + 1], 2, 1)?;
        h = tape.leaky_relu(y, arch.alpha);
    }
    let flat = tape.reshape(h, &[b, arch.flat_dim()])?;
    let l = arch.layers;
    let logit = tape.linear(flat, params[2 * l], params[2 * l + 1])?;
    Ok(tape.sigmoid(logit))
}

/// Orthographic silhouette along `axis`, resampled to `side × side`.
///
/// Image coordinates are the two remaining axes in increasing order. A pixel
/// is set iff any voxel on its ray is occupied.
pub fn render_silhouette(g: &VoxelGrid, axis: Axis, side: usize) -> Result<VoxelGrid> {
    if g.dims() != 3 {
        return Err(Error::shape("silhouettes are rendered from 3D grids"));
    }
    let n = g.n();
    let a = axis.index();
    let others: Vec<usize> = (0..3).filter(|&i| i != a).collect();
    let mut proj = vec![false; n * n];
    let mut c = [0usize; 3];
    for idx in 0..g.len() {
        if g.occupancy()[idx] {
            g.unravel(idx, &mut c);
            proj[c[others[1]] * n + c[others[0]]] = true;
        }
    }
    let full = VoxelGrid::new(n, 2, proj)?;
    if side == n {
        Ok(full)
    } else {
        full.resample(side)
    }
}

impl VoxelGrid {
    /// Mirrors a 2D grid along its first axis.
    pub fn flip(&self) -> Result<VoxelGrid> {
        if self.dims() != 2 {
            return Err(Error::shape("only 2D grids can be flipped"));
        }
        let n = self.n();
        VoxelGrid::from_fn(n, 2, |c| self.get(&[n - 1 - c[0], c[1]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voxel_encoder_reduces_to_one_cell() {
        let arch = EncoderArch::voxel(3, 16, 16);
        assert_eq!(arch.layers, 4);
        assert_eq!((0..4).map(|i| arch.channels(i)).collect::<Vec<_>>(), [16, 32, 64, 128]);
        let enc = Encoder::new(arch, 3).unwrap();
        let g = VoxelGrid::from_fn(8, 3, |c| c[0] > 3).unwrap();
        let z = enc.encode_grid(&g).unwrap();
        assert_eq!(z.len(), 16);
        assert_eq!(z, enc.encode_grid(&g).unwrap());
        assert!(enc.encode_grid(&VoxelGrid::empty(32, 3).unwrap()).is_err());
    }

    #[test]
    fn descriptor_round_trip() {
        for arch in [EncoderArch::voxel(3, 32, 8), EncoderArch::image(32, 16)] {
            assert_eq!(arch.to_string().parse::<EncoderArch>().unwrap(), arch);
        }
        assert!("prefix=enc dims=3 side=16 layers=9".parse::<EncoderArch>().is_err());
    }

    #[test]
    fn image_encoder_shapes() {
        let enc = Encoder::new(EncoderArch::image(32, 8), 1).unwrap();
        let img = VoxelGrid::from_fn(32, 2, |c| c[0] < c[1]).unwrap();
        let z = enc.encode(grid_batch(&enc.arch, &[&img]).unwrap()).unwrap();
        assert_eq!(z.shape(), &[1, 8]);
        assert!(enc.encode(Tensor::zeros(&[1, 1, 16, 16])).is_err());
    }

    #[test]
    fn silhouettes_of_trivial_grids() {
        let e = VoxelGrid::empty(16, 3).unwrap();
        assert_eq!(render_silhouette(&e, Axis::X, 32).unwrap().count(), 0);
        let f = VoxelGrid::full(16, 3).unwrap();
        assert_eq!(render_silhouette(&f, Axis::Z, 32).unwrap().count(), 1024);
        let mut one = VoxelGrid::empty(4, 3).unwrap();
        one.set(&[1, 2, 3], true);
        let s = render_silhouette(&one, Axis::Y, 4).unwrap();
        assert!(s.get(&[1, 3]));
        assert_eq!(s.count(), 1);
        assert!(s.flip().unwrap().get(&[2, 3]));
    }
}
