//! 2D/3D cross-correlation via im2col. A 2D convolution is a 3D one with a
//! depth of 1.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Input extent (depth, height, width).
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    /// Rank of the input tensor (4 or 5), kept to shape the output.
    rank: usize,
}

impl ConvShape {
    pub fn infer(x: &[usize], w: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::shape("conv: stride must be at least 1"));
        }
        let (batch, cin, input, cout, wcin, kernel, spatial_stride, spatial_pad) = match (x, w) {
            ([n, c, h, wd], [o, wc, kh, kw]) => {
                (*n, *c, [1, *h, *wd], *o, *wc, [1, *kh, *kw], [1, stride, stride], [0, padding, padding])
            }
            ([n, c, d, h, wd], [o, wc, kd, kh, kw]) => (
                *n,
                *c,
                [*d, *h, *wd],
                *o,
                *wc,
                [*kd, *kh, *kw],
                [stride; 3],
                [padding; 3],
            ),
            _ => {
                return Err(Error::shape(format!(
                    "conv: unsupported input/kernel shapes {x:?} / {w:?}"
                )))
            }
        };
        if cin != wcin {
            return Err(Error::shape(format!(
                "conv: input has {cin} channels, kernel expects {wcin}"
            )));
        }
        let mut output = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * spatial_pad[a];
            if kernel[a] == 0 || kernel[a] > padded {
                return Err(Error::shape(format!(
                    "conv: kernel extent {} exceeds padded input extent {padded}",
                    kernel[a]
                )));
            }
            output[a] = (padded - kernel[a]) / spatial_stride[a] + 1;
        }
        Ok(Self {
            batch,
            in_channels: cin,
            out_channels: cout,
            input,
            kernel,
            output,
            stride: spatial_stride,
            padding: spatial_pad,
            rank: x.len(),
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let mut s = vec![self.batch, self.out_channels];
        if self.rank == 4 {
            s.extend_from_slice(&self.output[1..]);
        } else {
            s.extend_from_slice(&self.output);
        }
        s
    }

    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.output.iter().product()
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    /// Calls `f(col_index, input_offset)` for every im2col entry that falls
    /// inside the (unpadded) input of one sample.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let [id, ih, iw] = self.input;
        let [kd, kh, kw] = self.kernel;
        let [od, oh, ow] = self.output;
        let out_vol = self.out_volume();
        for c in 0..self.in_channels {
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let row = ((c * kd + a) * kh + b) * kw + e;
                        for z in 0..od {
                            let iz = (z * self.stride[0] + a) as isize - self.padding[0] as isize;
                            if iz < 0 || iz >= id as isize {
                                continue;
                            }
                            for y in 0..oh {
                                let iy = (y * self.stride[1] + b) as isize - self.padding[1] as isize;
                                if iy < 0 || iy >= ih as isize {
                                    continue;
                                }
                                let base = ((c * id + iz as usize) * ih + iy as usize) * iw;
                                for x in 0..ow {
                                    let ix = (x * self.stride[2] + e) as isize - self.padding[2] as isize;
                                    if ix < 0 || ix >= iw as isize {
                                        continue;
                                    }
                                    let col = (z * oh + y) * ow + x;
                                    f(row * out_vol + col, base + ix as usize);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, sample: &[T], col: &mut [T]) {
        col.iter_mut().for_each(|v| *v = T::zero());
        self.for_each_tap(|dst, src| col[dst] = sample[src]);
    }

    fn col2im<T: Scalar>(&self, col: &[T], sample: &mut [T]) {
        self.for_each_tap(|src, dst| sample[dst] += col[src]);
    }
}

pub(crate) fn forward<T: Scalar>(g: &ConvShape, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (patch, out_vol, in_sample) = (g.patch(), g.out_volume(), g.in_channels * g.in_volume());
    let out_sample = g.out_channels * out_vol;
    let mut y = Tensor::zeros(&g.output_shape());
    let mut col = vec![T::zero(); patch * out_vol];
    for n in 0..g.batch {
        g.im2col(&x.data()[n * in_sample..(n + 1) * in_sample], &mut col);
        let out = &mut y.data_mut()[n * out_sample..(n + 1) * out_sample];
        for (o, chunk) in out.chunks_mut(out_vol).enumerate() {
            chunk.iter_mut().for_each(|v| *v = b.data()[o]);
        }
        T::gemm(g.out_channels, patch, out_vol, w.data(), false, &col, false, out, true);
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    g: &ConvShape,
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let (patch, out_vol, in_sample) = (g.patch(), g.out_volume(), g.in_channels * g.in_volume());
    let out_sample = g.out_channels * out_vol;
    let mut col = vec![T::zero(); patch * out_vol];
    let mut dcol = vec![T::zero(); patch * out_vol];
    for n in 0..g.batch {
        let dy_n = &dy.data()[n * out_sample..(n + 1) * out_sample];
        if let Some(db) = db.as_deref_mut() {
            for (o, chunk) in dy_n.chunks(out_vol).enumerate() {
                db[o] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            g.im2col(&x.data()[n * in_sample..(n + 1) * in_sample], &mut col);
            T::gemm(g.out_channels, out_vol, patch, dy_n, false, &col, true, dw, true);
        }
        if let Some(dx) = dx.as_deref_mut() {
            T::gemm(patch, g.out_channels, out_vol, w.data(), true, dy_n, false, &mut dcol, false);
            g.col2im(&dcol, &mut dx[n * in_sample..(n + 1) * in_sample]);
        }
    }
}
