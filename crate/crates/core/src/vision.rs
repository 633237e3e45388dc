//! The vision module: a fixed-order bank of convolutional kernels, each one
//! reporting the argmax position of its response map.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::imaging::{convolve2d, response_dims, ProcessedFrame, CHANNELS};

/// Default kernel side.
pub const KERNEL_SIZE: usize = 5;

/// An `h × w × 3` weight tensor, row-major with the channel innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    height: usize,
    width: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(height: usize, width: usize, weights: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid("kernel dimensions must be positive"));
        }
        if weights.len() != height * width * CHANNELS {
            return Err(invalid(format!(
                "kernel {height}x{width}x{CHANNELS} needs {} weights, got {}",
                height * width * CHANNELS,
                weights.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(invalid(format!("kernel weight {i} is not finite")));
        }
        Ok(Self {
            height,
            width,
            weights,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            weights: vec![0.0; height * width * CHANNELS],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, ky: usize, kx: usize, c: usize) -> f64 {
        self.weights[(ky * self.width + kx) * CHANNELS + c]
    }
}

/// Entity position in response-map space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coordinate {
    pub x: usize,
    pub y: usize,
}

/// Ordered bank of `k` same-shaped kernels. Entry `i` of every output comes
/// from kernel `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionModule {
    kernels: Vec<Kernel>,
}

impl VisionModule {
    pub fn new(kernels: Vec<Kernel>) -> Result<Self> {
        let first = kernels
            .first()
            .ok_or_else(|| invalid("a vision module needs at least one kernel"))?;
        let shape = (first.height, first.width);
        if kernels.iter().any(|k| (k.height, k.width) != shape) {
            return Err(invalid("all kernels of a vision module must share one shape"));
        }
        Ok(Self { kernels })
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn kernel_shape(&self) -> (usize, usize) {
        (self.kernels[0].height, self.kernels[0].width)
    }

    /// Flattens weights kernel-major, then row-major, channel innermost.
    pub fn to_parameters(&self) -> Vec<f64> {
        self.kernels
            .iter()
            .flat_map(|k| k.weights.iter().copied())
            .collect()
    }

    /// Inverse of [`VisionModule::to_parameters`].
    pub fn from_parameters(params: &[f64], k: usize, kernel_h: usize, kernel_w: usize) -> Result<Self> {
        let per = kernel_h * kernel_w * CHANNELS;
        if k == 0 || params.len() != k * per {
            return Err(invalid(format!(
                "expected {} parameters for {k} kernels of {kernel_h}x{kernel_w}x{CHANNELS}, got {}",
                k * per,
                params.len()
            )));
        }
        let kernels = params
            .chunks_exact(per)
            .map(|c| Kernel::new(kernel_h, kernel_w, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(kernels)
    }

    pub fn parameter_count(k: usize, kernel_h: usize, kernel_w: usize) -> usize {
        k * kernel_h * kernel_w * CHANNELS
    }

    /// Localizes one entity per kernel: convolve, then take the argmax.
    pub fn locate(&self, image: &ProcessedFrame) -> Result<Vec<Coordinate>> {
        self.kernels
            .iter()
            .map(|k| {
                let (x, y) = convolve2d(image, k)?.argmax();
                Ok(Coordinate { x, y })
            })
            .collect()
    }
}

/// Flat `(x_1, y_1, …, x_k, y_k)` feature vector for the decision module.
pub fn flatten(coords: &[Coordinate]) -> Vec<f64> {
    let mut out = Vec::with_capacity(coords.len() * 2);
    flatten_into(coords, &mut out);
    out
}

pub fn flatten_into(coords: &[Coordinate], out: &mut Vec<f64>) {
    out.clear();
    for c in coords {
        out.push(c.x as f64);
        out.push(c.y as f64);
    }
}

/// Buffer-reusing locator for frames that are mostly exactly zero.
///
/// Contributions are scattered from non-zero pixels in row-major order, which
/// is the same per-output summation order as [`convolve2d`] with the zero
/// terms removed, so every response value is bit-identical to the dense one.
#[derive(Debug, Clone, Default)]
pub struct SparseLocator {
    // Interleaved per cell: `response[o * m + j]` belongs to the j-th active kernel.
    response: Vec<f64>,
    stamp: Vec<u32>,
    epoch: u32,
    touched: Vec<usize>,
    // Per tap, the active kernels' three channel weights.
    packed: Vec<f64>,
    active: Vec<usize>,
    best: Vec<(f64, usize)>,
}

impl SparseLocator {
    pub fn new() -> Self {
        Self::default()
    }

    /// `nonzero` must list (row-major) every pixel of `image` with a non-zero
    /// channel, as reported by [`crate::imaging::Preprocessor`].
    pub fn locate(
        &mut self,
        vm: &VisionModule,
        image: &ProcessedFrame,
        nonzero: &[usize],
        out: &mut Vec<Coordinate>,
    ) -> Result<()> {
        self.locate_masked(vm, image, nonzero, None, out)
    }

    /// Only kernels with `used[i] == true` are evaluated; the others report
    /// `(0, 0)`.
    pub fn locate_masked(
        &mut self,
        vm: &VisionModule,
        image: &ProcessedFrame,
        nonzero: &[usize],
        used: Option<&[bool]>,
        out: &mut Vec<Coordinate>,
    ) -> Result<()> {
        out.clear();
        let (kh, kw) = vm.kernel_shape();
        let (h, w) = response_dims(image.height(), image.width(), kh, kw)?;
        self.active.clear();
        self.active.extend(
            (0..vm.len()).filter(|&i| used.is_none_or(|u| u.get(i).copied().unwrap_or(false))),
        );
        let m = self.active.len();
        if m == 0 {
            out.resize(vm.len(), Coordinate { x: 0, y: 0 });
            return Ok(());
        }

        self.packed.clear();
        for tap in 0..kh * kw {
            for &i in &self.active {
                let wt = &vm.kernels()[i].weights()[tap * CHANNELS..(tap + 1) * CHANNELS];
                self.packed.extend_from_slice(wt);
            }
        }

        if self.stamp.len() != h * w {
            self.stamp = vec![0; h * w];
            self.epoch = 0;
        }
        if self.response.len() < h * w * m {
            self.response = vec![0.0; h * w * m];
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.fill(0);
            self.epoch = 1;
        }
        let epoch = self.epoch;
        let img_w = image.width();
        let data = image.data();

        self.touched.clear();
        let mut scatter = Scatter {
            response: &mut self.response,
            stamp: &mut self.stamp,
            touched: &mut self.touched,
            packed: &self.packed,
            epoch,
            h,
            w,
            kh,
            kw,
        };
        match m {
            1 => scatter.run::<1>(data, img_w, nonzero),
            2 => scatter.run::<2>(data, img_w, nonzero),
            3 => scatter.run::<3>(data, img_w, nonzero),
            4 => scatter.run::<4>(data, img_w, nonzero),
            _ => scatter.run_dyn(m, data, img_w, nonzero),
        }

        // Untouched responses are exactly 0.0.
        self.best.clear();
        self.best.resize(m, (f64::NEG_INFINITY, usize::MAX));
        for &o in &self.touched {
            for (best, &v) in self.best.iter_mut().zip(&self.response[o * m..(o + 1) * m]) {
                if v > best.0 || (v == best.0 && o < best.1) {
                    *best = (v, o);
                }
            }
        }
        let first_untouched = (0..h * w).find(|&o| self.stamp[o] != epoch);
        out.resize(vm.len(), Coordinate { x: 0, y: 0 });
        for (&i, &(bv, bo)) in self.active.iter().zip(&self.best) {
            let pos = match first_untouched {
                None => bo,
                Some(u) if bo == usize::MAX => u,
                Some(u) => {
                    if bv > 0.0 || (bv == 0.0 && bo < u) {
                        bo
                    } else {
                        u
                    }
                }
            };
            out[i] = Coordinate { x: pos % w, y: pos / w };
        }
        Ok(())
    }
}

struct Scatter<'a> {
    response: &'a mut [f64],
    stamp: &'a mut [u32],
    touched: &'a mut Vec<usize>,
    packed: &'a [f64],
    epoch: u32,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

impl Scatter<'_> {
    #[inline]
    fn window(&self, py: usize, px: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        (
            (py + 1).saturating_sub(self.h)..self.kh.min(py + 1),
            (px + 1).saturating_sub(self.w)..self.kw.min(px + 1),
        )
    }

    #[inline]
    fn visit(&mut self, o: usize, m: usize) {
        if self.stamp[o] != self.epoch {
            self.stamp[o] = self.epoch;
            self.response[o * m..(o + 1) * m].fill(0.0);
            self.touched.push(o);
        }
    }

    fn run<const M: usize>(&mut self, data: &[f64], img_w: usize, nonzero: &[usize]) {
        for &p in nonzero {
            let (py, px) = (p / img_w, p % img_w);
            let (ys, xs) = self.window(py, px);
            let (p0, p1, p2) = (data[p * CHANNELS], data[p * CHANNELS + 1], data[p * CHANNELS + 2]);
            for ky in ys {
                let base = (py - ky) * self.w + px;
                for kx in xs.clone().rev() {
                    let o = base - kx;
                    self.visit(o, M);
                    let tap = ky * self.kw + kx;
                    let wt: &[[f64; CHANNELS]; M] = self.packed[tap * M * CHANNELS..]
                        .as_chunks::<CHANNELS>()
                        .0
                        .first_chunk::<M>()
                        .unwrap();
                    let cell: &mut [f64; M] = (&mut self.response[o * M..]).first_chunk_mut::<M>().unwrap();
                    for j in 0..M {
                        cell[j] = cell[j] + p0 * wt[j][0] + p1 * wt[j][1] + p2 * wt[j][2];
                    }
                }
            }
        }
    }

    #[inline]
    fn accumulate_dyn(&mut self, o: usize, m: usize, tap: usize, p: [f64; 3]) {
        let wt = &self.packed[tap * m * CHANNELS..(tap + 1) * m * CHANNELS];
        let cell = &mut self.response[o * m..(o + 1) * m];
        for j in 0..m {
            cell[j] = cell[j] + p[0] * wt[3 * j] + p[1] * wt[3 * j + 1] + p[2] * wt[3 * j + 2];
        }
    }

    fn run_dyn(&mut self, m: usize, data: &[f64], img_w: usize, nonzero: &[usize]) {
        for &p in nonzero {
            let (py, px) = (p / img_w, p % img_w);
            let (ys, xs) = self.window(py, px);
            let pix = [data[p * CHANNELS], data[p * CHANNELS + 1], data[p * CHANNELS + 2]];
            for ky in ys {
                let base = (py - ky) * self.w + px;
                for kx in xs.clone().rev() {
                    let o = base - kx;
                    self.visit(o, m);
                    self.accumulate_dyn(o, m, ky * self.kw + kx, pix);
                }
            }
        }
    }
}
