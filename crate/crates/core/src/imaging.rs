//! Frames, the crop/resize/normalize preprocessing chain, and valid-padding
//! multi-channel convolution.
//!
//! The plain functions ([`crop_top`], [`resize`], [`normalize`],
//! [`preprocess`], [`convolve2d`]) are the reference implementations.
//! [`Preprocessor`] is a buffer-reusing variant for rollouts that skips work
//! on all-zero regions; it produces bit-identical output.

use std::io::{BufRead, Write};

use crate::error::{invalid, Error, Result};
use crate::vision::Kernel;

pub const CHANNELS: usize = 3;

/// Raw observation height of the emulated screen.
pub const RAW_HEIGHT: usize = 210;
/// Raw observation width of the emulated screen.
pub const RAW_WIDTH: usize = 160;
/// Rows removed from the top of each frame (score band).
pub const CROP_ROWS: usize = 35;
/// Side of the square image fed to the vision module.
pub const IMAGE_SIZE: usize = 96;

/// An interleaved `height × width × 3` image, row-major, channel innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// 8-bit frame as produced by the environment.
pub type RawFrame = Frame<u8>;
/// Real-valued frame in `[0, 1]`, the input of the vision module.
pub type ProcessedFrame = Frame<f64>;

impl<T: Copy> Frame<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(invalid(format!(
                "frame data length {} does not match {height}x{width}x{CHANNELS}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * CHANNELS],
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * CHANNELS + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: T) {
        let i = self.index(y, x, c);
        self.data[i] = value;
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Region {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn new(y: usize, x: usize, height: usize, width: usize) -> Self {
        Self { y, x, height, width }
    }
}

/// Real-valued `h′ × w′` convolution output.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ResponseMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Position `(x, y)` of the maximum response. Ties go to the row-major
    /// first occurrence (smallest `y`, then smallest `x`).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }
}

/// Output dimensions of a valid-padding convolution: `n − 2·⌊k/2⌋`.
pub fn response_dims(image_h: usize, image_w: usize, kernel_h: usize, kernel_w: usize) -> Result<(usize, usize)> {
    if kernel_h == 0 || kernel_w == 0 {
        return Err(invalid("kernel has a zero dimension"));
    }
    if kernel_h > image_h || kernel_w > image_w {
        return Err(invalid(format!(
            "kernel {kernel_h}x{kernel_w} larger than image {image_h}x{image_w}"
        )));
    }
    let h = image_h - 2 * (kernel_h / 2);
    let w = image_w - 2 * (kernel_w / 2);
    if h == 0 || w == 0 {
        return Err(invalid(format!(
            "kernel {kernel_h}x{kernel_w} leaves an empty response on a {image_h}x{image_w} image"
        )));
    }
    Ok((h, w))
}

/// Removes the top `rows` rows of a frame.
pub fn crop_top(frame: &RawFrame, rows: usize) -> Result<RawFrame> {
    if rows >= frame.height {
        return Err(invalid(format!(
            "cannot crop {rows} rows from a frame of height {}",
            frame.height
        )));
    }
    let start = rows * frame.width * CHANNELS;
    Ok(Frame {
        height: frame.height - rows,
        width: frame.width,
        data: frame.data[start..].to_vec(),
    })
}

/// Corner-aligned bilinear tap: two source indices and the weight of the second.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(src: usize, dst: usize) -> Vec<Tap> {
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 {
                0.0
            } else {
                i as f64 * (src - 1) as f64 / (dst - 1) as f64
            };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            Tap {
                lo,
                hi,
                frac: pos - lo as f64,
            }
        })
        .collect()
}

#[inline]
fn bilinear(p00: u8, p01: u8, p10: u8, p11: u8, fy: f64, fx: f64) -> f64 {
    let top = (1.0 - fx) * p00 as f64 + fx * p01 as f64;
    let bottom = (1.0 - fx) * p10 as f64 + fx * p11 as f64;
    (1.0 - fy) * top + fy * bottom
}

/// Bilinear resampling with a corner-aligned grid, before rounding to 8 bits.
pub fn resize_real(frame: &RawFrame, target_h: usize, target_w: usize) -> Result<Frame<f64>> {
    if target_h == 0 || target_w == 0 {
        return Err(invalid("resize target must be at least 1x1"));
    }
    if frame.height == 0 || frame.width == 0 {
        return Err(invalid("cannot resize an empty frame"));
    }
    let ty = taps(frame.height, target_h);
    let tx = taps(frame.width, target_w);
    let mut out = Frame::filled(target_h, target_w, 0.0);
    for (oy, ry) in ty.iter().enumerate() {
        for (ox, rx) in tx.iter().enumerate() {
            for c in 0..CHANNELS {
                let v = bilinear(
                    frame.get(ry.lo, rx.lo, c),
                    frame.get(ry.lo, rx.hi, c),
                    frame.get(ry.hi, rx.lo, c),
                    frame.get(ry.hi, rx.hi, c),
                    ry.frac,
                    rx.frac,
                );
                out.set(oy, ox, c, v);
            }
        }
    }
    Ok(out)
}

#[inline]
fn to_u8(v: f64) -> u8 {
    // Same as `v.round().clamp(0.0, 255.0)`; `v - t` is exact below 256.
    if v.is_nan() || v <= 0.0 {
        return 0;
    }
    if v >= 255.0 {
        return 255;
    }
    let t = v as u8;
    if v - t as f64 >= 0.5 {
        t + 1
    } else {
        t
    }
}

/// Bilinear resize (corner-aligned), rounded back to 8 bits.
pub fn resize(frame: &RawFrame, target_h: usize, target_w: usize) -> Result<RawFrame> {
    let real = resize_real(frame, target_h, target_w)?;
    Ok(Frame {
        height: real.height,
        width: real.width,
        data: real.data.iter().map(|&v| to_u8(v)).collect(),
    })
}

/// Min-max normalization over all pixels and channels jointly. A constant
/// frame maps to all zeros.
pub fn normalize(frame: &RawFrame) -> ProcessedFrame {
    let min = frame.data.iter().copied().min().unwrap_or(0);
    let max = frame.data.iter().copied().max().unwrap_or(0);
    let data = if max == min {
        vec![0.0; frame.data.len()]
    } else {
        let range = (max - min) as f64;
        frame
            .data
            .iter()
            .map(|&v| (v - min) as f64 / range)
            .collect()
    };
    Frame {
        height: frame.height,
        width: frame.width,
        data,
    }
}

/// Crop, resize and normalize geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessSpec {
    pub input_height: usize,
    pub input_width: usize,
    pub crop_rows: usize,
    pub output_size: usize,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            input_height: RAW_HEIGHT,
            input_width: RAW_WIDTH,
            crop_rows: CROP_ROWS,
            output_size: IMAGE_SIZE,
        }
    }
}

fn check_input(spec: &PreprocessSpec, frame: &RawFrame) -> Result<()> {
    if frame.height != spec.input_height || frame.width != spec.input_width {
        return Err(invalid(format!(
            "expected a {}x{}x3 frame, got {}x{}x3",
            spec.input_height, spec.input_width, frame.height, frame.width
        )));
    }
    Ok(())
}

/// `normalize(resize(crop_top(frame, 35), 96, 96))` on a 210×160 frame.
pub fn preprocess(frame: &RawFrame) -> Result<ProcessedFrame> {
    preprocess_with(&PreprocessSpec::default(), frame)
}

pub fn preprocess_with(spec: &PreprocessSpec, frame: &RawFrame) -> Result<ProcessedFrame> {
    check_input(spec, frame)?;
    let cropped = crop_top(frame, spec.crop_rows)?;
    let resized = resize(&cropped, spec.output_size, spec.output_size)?;
    Ok(normalize(&resized))
}

/// Valid-padding cross-correlation summed over all three channels.
pub fn convolve2d(image: &ProcessedFrame, kernel: &Kernel) -> Result<ResponseMap> {
    let (kh, kw) = (kernel.height(), kernel.width());
    let (h, w) = response_dims(image.height, image.width, kh, kw)?;
    let weights = kernel.weights();
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..kh {
                let row = image.index(y + ky, x, 0);
                let krow = ky * kw * CHANNELS;
                let pixels = &image.data[row..row + kw * CHANNELS];
                let ws = &weights[krow..krow + kw * CHANNELS];
                for (p, wt) in pixels.iter().zip(ws) {
                    acc += p * wt;
                }
            }
            data.push(acc);
        }
    }
    Ok(ResponseMap {
        height: h,
        width: w,
        data,
    })
}

/// Reusable preprocessing workspace.
///
/// Output is bit-identical to [`preprocess_with`]; regions whose bilinear
/// taps only read zero bytes are known to stay zero and are not computed.
/// After each call [`Preprocessor::nonzero_pixels`] lists, in row-major
/// order, the pixels of the processed frame with any non-zero channel.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    spec: PreprocessSpec,
    taps_y: Vec<Tap>,
    taps_x: Vec<Tap>,
    // Output rows / columns reading each source row / column.
    readers_y: Vec<Vec<usize>>,
    readers_x: Vec<Vec<usize>>,
    stamp: Vec<u32>,
    epoch: u32,
    resized: Vec<u8>,
    computed: Vec<usize>,
    output: ProcessedFrame,
    nonzero: Vec<usize>,
}

fn readers(taps: &[Tap], src: usize) -> Vec<Vec<usize>> {
    let mut r = vec![Vec::new(); src];
    for (o, t) in taps.iter().enumerate() {
        r[t.lo].push(o);
        if t.hi != t.lo {
            r[t.hi].push(o);
        }
    }
    r
}

impl Preprocessor {
    pub fn new(spec: PreprocessSpec) -> Self {
        let src_h = spec.input_height - spec.crop_rows;
        let n = spec.output_size;
        let taps_y = taps(src_h, n);
        let taps_x = taps(spec.input_width, n);
        Self {
            spec,
            readers_y: readers(&taps_y, src_h),
            readers_x: readers(&taps_x, spec.input_width),
            taps_y,
            taps_x,
            stamp: vec![0; n * n],
            epoch: 0,
            resized: vec![0; n * n * CHANNELS],
            computed: Vec::new(),
            output: Frame::filled(n, n, 0.0),
            nonzero: Vec::new(),
        }
    }

    pub fn spec(&self) -> &PreprocessSpec {
        &self.spec
    }

    /// Processed frame from the last call to [`Preprocessor::run`].
    pub fn output(&self) -> &ProcessedFrame {
        &self.output
    }

    /// Pixel indices (`y * width + x`) with a non-zero channel, row-major.
    pub fn nonzero_pixels(&self) -> &[usize] {
        &self.nonzero
    }

    pub fn run(&mut self, frame: &RawFrame) -> Result<&ProcessedFrame> {
        check_input(&self.spec, frame)?;
        self.begin();
        for r in 0..frame.height - self.spec.crop_rows {
            self.mark_span(frame, r, 0, frame.width);
        }
        self.finish(frame)
    }

    /// Like [`Preprocessor::run`], but only reads pixels inside `regions`
    /// (raw-frame coordinates). Every non-zero pixel below the cropped band
    /// must lie in some region; the output is then identical to `run`.
    pub fn run_regions(&mut self, frame: &RawFrame, regions: &[Region]) -> Result<&ProcessedFrame> {
        check_input(&self.spec, frame)?;
        self.begin();
        let crop = self.spec.crop_rows;
        for reg in regions {
            let y0 = reg.y.max(crop);
            let y1 = (reg.y + reg.height).min(frame.height);
            let x1 = (reg.x + reg.width).min(frame.width);
            for y in y0..y1 {
                self.mark_span(frame, y - crop, reg.x.min(x1), x1);
            }
        }
        self.finish(frame)
    }

    fn begin(&mut self) {
        // Reset bytes written last time.
        for &i in &self.computed {
            self.resized[i * CHANNELS..(i + 1) * CHANNELS].fill(0);
        }
        self.computed.clear();
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.fill(0);
            self.epoch = 1;
        }
    }

    /// Marks output pixels with a bilinear tap on a non-zero pixel of
    /// cropped row `r`, columns `x0..x1`.
    fn mark_span(&mut self, frame: &RawFrame, r: usize, x0: usize, x1: usize) {
        let n = self.spec.output_size;
        let start = (self.spec.crop_rows + r) * frame.width;
        let bytes = &frame.data[(start + x0) * CHANNELS..(start + x1) * CHANNELS];
        let words = bytes.chunks_exact(8);
        let tail = words.remainder().iter().fold(0u8, |a, &b| a | b);
        if tail == 0 && words.fold(0u64, |a, w| a | u64::from_ne_bytes(w.try_into().unwrap())) == 0 {
            return;
        }
        let readers_y = &self.readers_y[r];
        for (dx, px) in bytes.chunks_exact(CHANNELS).enumerate() {
            if px.iter().all(|&b| b == 0) {
                continue;
            }
            for &oy in readers_y {
                for &ox in &self.readers_x[x0 + dx] {
                    let pix = oy * n + ox;
                    if self.stamp[pix] != self.epoch {
                        self.stamp[pix] = self.epoch;
                        self.computed.push(pix);
                    }
                }
            }
        }
    }

    fn finish(&mut self, frame: &RawFrame) -> Result<&ProcessedFrame> {
        let n = self.spec.output_size;
        let stride = frame.width * CHANNELS;
        let offset = self.spec.crop_rows * stride;
        self.computed.sort_unstable();

        let mut lo = u8::MAX;
        let mut hi = 0u8;
        for &pix in &self.computed {
            let (ty, tx) = (&self.taps_y[pix / n], &self.taps_x[pix % n]);
            let r0 = offset + ty.lo * stride;
            let r1 = offset + ty.hi * stride;
            for c in 0..CHANNELS {
                let v = to_u8(bilinear(
                    frame.data[r0 + tx.lo * CHANNELS + c],
                    frame.data[r0 + tx.hi * CHANNELS + c],
                    frame.data[r1 + tx.lo * CHANNELS + c],
                    frame.data[r1 + tx.hi * CHANNELS + c],
                    ty.frac,
                    tx.frac,
                ));
                self.resized[pix * CHANNELS + c] = v;
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if self.computed.len() < n * n {
            lo = 0;
        }
        if self.computed.is_empty() {
            hi = 0;
        }

        // Reset output values written last time.
        for &p in &self.nonzero {
            self.output.data[p * CHANNELS..(p + 1) * CHANNELS].fill(0.0);
        }
        self.nonzero.clear();

        if hi != lo {
            let range = (hi - lo) as f64;
            if lo == 0 {
                // Background bytes map to exactly 0.0; only touched pixels can differ.
                for &pix in &self.computed {
                    let src = &self.resized[pix * CHANNELS..(pix + 1) * CHANNELS];
                    if src.iter().all(|&b| b == 0) {
                        continue;
                    }
                    for c in 0..CHANNELS {
                        self.output.data[pix * CHANNELS + c] = (src[c] - lo) as f64 / range;
                    }
                    self.nonzero.push(pix);
                }
            } else {
                for pix in 0..n * n {
                    let mut any = false;
                    for c in 0..CHANNELS {
                        let v = (self.resized[pix * CHANNELS + c] - lo) as f64 / range;
                        self.output.data[pix * CHANNELS + c] = v;
                        any |= v != 0.0;
                    }
                    if any {
                        self.nonzero.push(pix);
                    }
                }
            }
        }
        Ok(&self.output)
    }
}

/// Writes a binary PPM (P6).
pub fn write_ppm<W: Write>(mut out: W, frame: &RawFrame) -> Result<()> {
    write!(out, "P6\n{} {}\n255\n", frame.width, frame.height)?;
    out.write_all(&frame.data)?;
    Ok(())
}

/// Reads a binary PPM (P6) with maxval 255.
pub fn read_ppm<R: BufRead>(mut input: R) -> Result<RawFrame> {
    let mut header = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 {
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            return Err(Error::Parse("truncated PPM header".into()));
        }
        header.push(line.clone());
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(str::to_owned));
    }
    if tokens[0] != "P6" || tokens.len() != 4 {
        return Err(Error::Parse("not a P6 PPM".into()));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad PPM header field {s:?}")))
    };
    let width = parse(&tokens[1])?;
    let height = parse(&tokens[2])?;
    if parse(&tokens[3])? != 255 {
        return Err(Error::Parse("only maxval 255 is supported".into()));
    }
    let mut data = vec![0u8; width * height * CHANNELS];
    input.read_exact(&mut data)?;
    Frame::new(height, width, data)
}

/// Scales a processed frame back to 8 bits for dumping.
pub fn to_raw(frame: &ProcessedFrame) -> RawFrame {
    Frame {
        height: frame.height,
        width: frame.width,
        data: frame.data.iter().map(|&v| to_u8(v * 255.0)).collect(),
    }
}
