//! Images, file I/O, preprocessing, coordinate grids and fidelity metrics.
//!
//! Intensities are `f64`. Source images are scaled to `[0, 1]`; transformed
//! signals may leave that range.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Errors from image ingestion, preprocessing and metrics.
#[derive(Debug, thiserror::Error)]
pub enum SignalError {
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated or malformed image data: {0}")]
    Truncated(String),
    #[error("image declares a max value of 0")]
    ZeroMaxValue,
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("crop {crop} larger than image {width}x{height}")]
    CropTooLarge { crop: usize, width: usize, height: usize },
    #[error("pixel {index} has intensity {value} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("synthetic images must be square with a power-of-two side, got {0}x{1}")]
    NotPowerOfTwo(usize, usize),
    #[error("invalid image spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// Row-major grid of intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(SignalError::Truncated(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, pixels: vec![value; width * height] }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Same dimensions, new pixel values.
    pub fn with_pixels(&self, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        Self { width: self.width, height: self.height, pixels }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_pixels(self.pixels.iter().map(|&z| f(z)).collect())
    }

    pub fn same_dims(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(SignalError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }
}

/// Three-channel image as loaded from an RGB PNG.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

/// Result of [`load_image`]: grayscale files stay single-channel.
#[derive(Debug, Clone, PartialEq)]
pub enum Loaded {
    Gray(Image),
    Rgb(RgbImage),
}

impl Loaded {
    pub fn width(&self) -> usize {
        match self {
            Loaded::Gray(img) => img.width,
            Loaded::Rgb(img) => img.width,
        }
    }

    pub fn height(&self) -> usize {
        match self {
            Loaded::Gray(img) => img.height,
            Loaded::Rgb(img) => img.height,
        }
    }
}

/// Load a PGM (P2/P5) or 8-bit grayscale/RGB PNG, scaling intensities to `[0, 1]`.
/// Grayscale PFM (`Pf`) floats are taken as-is and may fall outside `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Loaded> {
    let bytes = fs::read(path.as_ref())?;
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<Loaded> {
    match bytes {
        [b'P', b'2', ..] | [b'P', b'5', ..] => decode_pgm(bytes).map(Loaded::Gray),
        [b'P', b'f', ..] => decode_pfm(bytes).map(Loaded::Gray),
        [0x89, b'P', b'N', b'G', ..] => decode_png(bytes),
        _ => Err(SignalError::UnsupportedFormat(
            "expected a P2/P5 PGM, Pf PFM or PNG signature".into(),
        )),
    }
}

struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmCursor<'_> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn next_uint(&mut self, what: &str) -> Result<u64> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(SignalError::Truncated(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| SignalError::Truncated(format!("bad {what}")))
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let binary = bytes[1] == b'5';
    let mut cur = PgmCursor { bytes, pos: 2 };
    let width = cur.next_uint("width")? as usize;
    let height = cur.next_uint("height")? as usize;
    let maxval = cur.next_uint("maxval")?;
    if maxval == 0 {
        return Err(SignalError::ZeroMaxValue);
    }
    if maxval > 65535 {
        return Err(SignalError::UnsupportedFormat(format!("PGM maxval {maxval}")));
    }
    let n = width * height;
    let scale = maxval as f64;
    let mut pixels = Vec::with_capacity(n);
    if binary {
        // Exactly one whitespace byte separates the header from the raster.
        cur.pos += 1;
        let raster = bytes.get(cur.pos..).unwrap_or(&[]);
        let wide = maxval > 255;
        let needed = if wide { 2 * n } else { n };
        if raster.len() < needed {
            return Err(SignalError::Truncated(format!(
                "raster has {} bytes, need {needed}",
                raster.len()
            )));
        }
        if wide {
            for pair in raster[..needed].chunks_exact(2) {
                pixels.push(u16::from_be_bytes([pair[0], pair[1]]) as f64 / scale);
            }
        } else {
            pixels.extend(raster[..n].iter().map(|&b| b as f64 / scale));
        }
    } else {
        for _ in 0..n {
            pixels.push(cur.next_uint("pixel")? as f64 / scale);
        }
    }
    if pixels.iter().any(|&p| p > 1.0) {
        return Err(SignalError::Truncated("sample exceeds maxval".into()));
    }
    Image::new(width, height, pixels)
}

fn decode_pfm(bytes: &[u8]) -> Result<Image> {
    let mut cur = PgmCursor { bytes, pos: 2 };
    let width = cur.next_uint("width")? as usize;
    let height = cur.next_uint("height")? as usize;
    cur.skip_ws_and_comments();
    let start = cur.pos;
    while cur.pos < bytes.len() && !bytes[cur.pos].is_ascii_whitespace() {
        cur.pos += 1;
    }
    let scale: f64 = std::str::from_utf8(&bytes[start..cur.pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|s: &f64| *s != 0.0 && s.is_finite())
        .ok_or_else(|| SignalError::Truncated("bad PFM scale".into()))?;
    cur.pos += 1;
    let n = width * height;
    let raster = bytes.get(cur.pos..).unwrap_or(&[]);
    if raster.len() < 4 * n {
        return Err(SignalError::Truncated(format!("raster has {} bytes, need {}", raster.len(), 4 * n)));
    }
    let little = scale < 0.0;
    let mut pixels = vec![0.0; n];
    // Rows are stored bottom to top.
    for (k, q) in raster[..4 * n].chunks_exact(4).enumerate() {
        let q = [q[0], q[1], q[2], q[3]];
        let v = if little { f32::from_le_bytes(q) } else { f32::from_be_bytes(q) };
        let (r, c) = (height - 1 - k / width, k % width);
        pixels[r * width + c] = v as f64;
    }
    Image::new(width, height, pixels)
}

fn decode_png(bytes: &[u8]) -> Result<Loaded> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| SignalError::Truncated(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| SignalError::UnsupportedFormat("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| SignalError::Truncated(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(SignalError::UnsupportedFormat(format!(
            "PNG bit depth {:?}",
            info.bit_depth
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let norm = |b: u8| b as f64 / 255.0;
    match info.color_type {
        png::ColorType::Grayscale => {
            Image::new(width, height, data.iter().map(|&b| norm(b)).collect()).map(Loaded::Gray)
        }
        png::ColorType::Rgb => Ok(Loaded::Rgb(RgbImage {
            width,
            height,
            pixels: data
                .chunks_exact(3)
                .map(|c| [norm(c[0]), norm(c[1]), norm(c[2])])
                .collect(),
        })),
        other => Err(SignalError::UnsupportedFormat(format!("PNG color type {other:?}"))),
    }
}

/// Rec. 709 linear luminance weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.2126, 0.7152, 0.0722];

/// Standard piecewise sRGB decoding.
pub fn srgb_to_linear(z: f64) -> f64 {
    if z <= 0.04045 {
        z / 12.92
    } else {
        ((z + 0.055) / 1.055).powf(2.4)
    }
}

/// Center crop to `crop`×`crop`, convert to grayscale, optionally decode sRGB.
pub fn preprocess(img: &Loaded, crop: usize, linearize: bool) -> Result<Image> {
    let (width, height) = (img.width(), img.height());
    if crop > width || crop > height || crop == 0 {
        return Err(SignalError::CropTooLarge { crop, width, height });
    }
    let col0 = (width - crop) / 2;
    let row0 = (height - crop) / 2;
    let mut pixels = Vec::with_capacity(crop * crop);
    for row in row0..row0 + crop {
        for col in col0..col0 + crop {
            let idx = row * width + col;
            let gray = match img {
                Loaded::Gray(g) => g.pixels[idx],
                Loaded::Rgb(c) => {
                    let [r, g, b] = c.pixels[idx];
                    (LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b).clamp(0.0, 1.0)
                }
            };
            // Float inputs pass through unchanged unless linearized.
            pixels.push(if linearize { srgb_to_linear(gray.clamp(0.0, 1.0)) } else { gray });
        }
    }
    Image::new(crop, crop, pixels)
}

/// Coordinate domain of a network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Domain {
    /// `[0, 1]²`
    Unit,
    /// `[-1, 1]²`
    Symmetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    pub width: usize,
    pub height: usize,
    pub domain: Domain,
    /// `(u, v)` per pixel, row-major; `u` follows columns, `v` follows rows.
    pub coords: Vec<[f64; 2]>,
}

impl CoordGrid {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Pixel-center coordinates for a `width`×`height` grid.
pub fn coord_grid(width: usize, height: usize, domain: Domain) -> CoordGrid {
    let mut coords = Vec::with_capacity(width * height);
    for row in 0..height {
        let v = (row as f64 + 0.5) / height as f64;
        for col in 0..width {
            let u = (col as f64 + 0.5) / width as f64;
            coords.push(match domain {
                Domain::Unit => [u, v],
                Domain::Symmetric => [2.0 * u - 1.0, 2.0 * v - 1.0],
            });
        }
    }
    CoordGrid { width, height, domain, coords }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    Ok(mse_slices(&a.pixels, &b.pixels))
}

pub(crate) fn mse_slices(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / a.len() as f64
}

/// PSNR in dB for peak 1. Zero error maps to `+inf`.
pub fn psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Quantize to 8 bits and write a binary PGM.
pub fn save_image(img: &Image, path: impl AsRef<Path>, clamp: bool) -> Result<()> {
    let bytes = encode_pgm(img, clamp)?;
    let path = path.as_ref();
    let tmp = path.with_extension("pgm.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn encode_pgm(img: &Image, clamp: bool) -> Result<Vec<u8>> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.reserve(img.len());
    for (index, &z) in img.pixels.iter().enumerate() {
        let z = if clamp {
            if z.is_nan() {
                0.0
            } else {
                z.clamp(0.0, 1.0)
            }
        } else if !(0.0..=1.0).contains(&z) {
            return Err(SignalError::OutOfRange { index, value: z });
        } else {
            z
        };
        // f64::round rounds half away from zero, i.e. half-up on [0, 255].
        out.push((z * 255.0).round() as u8);
    }
    Ok(out)
}

/// Deterministic "natural-like" noise with amplitude `∝ 1/f^exponent`.
///
/// Each frequency of a `size`×`size` FFT grid gets amplitude
/// `|f|^-exponent` (DC zeroed) and a phase drawn from a ChaCha8 stream
/// seeded by `seed`; the real part of the inverse transform is min-max
/// normalized to `[0, 1]`.
pub fn gen_synthetic(seed: u64, width: usize, height: usize, spectral_exponent: f64) -> Result<Image> {
    if width != height || width == 0 || !width.is_power_of_two() {
        return Err(SignalError::NotPowerOfTwo(width, height));
    }
    let n = width;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signed = |k: usize| if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    let mut spectrum = vec![Complex::new(0.0, 0.0); n * n];
    for ky in 0..n {
        for kx in 0..n {
            let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let f = (signed(kx).powi(2) + signed(ky).powi(2)).sqrt();
            if f == 0.0 {
                continue;
            }
            let amp = f.powf(-spectral_exponent);
            spectrum[ky * n + kx] = Complex::from_polar(amp, phase);
        }
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(n);
    // Rows, then columns via a transpose.
    for row in spectrum.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut cols = vec![Complex::new(0.0, 0.0); n * n];
    for r in 0..n {
        for c in 0..n {
            cols[c * n + r] = spectrum[r * n + c];
        }
    }
    for col in cols.chunks_exact_mut(n) {
        fft.process(col);
    }
    let mut pixels = vec![0.0; n * n];
    for c in 0..n {
        for r in 0..n {
            pixels[r * n + c] = cols[c * n + r].re;
        }
    }
    let lo = pixels.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = pixels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for p in &mut pixels {
        *p = if span > 0.0 { ((*p - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
    }
    Image::new(n, n, pixels)
}

/// Where an image comes from: a file or an inline synthetic spec.
///
/// Text form: a path, or `synth:seed=7,size=64,exp=2`.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    File(std::path::PathBuf),
    Synthetic { seed: u64, size: usize, exponent: f64 },
}

impl std::str::FromStr for ImageSource {
    type Err = SignalError;

    fn from_str(s: &str) -> Result<Self> {
        let Some(rest) = s.strip_prefix("synth:") else {
            return Ok(ImageSource::File(s.into()));
        };
        let (mut seed, mut size, mut exponent) = (0u64, 64usize, 1.0f64);
        for kv in rest.split(',').filter(|kv| !kv.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| SignalError::InvalidSpec(s.to_string()))?;
            let bad = || SignalError::InvalidSpec(format!("{k}={v} in {s}"));
            match k.trim() {
                "seed" => seed = v.trim().parse().map_err(|_| bad())?,
                "size" => size = v.trim().parse().map_err(|_| bad())?,
                "exp" => exponent = v.trim().parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
        }
        Ok(ImageSource::Synthetic { seed, size, exponent })
    }
}

impl std::fmt::Display for ImageSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ImageSource::File(p) => write!(f, "{}", p.display()),
            ImageSource::Synthetic { seed, size, exponent } => {
                write!(f, "synth:seed={seed},size={size},exp={exponent}")
            }
        }
    }
}

impl serde::Serialize for ImageSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for ImageSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        <String as serde::Deserialize>::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl ImageSource {
    /// Materialize the image. Files are center-cropped to `crop` (or their
    /// shorter side) and converted to grayscale.
    pub fn load(&self, crop: Option<usize>, linearize: bool) -> Result<Image> {
        match self {
            ImageSource::File(path) => {
                let loaded = load_image(path)?;
                let side = crop.unwrap_or_else(|| loaded.width().min(loaded.height()));
                preprocess(&loaded, side, linearize)
            }
            ImageSource::Synthetic { seed, size, exponent } => {
                let img = gen_synthetic(*seed, *size, *size, *exponent)?;
                let side = crop.unwrap_or(*size);
                preprocess(&Loaded::Gray(img), side, linearize)
            }
        }
    }
}
