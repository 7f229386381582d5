//! Invertible data transforms applied to a target image before fitting.
//!
//! Intensity transforms act pixel-wise and keep positions; permutation
//! transforms move pixels and keep intensities. Permutations carry their
//! bijection explicitly so the inverse never re-derives a sort order.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::models::{ArchSpec, ModelError, ParamVector};
use crate::signal::Image;

#[derive(Debug, thiserror::Error)]
pub enum TransformError {
    #[error("gamma transform needs non-negative intensities; pixel {index} is {value}")]
    NegativeIntensity { index: usize, value: f64 },
    #[error("standardization of a constant image (sigma = 0)")]
    ZeroSigma,
    #[error("scale factor must be non-zero and finite")]
    ZeroScale,
    #[error("invalid gamma {0}")]
    InvalidGamma(f64),
    #[error("permutation transforms need a square image, got {0}x{1}")]
    NonSquare(usize, usize),
    #[error("permutation of length {map} applied to {pixels} pixels")]
    SizeMismatch { map: usize, pixels: usize },
    #[error("not a bijection: {0}")]
    NotBijection(String),
    #[error("invalid transform spec `{0}`")]
    InvalidSpec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TransformError>;

/// A bijection on `0..n`; `forward[i]` is where source pixel `i` goes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationMap {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl PermutationMap {
    pub fn new(forward: Vec<usize>) -> Result<Self> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (src, &dst) in forward.iter().enumerate() {
            if dst >= n {
                return Err(TransformError::NotBijection(format!("index {dst} out of range {n}")));
            }
            if inverse[dst] != usize::MAX {
                return Err(TransformError::NotBijection(format!("destination {dst} used twice")));
            }
            inverse[dst] = src;
        }
        Ok(Self { forward, inverse })
    }

    pub fn identity(n: usize) -> Self {
        let forward: Vec<usize> = (0..n).collect();
        Self { inverse: forward.clone(), forward }
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn fixed_points(&self) -> usize {
        self.forward.iter().enumerate().filter(|(i, &d)| *i == d).count()
    }

    /// `out[forward[i]] = values[i]`
    pub fn permute(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check(values.len())?;
        let mut out = vec![0.0; values.len()];
        for (&dst, &v) in self.forward.iter().zip(values) {
            out[dst] = v;
        }
        Ok(out)
    }

    /// `out[i] = values[forward[i]]`
    pub fn unpermute(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check(values.len())?;
        Ok(self.forward.iter().map(|&dst| values[dst]).collect())
    }

    fn check(&self, pixels: usize) -> Result<()> {
        if pixels != self.len() {
            return Err(TransformError::SizeMismatch { map: self.len(), pixels });
        }
        Ok(())
    }

    /// Text form: `n` on the first line, then one forward index per line.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(8 * (self.len() + 1));
        s.push_str(&self.len().to_string());
        s.push('\n');
        for d in &self.forward {
            s.push_str(&d.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let bad = |m: &str| TransformError::NotBijection(m.to_string());
        let n: usize = lines
            .next()
            .ok_or_else(|| bad("empty permutation file"))?
            .parse()
            .map_err(|_| bad("bad length line"))?;
        let forward = lines
            .map(|l| l.parse::<usize>().map_err(|_| bad("bad index line")))
            .collect::<Result<Vec<_>>>()?;
        if forward.len() != n {
            return Err(bad(&format!("declared {n} entries, found {}", forward.len())));
        }
        Self::new(forward)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Uniform random permutation of `0..n` by Fisher–Yates on a seeded stream.
pub fn make_rpp(seed: u64, n: usize) -> PermutationMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut forward: Vec<usize> = (0..n).collect();
    forward.shuffle(&mut rng);
    PermutationMap { inverse: invert_bijection(&forward), forward }
}

fn invert_bijection(forward: &[usize]) -> Vec<usize> {
    let mut inverse = vec![0; forward.len()];
    for (src, &dst) in forward.iter().enumerate() {
        inverse[dst] = src;
    }
    inverse
}

/// Pixel indices sorted by ascending intensity; ties keep row-major order.
fn ascending_order(img: &Image) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..img.len()).collect();
    idx.sort_by(|&a, &b| img.pixels[a].total_cmp(&img.pixels[b]));
    idx
}

/// Destination cells of the L-shell fill, as `(row, col)`.
///
/// Shell `k` completes the `k×k` top-left square. Even `k` runs down the new
/// column from `(0, k-1)` then left along the new row; odd `k` runs right
/// along the new row from `(k-1, 0)` then up the new column.
pub fn spiral_order(side: usize) -> Vec<(usize, usize)> {
    let mut order = Vec::with_capacity(side * side);
    if side == 0 {
        return order;
    }
    order.push((0, 0));
    for k in 2..=side {
        let e = k - 1;
        if k % 2 == 0 {
            order.extend((0..=e).map(|r| (r, e)));
            order.extend((0..e).rev().map(|c| (e, c)));
        } else {
            order.extend((0..=e).map(|c| (e, c)));
            order.extend((0..e).rev().map(|r| (r, e)));
        }
    }
    order
}

/// JPEG-style anti-diagonal zigzag from `(0, 0)`, as `(row, col)`.
pub fn zigzag_order(side: usize) -> Vec<(usize, usize)> {
    let mut order = Vec::with_capacity(side * side);
    if side == 0 {
        return order;
    }
    for d in 0..=2 * (side - 1) {
        let lo = d.saturating_sub(side - 1);
        let hi = d.min(side - 1);
        if d % 2 == 0 {
            // bottom-left to top-right: row decreasing
            order.extend((lo..=hi).rev().map(|r| (r, d - r)));
        } else {
            order.extend((lo..=hi).map(|r| (r, d - r)));
        }
    }
    order
}

fn sorted_placement(img: &Image, order: &[(usize, usize)]) -> Result<PermutationMap> {
    if !img.is_square() {
        return Err(TransformError::NonSquare(img.width, img.height));
    }
    let side = img.width;
    let mut forward = vec![0; img.len()];
    for (&src, &(r, c)) in ascending_order(img).iter().zip(order) {
        forward[src] = r * side + c;
    }
    PermutationMap::new(forward)
}

/// Sorted pixels placed along growing L-shaped shells ("ordered" permutation).
pub fn make_spiral(img: &Image) -> Result<PermutationMap> {
    sorted_placement(img, &spiral_order(img.width))
}

/// Sorted pixels placed along the anti-diagonal zigzag.
pub fn make_zigzag(img: &Image) -> Result<PermutationMap> {
    sorted_placement(img, &zigzag_order(img.width))
}

/// A constructed transform, with every parameter needed for its inverse.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Identity,
    Inversion,
    Standardization { mu: f64, sigma: f64 },
    LinearScale { t: f64 },
    Centering { t: f64 },
    Gamma { gamma: f64 },
    RandomPermutation(PermutationMap),
    ZigzagPermutation(PermutationMap),
    SpiralPermutation(PermutationMap),
}

impl Transform {
    /// Standardization with `(mu, sigma)` measured on `img`.
    pub fn standardization_for(img: &Image) -> Result<Self> {
        let n = img.len() as f64;
        let mu = img.pixels.iter().sum::<f64>() / n;
        let var = img.pixels.iter().map(|z| (z - mu) * (z - mu)).sum::<f64>() / n;
        let sigma = var.sqrt();
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(TransformError::ZeroSigma);
        }
        Ok(Transform::Standardization { mu, sigma })
    }

    pub fn permutation(&self) -> Option<&PermutationMap> {
        match self {
            Transform::RandomPermutation(p)
            | Transform::ZigzagPermutation(p)
            | Transform::SpiralPermutation(p) => Some(p),
            _ => None,
        }
    }

    /// `(a, b)` such that the inverse is `z ↦ a·z + b`, for affine kinds.
    pub fn affine_inverse(&self) -> Option<(f64, f64)> {
        match *self {
            Transform::Identity => Some((1.0, 0.0)),
            Transform::Inversion => Some((-1.0, 1.0)),
            Transform::Standardization { mu, sigma } => Some((sigma, mu)),
            Transform::LinearScale { t } => Some((1.0 / t, 0.0)),
            Transform::Centering { t } => Some((1.0 / t, 0.5)),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Transform::Standardization { sigma, .. } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(TransformError::ZeroSigma)
            }
            Transform::LinearScale { t } | Transform::Centering { t } if t == 0.0 || !t.is_finite() => {
                Err(TransformError::ZeroScale)
            }
            Transform::Gamma { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(TransformError::InvalidGamma(gamma))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Inversion => "inversion",
            Transform::Standardization { .. } => "standardization",
            Transform::LinearScale { .. } => "linear",
            Transform::Centering { .. } => "centering",
            Transform::Gamma { .. } => "gamma",
            Transform::RandomPermutation(_) => "rpp",
            Transform::ZigzagPermutation(_) => "zigzag",
            Transform::SpiralPermutation(_) => "spiral",
        }
    }
}

fn non_negative(img: &Image) -> Result<()> {
    match img.pixels.iter().position(|&z| !(z >= 0.0)) {
        Some(index) => Err(TransformError::NegativeIntensity { index, value: img.pixels[index] }),
        None => Ok(()),
    }
}

/// Forward transform.
pub fn apply(t: &Transform, img: &Image) -> Result<Image> {
    t.validate()?;
    Ok(match t {
        Transform::Identity => img.clone(),
        Transform::Inversion => img.map(|z| 1.0 - z),
        Transform::Standardization { mu, sigma } => img.map(|z| (z - mu) / sigma),
        Transform::LinearScale { t } => img.map(|z| t * z),
        Transform::Centering { t } => img.map(|z| t * (z - 0.5)),
        Transform::Gamma { gamma } => {
            non_negative(img)?;
            let e = 1.0 / gamma;
            img.map(|z| z.powf(e))
        }
        Transform::RandomPermutation(p)
        | Transform::ZigzagPermutation(p)
        | Transform::SpiralPermutation(p) => img.with_pixels(p.permute(&img.pixels)?),
    })
}

/// Exact inverse transform.
pub fn invert(t: &Transform, img: &Image) -> Result<Image> {
    t.validate()?;
    Ok(match t {
        Transform::Identity => img.clone(),
        Transform::Inversion => img.map(|z| 1.0 - z),
        Transform::Standardization { mu, sigma } => img.map(|z| sigma * z + mu),
        Transform::LinearScale { t } => img.map(|z| z / t),
        Transform::Centering { t } => img.map(|z| z / t + 0.5),
        Transform::Gamma { gamma } => {
            non_negative(img)?;
            img.map(|z| z.powf(*gamma))
        }
        Transform::RandomPermutation(p)
        | Transform::ZigzagPermutation(p)
        | Transform::SpiralPermutation(p) => img.with_pixels(p.unpermute(&img.pixels)?),
    })
}

/// Inverse applied to a network's raw output. Identical to [`invert`] except
/// that Gamma clamps negative predictions to 0, since network outputs are not
/// confined to the transform's range.
pub fn reconstruct(t: &Transform, predictions: &Image) -> Result<Image> {
    match t {
        Transform::Gamma { .. } => invert(t, &predictions.map(|z| if z > 0.0 { z } else { 0.0 })),
        _ => invert(t, predictions),
    }
}

/// Fold the affine map `y ↦ a·y + b` into the output layer: `W ↦ aW`, `c ↦ ac + b`.
pub fn bake_affine_inverse(arch: &ArchSpec, params: &ParamVector, a: f64, b: f64) -> Result<ParamVector> {
    let layout = arch.layout();
    if *params.layout != layout {
        return Err(ModelError::ParamCount { expected: layout.len, got: params.len() }.into());
    }
    let (Some(w), Some(c)) = (layout.get("out.weight"), layout.get("out.bias")) else {
        return Err(ModelError::NoAffineOutput.into());
    };
    let mut out = params.clone();
    for v in &mut out.values[w.range()] {
        *v *= a;
    }
    for v in &mut out.values[c.range()] {
        *v = a * *v + b;
    }
    Ok(out)
}

/// A transform before it sees data.
///
/// Text forms: `identity`, `inversion`, `standardization`, `linear:<t>`,
/// `centering:<t>`, `gamma:<γ>`, `rpp` or `rpp:seed=<n>`, `zigzag`, `spiral`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransformSpec {
    Identity,
    Inversion,
    Standardization,
    LinearScale(f64),
    Centering(f64),
    Gamma(f64),
    RandomPermutation { seed: Option<u64> },
    Zigzag,
    Spiral,
}

impl TransformSpec {
    /// Construct against `img`; `seed` drives RPP when the spec has none.
    pub fn build(&self, img: &Image, seed: u64) -> Result<Transform> {
        let t = match *self {
            TransformSpec::Identity => Transform::Identity,
            TransformSpec::Inversion => Transform::Inversion,
            TransformSpec::Standardization => Transform::standardization_for(img)?,
            TransformSpec::LinearScale(t) => Transform::LinearScale { t },
            TransformSpec::Centering(t) => Transform::Centering { t },
            TransformSpec::Gamma(gamma) => Transform::Gamma { gamma },
            TransformSpec::RandomPermutation { seed: s } => {
                Transform::RandomPermutation(make_rpp(s.unwrap_or(seed), img.len()))
            }
            TransformSpec::Zigzag => Transform::ZigzagPermutation(make_zigzag(img)?),
            TransformSpec::Spiral => Transform::SpiralPermutation(make_spiral(img)?),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, TransformSpec::Identity)
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformSpec::Identity => write!(f, "identity"),
            TransformSpec::Inversion => write!(f, "inversion"),
            TransformSpec::Standardization => write!(f, "standardization"),
            TransformSpec::LinearScale(t) => write!(f, "linear:{t}"),
            TransformSpec::Centering(t) => write!(f, "centering:{t}"),
            TransformSpec::Gamma(g) => write!(f, "gamma:{g}"),
            TransformSpec::RandomPermutation { seed: None } => write!(f, "rpp"),
            TransformSpec::RandomPermutation { seed: Some(s) } => write!(f, "rpp:seed={s}"),
            TransformSpec::Zigzag => write!(f, "zigzag"),
            TransformSpec::Spiral => write!(f, "spiral"),
        }
    }
}

impl FromStr for TransformSpec {
    type Err = TransformError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || TransformError::InvalidSpec(s.to_string());
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let num = || -> Result<f64> { arg.ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let spec = match (kind, arg) {
            ("identity" | "id" | "original", None) => TransformSpec::Identity,
            ("inversion" | "invert", None) => TransformSpec::Inversion,
            ("standardization" | "std", None) => TransformSpec::Standardization,
            ("linear" | "scale", Some(_)) => TransformSpec::LinearScale(num()?),
            ("centering" | "center", Some(_)) => TransformSpec::Centering(num()?),
            ("gamma", Some(_)) => TransformSpec::Gamma(num()?),
            ("rpp" | "random", None) => TransformSpec::RandomPermutation { seed: None },
            ("rpp" | "random", Some(a)) => {
                let v = a.strip_prefix("seed=").unwrap_or(a);
                TransformSpec::RandomPermutation { seed: Some(v.parse().map_err(|_| bad())?) }
            }
            ("zigzag", None) => TransformSpec::Zigzag,
            ("spiral" | "ordered", None) => TransformSpec::Spiral,
            _ => return Err(bad()),
        };
        match spec {
            TransformSpec::LinearScale(t) | TransformSpec::Centering(t) if t == 0.0 || !t.is_finite() => {
                Err(TransformError::ZeroScale)
            }
            TransformSpec::Gamma(g) if !(g > 0.0 && g.is_finite()) => Err(TransformError::InvalidGamma(g)),
            _ => Ok(spec),
        }
    }
}

impl serde::Serialize for TransformSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for TransformSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        <String as serde::Deserialize>::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
