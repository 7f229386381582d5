//! Coordinate networks: architecture descriptors, flat parameter vectors,
//! input encodings, forward evaluation and exact MSE gradients.
//!
//! Every architecture is an input encoding followed by a stack of dense
//! layers ending in a scalar affine output:
//!
//! * `Siren`: raw coordinates in `[-1, 1]²`, `sin(ω₀·z)` on the first layer,
//!   `sin(z)` on the following `hidden_layers` layers.
//! * `PeMlp`: sinusoidal positional encoding of `[0, 1]²` coordinates, ReLU.
//! * `HashMlp`: multi-resolution hash grid features, ReLU.
//!
//! In all three, `hidden_layers` counts the width→width layers after the first
//! activated layer, so a network has `hidden_layers + 1` activated layers.

mod checkpoint;
mod encoding;
mod network;
mod trig;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::signal::Domain;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};
pub use encoding::{bilinear_corners, encode_hash, encode_positional, hash_corner_index, HASH_PRIME};
pub use network::{Network, Workspace};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("coordinate ({0}, {1}) outside the {2:?} domain")]
    DomainViolation(f64, f64, Domain),
    #[error("parameter vector has {got} values, architecture needs {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("batch mismatch: {coords} coordinates, {targets} targets")]
    BatchMismatch { coords: usize, targets: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid architecture descriptor `{0}`")]
    InvalidArch(String),
    #[error("architecture has no final affine layer")]
    NoAffineOutput,
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Multi-resolution hash grid configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HashConfig {
    pub levels: usize,
    pub base_res: usize,
    pub growth: f64,
    pub feat_dim: usize,
    pub table_log2: u32,
    pub hidden_layers: usize,
    pub width: usize,
}

impl Default for HashConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            base_res: 8,
            growth: 1.5,
            feat_dim: 2,
            table_log2: 14,
            hidden_layers: 1,
            width: 64,
        }
    }
}

impl HashConfig {
    /// `N_l = floor(N0 · g^l)`.
    pub fn resolution(&self, level: usize) -> usize {
        (self.base_res as f64 * self.growth.powi(level as i32)).floor() as usize
    }

    pub fn table_size(&self) -> usize {
        1usize << self.table_log2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArchSpec {
    Siren { hidden_layers: usize, width: usize, omega0: f64 },
    PeMlp { m_bases: usize, hidden_layers: usize, width: usize },
    HashMlp(HashConfig),
}

/// Activation applied after a dense layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// `sin(scale · z)`
    Sine(f64),
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
}

impl ArchSpec {
    pub fn siren(hidden_layers: usize, width: usize) -> Self {
        ArchSpec::Siren { hidden_layers, width, omega0: 30.0 }
    }

    pub fn pe_mlp(m_bases: usize, hidden_layers: usize, width: usize) -> Self {
        ArchSpec::PeMlp { m_bases, hidden_layers, width }
    }

    pub fn domain(&self) -> Domain {
        match self {
            ArchSpec::Siren { .. } => Domain::Symmetric,
            _ => Domain::Unit,
        }
    }

    pub fn output_dim(&self) -> usize {
        1
    }

    /// Width of the encoded input fed to the first dense layer.
    pub fn encoded_dim(&self) -> usize {
        match self {
            ArchSpec::Siren { .. } => 2,
            ArchSpec::PeMlp { m_bases, .. } => 4 * m_bases,
            ArchSpec::HashMlp(h) => h.levels * h.feat_dim,
        }
    }

    pub fn dense_shapes(&self) -> Vec<DenseShape> {
        let (hidden, width, first, rest) = match *self {
            ArchSpec::Siren { hidden_layers, width, omega0 } => {
                (hidden_layers, width, Activation::Sine(omega0), Activation::Sine(1.0))
            }
            ArchSpec::PeMlp { hidden_layers, width, .. } => {
                (hidden_layers, width, Activation::Relu, Activation::Relu)
            }
            ArchSpec::HashMlp(h) => (h.hidden_layers, h.width, Activation::Relu, Activation::Relu),
        };
        let mut shapes = vec![DenseShape { fan_in: self.encoded_dim(), fan_out: width, activation: first }];
        for _ in 0..hidden {
            shapes.push(DenseShape { fan_in: width, fan_out: width, activation: rest });
        }
        shapes.push(DenseShape { fan_in: width, fan_out: 1, activation: Activation::Identity });
        shapes
    }

    /// Grid vertices per hash level, or an empty list for other variants.
    pub fn hash_resolutions(&self) -> Vec<usize> {
        match self {
            ArchSpec::HashMlp(h) => (0..h.levels).map(|l| h.resolution(l)).collect(),
            _ => Vec::new(),
        }
    }

    pub fn layout(&self) -> Layout {
        let mut slices = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            slices.push(Slice { name, offset, shape });
            offset += len;
        };
        if let ArchSpec::HashMlp(h) = self {
            for l in 0..h.levels {
                push(format!("hash.level{l}"), vec![h.table_size(), h.feat_dim]);
            }
        }
        let shapes = self.dense_shapes();
        let last = shapes.len() - 1;
        for (i, s) in shapes.iter().enumerate() {
            let stem = if i == last { "out".to_string() } else { format!("dense{i}") };
            push(format!("{stem}.weight"), vec![s.fan_out, s.fan_in]);
            push(format!("{stem}.bias"), vec![s.fan_out]);
        }
        Layout { slices, len: offset }
    }

    pub fn param_count(&self) -> usize {
        self.layout().len
    }

    /// Default learning-rate grid for this architecture family.
    pub fn default_lr_grid(&self) -> Vec<f64> {
        let exps: Vec<i32> = match self {
            ArchSpec::HashMlp(_) => (4..=13).collect(),
            _ => (8..=16).collect(),
        };
        exps.into_iter().map(|e| 2f64.powi(-e)).collect()
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArchSpec::Siren { hidden_layers, width, omega0 } => {
                write!(f, "siren:hidden={hidden_layers},width={width},omega0={omega0}")
            }
            ArchSpec::PeMlp { m_bases, hidden_layers, width } => {
                write!(f, "pe-mlp:m={m_bases},hidden={hidden_layers},width={width}")
            }
            ArchSpec::HashMlp(h) => write!(
                f,
                "hash-mlp:levels={},base={},growth={},feat={},table={},hidden={},width={}",
                h.levels, h.base_res, h.growth, h.feat_dim, h.table_log2, h.hidden_layers, h.width
            ),
        }
    }
}

impl FromStr for ArchSpec {
    type Err = ModelError;

    /// Accepts presets (`siren-small`, `siren-large`, `pe-mlp`, `hash-mlp`, ...)
    /// or a full `kind:key=value,...` descriptor.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || ModelError::InvalidArch(s.to_string());
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut arch = match kind.trim() {
            "siren" | "siren-small" => ArchSpec::siren(2, 128),
            "siren-tiny" => ArchSpec::siren(2, 64),
            "siren-large" => ArchSpec::siren(3, 512),
            "pe-mlp" | "pe-mlp-small" => ArchSpec::pe_mlp(10, 2, 128),
            "hash-mlp" | "hash-small" => ArchSpec::HashMlp(HashConfig::default()),
            _ => return Err(bad()),
        };
        for kv in rest.split(',').filter(|kv| !kv.trim().is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(bad)?;
            let (k, v) = (k.trim(), v.trim());
            let us = || v.parse::<usize>().map_err(|_| bad());
            let fl = || v.parse::<f64>().map_err(|_| bad());
            match (&mut arch, k) {
                (ArchSpec::Siren { hidden_layers, .. }, "hidden") => *hidden_layers = us()?,
                (ArchSpec::Siren { width, .. }, "width") => *width = us()?,
                (ArchSpec::Siren { omega0, .. }, "omega0") => *omega0 = fl()?,
                (ArchSpec::PeMlp { m_bases, .. }, "m") => *m_bases = us()?,
                (ArchSpec::PeMlp { hidden_layers, .. }, "hidden") => *hidden_layers = us()?,
                (ArchSpec::PeMlp { width, .. }, "width") => *width = us()?,
                (ArchSpec::HashMlp(h), "levels") => h.levels = us()?,
                (ArchSpec::HashMlp(h), "base") => h.base_res = us()?,
                (ArchSpec::HashMlp(h), "growth") => h.growth = fl()?,
                (ArchSpec::HashMlp(h), "feat") => h.feat_dim = us()?,
                (ArchSpec::HashMlp(h), "table") => {
                    h.table_log2 = v.parse().map_err(|_| bad())?;
                    if h.table_log2 > 32 {
                        return Err(bad());
                    }
                }
                (ArchSpec::HashMlp(h), "hidden") => h.hidden_layers = us()?,
                (ArchSpec::HashMlp(h), "width") => h.width = us()?,
                _ => return Err(bad()),
            }
        }
        let valid = match &arch {
            ArchSpec::Siren { width, omega0, .. } => *width > 0 && omega0.is_finite() && *omega0 > 0.0,
            ArchSpec::PeMlp { m_bases, width, .. } => *m_bases > 0 && *width > 0,
            ArchSpec::HashMlp(h) => {
                h.levels > 0 && h.base_res > 0 && h.growth >= 1.0 && h.feat_dim > 0 && h.width > 0
            }
        };
        if !valid {
            return Err(bad());
        }
        Ok(arch)
    }
}

impl serde::Serialize for ArchSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for ArchSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A named slice of the flat parameter array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slice {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Slice {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub slices: Vec<Slice>,
    pub len: usize,
}

impl Layout {
    pub fn get(&self, name: &str) -> Option<&Slice> {
        self.slices.iter().find(|s| s.name == name)
    }
}

/// Flat parameter array plus the layout describing it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Arc<Layout>,
}

impl ParamVector {
    pub fn zeros(arch: &ArchSpec) -> Self {
        let layout = arch.layout();
        Self { values: vec![0.0; layout.len], layout: Arc::new(layout) }
    }

    pub fn from_values(arch: &ArchSpec, values: Vec<f64>) -> Result<Self> {
        let layout = arch.layout();
        if values.len() != layout.len {
            return Err(ModelError::ParamCount { expected: layout.len, got: values.len() });
        }
        Ok(Self { values, layout: Arc::new(layout) })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|s| &self.values[s.range()])
    }

    pub fn slice_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.values[range])
    }

    /// Split into one owned array per layout slice.
    pub fn unflatten(&self) -> Vec<(String, Vec<f64>)> {
        self.layout
            .slices
            .iter()
            .map(|s| (s.name.clone(), self.values[s.range()].to_vec()))
            .collect()
    }

    pub fn flatten(arch: &ArchSpec, parts: &[(String, Vec<f64>)]) -> Result<Self> {
        let mut p = Self::zeros(arch);
        for (name, data) in parts {
            let dst = p
                .slice_mut(name)
                .ok_or_else(|| ModelError::InvalidArch(format!("unknown slice {name}")))?;
            if dst.len() != data.len() {
                return Err(ModelError::ParamCount { expected: dst.len(), got: data.len() });
            }
            dst.copy_from_slice(data);
        }
        Ok(p)
    }

    /// `self + t · dir` for a direction of matching length.
    pub fn offset_by(&self, dir: &[f64], t: f64) -> Self {
        let values = self.values.iter().zip(dir).map(|(a, d)| a + t * d).collect();
        Self { values, layout: Arc::clone(&self.layout) }
    }
}

fn uniform(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    (2.0 * rng.random::<f64>() - 1.0) * bound
}

/// Seeded initialization; deterministic per `(arch, seed)`.
pub fn init_params(arch: &ArchSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamVector::zeros(arch);
    if let ArchSpec::HashMlp(h) = arch {
        for l in 0..h.levels {
            for v in p.slice_mut(&format!("hash.level{l}")).unwrap() {
                *v = uniform(&mut rng, 1e-4);
            }
        }
    }
    let shapes = arch.dense_shapes();
    let last = shapes.len() - 1;
    for (i, s) in shapes.iter().enumerate() {
        let bound = match arch {
            ArchSpec::Siren { .. } if i == 0 => 1.0 / s.fan_in as f64,
            ArchSpec::Siren { omega0, .. } => (6.0 / s.fan_in as f64).sqrt() / omega0,
            _ => (6.0 / s.fan_in as f64).sqrt(),
        };
        let name = if i == last { "out.weight".to_string() } else { format!("dense{i}.weight") };
        for v in p.slice_mut(&name).unwrap() {
            *v = uniform(&mut rng, bound);
        }
    }
    p
}

fn check_params(arch: &ArchSpec, params: &ParamVector) -> Result<()> {
    let expected = arch.param_count();
    if params.len() != expected {
        return Err(ModelError::ParamCount { expected, got: params.len() });
    }
    Ok(())
}

/// Evaluate the network at a batch of coordinates.
pub fn forward(arch: &ArchSpec, params: &ParamVector, coords: &[[f64; 2]]) -> Result<Vec<f64>> {
    check_params(arch, params)?;
    let net = Network::new(arch);
    let mut ws = Workspace::default();
    net.forward(&params.values, coords, &mut ws)?;
    Ok(ws.predictions().to_vec())
}

/// Mean squared error over the batch and its exact gradient.
pub fn loss_and_grad(
    arch: &ArchSpec,
    params: &ParamVector,
    coords: &[[f64; 2]],
    targets: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_params(arch, params)?;
    let net = Network::new(arch);
    let mut ws = Workspace::default();
    let mut grad = vec![0.0; params.len()];
    let loss = net.loss_and_grad(&params.values, coords, targets, &mut grad, &mut ws)?;
    Ok((loss, grad))
}

/// Batch MSE without gradient.
pub fn loss(arch: &ArchSpec, params: &ParamVector, coords: &[[f64; 2]], targets: &[f64]) -> Result<f64> {
    if coords.len() != targets.len() {
        return Err(ModelError::BatchMismatch { coords: coords.len(), targets: targets.len() });
    }
    let preds = forward(arch, params, coords)?;
    Ok(crate::signal::mse_slices(&preds, targets))
}

/// Central-difference gradient of the batch MSE, one coordinate at a time.
///
/// `L(θ+h·e_i) − L(θ−h·e_i)` is accumulated per sample as
/// `(p₊ − p₋)(p₊ + p₋ − 2t)`, which equals the difference of the two losses
/// without the cancellation of subtracting two nearly equal sums.
pub fn fd_gradient(
    arch: &ArchSpec,
    params: &ParamVector,
    coords: &[[f64; 2]],
    targets: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    assert!(h > 0.0, "finite-difference step must be positive");
    check_params(arch, params)?;
    if coords.len() != targets.len() {
        return Err(ModelError::BatchMismatch { coords: coords.len(), targets: targets.len() });
    }
    let net = Network::new(arch);
    let mut ws = Workspace::default();
    let mut theta = params.values.clone();
    let mut plus = vec![0.0; coords.len()];
    let mut grad = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        net.forward(&theta, coords, &mut ws)?;
        plus.copy_from_slice(ws.predictions());
        theta[i] = orig - h;
        net.forward(&theta, coords, &mut ws)?;
        theta[i] = orig;
        let diff: f64 = plus
            .iter()
            .zip(ws.predictions())
            .zip(targets)
            .map(|((p, m), t)| (p - m) * ((p - t) + (m - t)))
            .sum();
        grad[i] = diff / coords.len() as f64 / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous_and_named() {
        for arch in [
            ArchSpec::siren(2, 16),
            ArchSpec::pe_mlp(3, 1, 8),
            ArchSpec::HashMlp(HashConfig { table_log2: 6, ..HashConfig::default() }),
        ] {
            let layout = arch.layout();
            let mut expect = 0;
            for s in &layout.slices {
                assert_eq!(s.offset, expect, "{}", s.name);
                expect += s.len();
            }
            assert_eq!(expect, layout.len);
            assert!(layout.get("out.weight").is_some());
            assert_eq!(layout.get("out.bias").unwrap().shape, vec![1]);
            assert_eq!(arch.layout(), layout);
        }
    }

    #[test]
    fn siren_first_layer_bound_and_determinism() {
        let arch = ArchSpec::siren(2, 32);
        let a = init_params(&arch, 5);
        let b = init_params(&arch, 5);
        assert_eq!(a, b);
        assert!(a.slice("dense0.weight").unwrap().iter().all(|w| w.abs() <= 0.5));
        let hidden_bound = (6.0f64 / 32.0).sqrt() / 30.0;
        assert!(a.slice("dense1.weight").unwrap().iter().all(|w| w.abs() <= hidden_bound));
        assert!(a.slice("dense0.bias").unwrap().iter().all(|&b| b == 0.0));
        assert_ne!(a, init_params(&arch, 6));
    }

    #[test]
    fn hash_tables_start_tiny() {
        let arch = ArchSpec::HashMlp(HashConfig { table_log2: 8, ..HashConfig::default() });
        let p = init_params(&arch, 1);
        let max = (0..8)
            .flat_map(|l| p.slice(&format!("hash.level{l}")).unwrap().to_vec())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 1e-4 && max > 0.0);
    }

    #[test]
    fn hash_resolutions_non_decreasing() {
        let arch = ArchSpec::HashMlp(HashConfig::default());
        let res = arch.hash_resolutions();
        assert_eq!(res[0], 8);
        assert_eq!(res[1], 12);
        assert!(res.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn descriptor_round_trip_and_presets() {
        for s in ["siren-small", "siren-large", "pe-mlp", "hash-mlp", "siren:hidden=0,width=4,omega0=10"] {
            let arch: ArchSpec = s.parse().unwrap();
            assert_eq!(arch.to_string().parse::<ArchSpec>().unwrap(), arch);
        }
        assert_eq!("siren-large".parse::<ArchSpec>().unwrap(), ArchSpec::siren(3, 512));
        assert!("siren:m=3".parse::<ArchSpec>().is_err());
        assert!("resnet".parse::<ArchSpec>().is_err());
        assert!("pe-mlp:m=0".parse::<ArchSpec>().is_err());
    }

    #[test]
    fn zero_params_give_zero_output() {
        for arch in [
            ArchSpec::siren(1, 8),
            ArchSpec::pe_mlp(2, 1, 8),
            ArchSpec::HashMlp(HashConfig { table_log2: 6, levels: 2, ..HashConfig::default() }),
        ] {
            let p = ParamVector::zeros(&arch);
            let grid = crate::signal::coord_grid(5, 4, arch.domain());
            let out = forward(&arch, &p, &grid.coords).unwrap();
            assert!(out.iter().all(|&y| y == 0.0));
        }
    }

    #[test]
    fn siren_without_hidden_layers_is_affine_of_sine() {
        let arch = ArchSpec::Siren { hidden_layers: 0, width: 3, omega0: 30.0 };
        let p = init_params(&arch, 11);
        let w0 = p.slice("dense0.weight").unwrap();
        let b0 = p.slice("dense0.bias").unwrap();
        let w1 = p.slice("out.weight").unwrap();
        let b1 = p.slice("out.bias").unwrap()[0];
        let x = [0.3, -0.7];
        let mut expect = b1;
        for j in 0..3 {
            let z = w0[2 * j] * x[0] + w0[2 * j + 1] * x[1] + b0[j];
            expect += w1[j] * (30.0 * z).sin();
        }
        let got = forward(&arch, &p, &[x]).unwrap()[0];
        assert!((got - expect).abs() < 1e-14);
    }

    #[test]
    fn single_neuron_pe_mlp_matches_hand_evaluation() {
        // m=1: features [sin πu, cos πu, sin πv, cos πv] → 1 ReLU unit → affine.
        let arch = ArchSpec::pe_mlp(1, 0, 1);
        let w = [0.5, -0.25, 0.75, 0.125];
        let parts = vec![
            ("dense0.weight".to_string(), w.to_vec()),
            ("dense0.bias".to_string(), vec![0.1]),
            ("out.weight".to_string(), vec![2.0]),
            ("out.bias".to_string(), vec![-0.3]),
        ];
        let p = ParamVector::flatten(&arch, &parts).unwrap();
        let pi = std::f64::consts::PI;
        let coords = [[0.1, 0.2], [0.5, 0.5], [0.9, 0.05], [0.33, 0.66], [0.0, 1.0]];
        let out = forward(&arch, &p, &coords).unwrap();
        for (c, y) in coords.iter().zip(out) {
            let f = [(pi * c[0]).sin(), (pi * c[0]).cos(), (pi * c[1]).sin(), (pi * c[1]).cos()];
            let z: f64 = f.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + 0.1;
            let expect = 2.0 * z.max(0.0) - 0.3;
            assert!((y - expect).abs() < 1e-12, "{y} vs {expect}");
        }
    }

    #[test]
    fn domain_violation_is_an_error() {
        let arch = ArchSpec::pe_mlp(1, 0, 2);
        let p = init_params(&arch, 0);
        assert!(matches!(forward(&arch, &p, &[[1.5, 0.0]]), Err(ModelError::DomainViolation(..))));
        let siren = ArchSpec::siren(0, 2);
        let p = init_params(&siren, 0);
        assert!(forward(&siren, &p, &[[-1.0, 1.0]]).is_ok());
        assert!(forward(&siren, &p, &[[-1.01, 0.0]]).is_err());
    }

    #[test]
    fn exact_targets_give_zero_loss_and_gradient() {
        let arch = ArchSpec::siren(1, 8);
        let p = init_params(&arch, 2);
        let grid = crate::signal::coord_grid(4, 4, arch.domain());
        let targets = forward(&arch, &p, &grid.coords).unwrap();
        let (l, g) = loss_and_grad(&arch, &p, &grid.coords, &targets).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn doubling_residuals_doubles_gradient() {
        let arch = ArchSpec::pe_mlp(2, 1, 6);
        let p = init_params(&arch, 3);
        let grid = crate::signal::coord_grid(4, 4, arch.domain());
        let preds = forward(&arch, &p, &grid.coords).unwrap();
        let t1: Vec<f64> = preds.iter().enumerate().map(|(i, y)| y - 0.01 * i as f64).collect();
        let t2: Vec<f64> = preds.iter().enumerate().map(|(i, y)| y - 0.02 * i as f64).collect();
        let (_, g1) = loss_and_grad(&arch, &p, &grid.coords, &t1).unwrap();
        let (_, g2) = loss_and_grad(&arch, &p, &grid.coords, &t2).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn batch_permutation_equivariance() {
        let arch = ArchSpec::HashMlp(HashConfig { table_log2: 8, levels: 3, ..HashConfig::default() });
        let p = init_params(&arch, 4);
        let grid = crate::signal::coord_grid(6, 5, arch.domain());
        let out = forward(&arch, &p, &grid.coords).unwrap();
        let rev: Vec<[f64; 2]> = grid.coords.iter().rev().cloned().collect();
        let out_rev = forward(&arch, &p, &rev).unwrap();
        let back: Vec<f64> = out_rev.into_iter().rev().collect();
        assert_eq!(out, back);
    }

    #[test]
    fn fd_gradient_of_pure_bias_network() {
        // Output depends on out.bias alone when every weight is zero:
        // L = mean((b - t)²), dL/db = 2(b - mean t).
        let arch = ArchSpec::siren(0, 2);
        let mut p = ParamVector::zeros(&arch);
        p.slice_mut("out.bias").unwrap()[0] = 0.4;
        let coords = [[0.0, 0.0], [0.5, 0.5]];
        let targets = [0.1, 0.3];
        let g = fd_gradient(&arch, &p, &coords, &targets, 1e-5).unwrap();
        let bias = arch.layout().get("out.bias").unwrap().offset;
        assert!((g[bias] - 2.0 * (0.4 - 0.2)).abs() < 1e-9);
    }
}
