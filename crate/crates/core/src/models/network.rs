//! Batched forward and reverse passes over a flat parameter slice.
//!
//! Activations are kept row-major (`batch × width`) and every dense layer is a
//! single GEMM, so a full-image step costs a handful of matrix products.

use super::trig;
use super::encoding::{bilinear_corners, hash_corner_index, positional_into};
use super::{Activation, ArchSpec, HashConfig, ModelError, Result};
use crate::signal::Domain;

#[derive(Debug, Clone)]
struct DenseLayer {
    w_off: usize,
    b_off: usize,
    fan_in: usize,
    fan_out: usize,
    activation: Activation,
}

#[derive(Debug, Clone)]
struct HashPlan {
    cfg: HashConfig,
    level_offsets: Vec<usize>,
    resolutions: Vec<usize>,
}

/// Precomputed execution plan for one architecture.
#[derive(Debug, Clone)]
pub struct Network {
    arch: ArchSpec,
    domain: Domain,
    enc_dim: usize,
    dense: Vec<DenseLayer>,
    hash: Option<HashPlan>,
    n_params: usize,
}

/// Reusable buffers for one batch; grows on demand.
#[derive(Debug, Default)]
pub struct Workspace {
    batch: usize,
    input: Vec<f64>,
    acts: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
    preds: Vec<f64>,
    slots: Vec<u32>,
    weights: Vec<f64>,
    dz: Vec<f64>,
    dx: Vec<f64>,
}

impl Workspace {
    /// Outputs of the most recent forward pass.
    pub fn predictions(&self) -> &[f64] {
        &self.preds[..self.batch]
    }
}

/// `C = alpha·A·B + beta·C` on strided row-major views.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!((m - 1) * rsc + n - 1 < c.len());
    // SAFETY: the asserted extents keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

fn resize(buf: &mut Vec<f64>, len: usize) {
    if buf.len() < len {
        buf.resize(len, 0.0);
    }
}

impl Network {
    pub fn new(arch: &ArchSpec) -> Self {
        let layout = arch.layout();
        let shapes = arch.dense_shapes();
        let last = shapes.len() - 1;
        let dense = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let stem = if i == last { "out".to_string() } else { format!("dense{i}") };
                DenseLayer {
                    w_off: layout.get(&format!("{stem}.weight")).unwrap().offset,
                    b_off: layout.get(&format!("{stem}.bias")).unwrap().offset,
                    fan_in: s.fan_in,
                    fan_out: s.fan_out,
                    activation: s.activation,
                }
            })
            .collect();
        let hash = match arch {
            ArchSpec::HashMlp(cfg) => Some(HashPlan {
                cfg: *cfg,
                level_offsets: (0..cfg.levels)
                    .map(|l| layout.get(&format!("hash.level{l}")).unwrap().offset)
                    .collect(),
                resolutions: arch.hash_resolutions(),
            }),
            _ => None,
        };
        Self {
            arch: *arch,
            domain: arch.domain(),
            enc_dim: arch.encoded_dim(),
            dense,
            hash,
            n_params: layout.len,
        }
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.n_params
    }

    fn check_coords(&self, coords: &[[f64; 2]]) -> Result<()> {
        let (lo, hi) = match self.domain {
            Domain::Unit => (0.0, 1.0),
            Domain::Symmetric => (-1.0, 1.0),
        };
        for c in coords {
            if !(lo..=hi).contains(&c[0]) || !(lo..=hi).contains(&c[1]) {
                return Err(ModelError::DomainViolation(c[0], c[1], self.domain));
            }
        }
        Ok(())
    }

    fn check_len(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(ModelError::ParamCount { expected: self.n_params, got: params.len() });
        }
        Ok(())
    }

    /// Forward pass; predictions land in [`Workspace::predictions`].
    pub fn forward(&self, params: &[f64], coords: &[[f64; 2]], ws: &mut Workspace) -> Result<()> {
        self.check_len(params)?;
        self.check_coords(coords)?;
        self.run_forward(params, coords, ws, false);
        Ok(())
    }

    /// Batch MSE; `grad` is overwritten with its exact gradient. The forward
    /// predictions stay available in `ws`.
    pub fn loss_and_grad(
        &self,
        params: &[f64],
        coords: &[[f64; 2]],
        targets: &[f64],
        grad: &mut [f64],
        ws: &mut Workspace,
    ) -> Result<f64> {
        self.check_len(params)?;
        if coords.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        if coords.len() != targets.len() {
            return Err(ModelError::BatchMismatch { coords: coords.len(), targets: targets.len() });
        }
        if grad.len() != self.n_params {
            return Err(ModelError::ParamCount { expected: self.n_params, got: grad.len() });
        }
        self.check_coords(coords)?;
        self.run_forward(params, coords, ws, true);
        let batch = coords.len();
        let scale = 2.0 / batch as f64;
        resize(&mut ws.dz, batch);
        let mut sum = 0.0;
        for ((dz, &p), &t) in ws.dz.iter_mut().zip(&ws.preds[..batch]).zip(targets) {
            let r = p - t;
            sum += r * r;
            *dz = scale * r;
        }
        grad.fill(0.0);
        self.backward(params, grad, ws);
        Ok(sum / batch as f64)
    }

    fn run_forward(&self, params: &[f64], coords: &[[f64; 2]], ws: &mut Workspace, keep: bool) {
        let batch = coords.len();
        ws.batch = batch;
        self.encode(params, coords, ws, keep);
        let n_layers = self.dense.len();
        if ws.acts.len() < n_layers - 1 {
            ws.acts.resize_with(n_layers - 1, Vec::new);
            ws.derivs.resize_with(n_layers - 1, Vec::new);
        }
        resize(&mut ws.preds, batch);
        for (i, layer) in self.dense.iter().enumerate() {
            let w = &params[layer.w_off..layer.w_off + layer.fan_in * layer.fan_out];
            let b = &params[layer.b_off..layer.b_off + layer.fan_out];
            let (prev, rest) = ws.acts.split_at_mut(i.min(n_layers - 1));
            let x: &[f64] = if i == 0 { &ws.input } else { &prev[i - 1] };
            let out: &mut Vec<f64> = if i + 1 == n_layers { &mut ws.preds } else { &mut rest[0] };
            let len = batch * layer.fan_out;
            resize(out, len);
            let z = &mut out[..len];
            for row in z.chunks_exact_mut(layer.fan_out) {
                row.copy_from_slice(b);
            }
            // Z = X·Wᵀ + b, W stored [fan_out, fan_in].
            gemm(
                batch,
                layer.fan_in,
                layer.fan_out,
                x,
                (layer.fan_in, 1),
                w,
                (1, layer.fan_in),
                1.0,
                z,
                layer.fan_out,
            );
            if i + 1 == n_layers {
                continue;
            }
            let deriv = &mut ws.derivs[i];
            if keep {
                resize(deriv, len);
            }
            match layer.activation {
                Activation::Sine(scale) => {
                    let d = if keep { Some(&mut deriv[..len]) } else { None };
                    trig::sine_activation(z, d, scale);
                }
                Activation::Relu => {
                    if keep {
                        for (v, d) in z.iter_mut().zip(deriv.iter_mut()) {
                            let on = *v > 0.0;
                            *d = if on { 1.0 } else { 0.0 };
                            if !on {
                                *v = 0.0;
                            }
                        }
                    } else {
                        for v in z.iter_mut() {
                            *v = v.max(0.0);
                        }
                    }
                }
                Activation::Identity => {
                    if keep {
                        deriv[..len].fill(1.0);
                    }
                }
            }
        }
    }

    fn encode(&self, params: &[f64], coords: &[[f64; 2]], ws: &mut Workspace, keep: bool) {
        let batch = coords.len();
        let dim = self.enc_dim;
        resize(&mut ws.input, batch * dim);
        let input = &mut ws.input[..batch * dim];
        match (&self.arch, &self.hash) {
            (ArchSpec::Siren { .. }, _) => {
                for (row, c) in input.chunks_exact_mut(2).zip(coords) {
                    row.copy_from_slice(c);
                }
            }
            (ArchSpec::PeMlp { m_bases, .. }, _) => {
                for (row, c) in input.chunks_exact_mut(dim).zip(coords) {
                    positional_into(*c, *m_bases, row);
                }
            }
            (ArchSpec::HashMlp(_), Some(plan)) => {
                let cfg = &plan.cfg;
                let f = cfg.feat_dim;
                let levels = cfg.levels;
                if keep {
                    ws.slots.resize(batch * levels * 4, 0);
                    if ws.weights.len() < batch * levels * 4 {
                        ws.weights.resize(batch * levels * 4, 0.0);
                    }
                }
                input.fill(0.0);
                for (b, c) in coords.iter().enumerate() {
                    let row = &mut input[b * dim..(b + 1) * dim];
                    for l in 0..levels {
                        let table = &params[plan.level_offsets[l]..];
                        let (corners, weights) = bilinear_corners(*c, plan.resolutions[l]);
                        for (j, (corner, w)) in corners.iter().zip(weights).enumerate() {
                            let slot = hash_corner_index(corner[0], corner[1], cfg.table_log2);
                            for k in 0..f {
                                row[l * f + k] += w * table[slot * f + k];
                            }
                            if keep {
                                let at = (b * levels + l) * 4 + j;
                                ws.slots[at] = slot as u32;
                                ws.weights[at] = w;
                            }
                        }
                    }
                }
            }
            (ArchSpec::HashMlp(_), None) => unreachable!("hash plan built for hash architectures"),
        }
    }

    fn backward(&self, params: &[f64], grad: &mut [f64], ws: &mut Workspace) {
        let batch = ws.batch;
        let n_layers = self.dense.len();
        for i in (0..n_layers).rev() {
            let layer = &self.dense[i];
            let (fan_in, fan_out) = (layer.fan_in, layer.fan_out);
            let x: &[f64] = if i == 0 { &ws.input } else { &ws.acts[i - 1] };
            let dz = &ws.dz[..batch * fan_out];
            // dW += dZᵀ·X
            gemm(
                fan_out,
                batch,
                fan_in,
                dz,
                (1, fan_out),
                x,
                (fan_in, 1),
                1.0,
                &mut grad[layer.w_off..layer.w_off + fan_in * fan_out],
                fan_in,
            );
            let gb = &mut grad[layer.b_off..layer.b_off + fan_out];
            for row in dz.chunks_exact(fan_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if i == 0 && self.hash.is_none() {
                break;
            }
            // dX = dZ·W
            resize(&mut ws.dx, batch * fan_in);
            let w = &params[layer.w_off..layer.w_off + fan_in * fan_out];
            gemm(
                batch,
                fan_out,
                fan_in,
                dz,
                (fan_out, 1),
                w,
                (fan_in, 1),
                0.0,
                &mut ws.dx[..batch * fan_in],
                fan_in,
            );
            if i > 0 {
                let deriv = &ws.derivs[i - 1][..batch * fan_in];
                resize(&mut ws.dz, batch * fan_in);
                for ((dz, dx), d) in ws.dz.iter_mut().zip(&ws.dx[..batch * fan_in]).zip(deriv) {
                    *dz = dx * d;
                }
            }
        }
        if let Some(plan) = &self.hash {
            let f = plan.cfg.feat_dim;
            let levels = plan.cfg.levels;
            let dim = self.enc_dim;
            for b in 0..batch {
                let dfeat = &ws.dx[b * dim..(b + 1) * dim];
                for l in 0..levels {
                    let off = plan.level_offsets[l];
                    for j in 0..4 {
                        let at = (b * levels + l) * 4 + j;
                        let slot = ws.slots[at] as usize;
                        let w = ws.weights[at];
                        for k in 0..f {
                            grad[off + slot * f + k] += w * dfeat[l * f + k];
                        }
                    }
                }
            }
        }
    }
}
