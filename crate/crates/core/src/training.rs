//! Optimizers, batch sampling and the train-to-target loop.
//!
//! Step `k` of a run means the parameters after `k` optimizer updates. The
//! reconstruction is evaluated on the full grid every `eval_every` steps and
//! the run stops at the first evaluation whose inverse-transformed PSNR reaches
//! the target.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::models::{init_params, ArchSpec, ModelError, Network, ParamVector, Workspace};
use crate::signal::{coord_grid, psnr, Image};
use crate::transforms::{apply, reconstruct, Transform, TransformError};

/// Loss above which a run counts as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.99, eps: 1e-10 }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::adam()
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Optimizer::Sgd => write!(f, "sgd"),
            Optimizer::Adam { beta1, beta2, eps } => write!(f, "adam:beta1={beta1},beta2={beta2},eps={eps}"),
        }
    }
}

impl FromStr for Optimizer {
    type Err = TrainError;

    /// `sgd`, `adam`, or `adam:beta1=..,beta2=..,eps=..` with any subset of keys.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || TrainError::Config(format!("unknown optimizer `{s}`"));
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        match kind.trim() {
            "sgd" if args.is_empty() => Ok(Optimizer::Sgd),
            "adam" => {
                let Optimizer::Adam { mut beta1, mut beta2, mut eps } = Optimizer::adam() else { unreachable!() };
                for kv in args.split(',').filter(|a| !a.trim().is_empty()) {
                    let (k, v) = kv.split_once('=').ok_or_else(bad)?;
                    let v: f64 = v.trim().parse().map_err(|_| bad())?;
                    match k.trim() {
                        "beta1" => beta1 = v,
                        "beta2" => beta2 = v,
                        "eps" => eps = v,
                        _ => return Err(bad()),
                    }
                }
                Ok(Optimizer::Adam { beta1, beta2, eps })
            }
            _ => Err(bad()),
        }
    }
}

/// Optimizer state; Adam moments start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub optimizer: Optimizer,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimState {
    pub fn new(optimizer: Optimizer, n_params: usize) -> Self {
        let n = if matches!(optimizer, Optimizer::Adam { .. }) { n_params } else { 0 };
        Self { optimizer, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One in-place update of `params` from `grad`.
pub fn opt_step(state: &mut OptimState, params: &mut [f64], grad: &[f64], lr: f64) {
    assert_eq!(params.len(), grad.len(), "parameter/gradient length mismatch");
    state.t += 1;
    match state.optimizer {
        Optimizer::Sgd => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            assert_eq!(state.m.len(), params.len(), "optimizer state sized for another model");
            let bc1 = 1.0 - beta1.powf(state.t as f64);
            let bc2 = 1.0 - beta2.powf(state.t as f64);
            for i in 0..params.len() {
                let g = grad[i];
                let m = beta1 * state.m[i] + (1.0 - beta1) * g;
                let v = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                state.m[i] = m;
                state.v[i] = v;
                params[i] -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            }
        }
    }
}

/// Epoch sampler: each epoch is a fresh shuffle of all indices, consumed in
/// contiguous chunks. The last chunk of an epoch is shorter when `batch_size`
/// does not divide the pixel count. Full batch yields `0..n` every step.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
    full: bool,
}

impl BatchSampler {
    pub fn new(seed: u64, n_pixels: usize, batch_size: usize) -> Self {
        assert!(batch_size >= 1 && batch_size <= n_pixels, "batch size must be in 1..=n_pixels");
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n_pixels).collect(),
            batch_size,
            cursor: n_pixels,
            full: batch_size == n_pixels,
        }
    }

    pub fn is_full_batch(&self) -> bool {
        self.full
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.full {
            return &self.order;
        }
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let start = self.cursor;
        let end = (start + self.batch_size).min(self.order.len());
        self.cursor = end;
        &self.order[start..end]
    }
}

/// Everything that defines a single training run except the learning rate.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub arch: ArchSpec,
    pub transform: Transform,
    /// Pixels per step; `None` is full batch.
    pub batch_size: Option<usize>,
    pub target_psnr: f64,
    /// Ascending dB checkpoints; always contains `target_psnr`.
    pub thresholds: Vec<f64>,
    pub max_steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

pub const DEFAULT_THRESHOLDS: [f64; 4] = [20.0, 30.0, 40.0, 50.0];

impl RunConfig {
    /// Desk defaults: full batch, 40 dB target, 20000 steps, evaluation every 10.
    pub fn new(arch: ArchSpec, transform: Transform) -> Self {
        Self {
            arch,
            transform,
            batch_size: None,
            target_psnr: 40.0,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            max_steps: 20_000,
            eval_every: 10,
            seed: 0,
            optimizer: Optimizer::default(),
        }
    }

    /// Set the target and make sure it is one of the thresholds.
    pub fn with_target(mut self, db: f64) -> Self {
        self.target_psnr = db;
        self.thresholds = normalize_thresholds(&self.thresholds, db);
        self
    }

    pub fn validate(&self, n_pixels: usize) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if let Some(b) = self.batch_size {
            if b == 0 || b > n_pixels {
                return bad(format!("batch size {b} outside 1..={n_pixels}"));
            }
        }
        if !self.thresholds.windows(2).all(|w| w[0] < w[1]) {
            return bad("thresholds must be strictly ascending".into());
        }
        if !self.thresholds.contains(&self.target_psnr) {
            return bad(format!("thresholds do not include the target {}", self.target_psnr));
        }
        Ok(())
    }
}

/// Sorted, deduplicated thresholds with `target` inserted.
pub fn normalize_thresholds(thresholds: &[f64], target: f64) -> Vec<f64> {
    let mut t: Vec<f64> = thresholds.iter().copied().chain([target]).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Converged,
    /// Hit `max_steps` without reaching the target.
    Dnf,
    /// Non-finite or exploding loss.
    Diverged,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::Dnf => "dnf",
            RunStatus::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    /// Full-grid MSE in the transformed domain.
    pub loss: f64,
    pub psnr_recon_db: f64,
    pub psnr_transformed_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdHit {
    pub db: f64,
    pub step: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub lr: f64,
    pub status: RunStatus,
    pub hits: Vec<ThresholdHit>,
    pub curve: Vec<CurvePoint>,
    pub init_params: ParamVector,
    /// Parameters at each threshold's first hit, in threshold order.
    pub snapshots: Vec<(f64, ParamVector)>,
    pub final_params: ParamVector,
}

impl RunRecord {
    pub fn converged(&self) -> bool {
        self.status == RunStatus::Converged
    }

    pub fn first_hit(&self, db: f64) -> Option<usize> {
        self.hits.iter().find(|h| h.db == db).and_then(|h| h.step)
    }

    pub fn snapshot(&self, db: f64) -> Option<&ParamVector> {
        self.snapshots.iter().find(|(d, _)| *d == db).map(|(_, p)| p)
    }

    /// Steps to the target, `None` for DNF or divergence.
    pub fn cost(&self, target_psnr: f64) -> Option<usize> {
        if self.converged() {
            self.first_hit(target_psnr)
        } else {
            None
        }
    }

    /// Curve as CSV with header `step,loss,psnr_recon_db,psnr_transformed_db`.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("step,loss,psnr_recon_db,psnr_transformed_db\n");
        for p in &self.curve {
            s.push_str(&format!("{},{:e},{},{}\n", p.step, p.loss, p.psnr_recon_db, p.psnr_transformed_db));
        }
        s
    }
}

/// Full-grid evaluation of predictions in the transformed domain.
pub fn evaluate(
    transform: &Transform,
    original: &Image,
    target: &Image,
    predictions: &[f64],
) -> Result<CurvePoint> {
    let pred = target.with_pixels(predictions.to_vec());
    let loss = crate::signal::mse_slices(predictions, &target.pixels);
    let recon = reconstruct(transform, &pred)?;
    let recon_mse = crate::signal::mse_slices(&recon.pixels, &original.pixels);
    Ok(CurvePoint { step: 0, loss, psnr_recon_db: psnr(recon_mse), psnr_transformed_db: psnr(loss) })
}

/// Train from a seeded initialization until the reconstruction reaches the
/// target PSNR or the step budget runs out.
pub fn train_to_target(original: &Image, config: &RunConfig, lr: f64) -> Result<RunRecord> {
    let init = init_params(&config.arch, config.seed);
    train_from(original, config, lr, init)
}

/// [`train_to_target`] from given initial parameters.
pub fn train_from(original: &Image, config: &RunConfig, lr: f64, init: ParamVector) -> Result<RunRecord> {
    if !original.is_square() {
        return Err(TrainError::Config(format!("image must be square, got {}x{}", original.width, original.height)));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(TrainError::Config(format!("learning rate must be positive, got {lr}")));
    }
    let n = original.len();
    config.validate(n)?;
    if init.len() != config.arch.param_count() {
        return Err(ModelError::ParamCount { expected: config.arch.param_count(), got: init.len() }.into());
    }

    let target = apply(&config.transform, original)?;
    let grid = coord_grid(original.width, original.height, config.arch.domain());
    let net = Network::new(&config.arch);
    let mut sampler = BatchSampler::new(
        crate::stream_seed(config.seed, "batches"),
        n,
        config.batch_size.unwrap_or(n),
    );
    let full = sampler.is_full_batch();

    let mut params = init.values.clone();
    let mut grad = vec![0.0; params.len()];
    let mut state = OptimState::new(config.optimizer, params.len());
    let mut ws = Workspace::default();
    let mut eval_ws = Workspace::default();
    let mut batch_coords: Vec<[f64; 2]> = Vec::new();
    let mut batch_targets: Vec<f64> = Vec::new();

    let mut hits: Vec<ThresholdHit> = config.thresholds.iter().map(|&db| ThresholdHit { db, step: None }).collect();
    let mut snapshots = Vec::new();
    let mut curve = Vec::new();
    let mut status = RunStatus::Dnf;

    let mut step = 0;
    loop {
        let evaluate_now = step % config.eval_every == 0 || step == config.max_steps;
        let at_budget = step >= config.max_steps;
        let need_grad = !at_budget;

        // Gradient at the current parameters; in full-batch mode its forward
        // pass doubles as the evaluation.
        let mut batch_loss = None;
        if need_grad {
            let loss = if full {
                net.loss_and_grad(&params, &grid.coords, &target.pixels, &mut grad, &mut ws)?
            } else {
                let idx = sampler.next_batch();
                batch_coords.clear();
                batch_targets.clear();
                batch_coords.extend(idx.iter().map(|&i| grid.coords[i]));
                batch_targets.extend(idx.iter().map(|&i| target.pixels[i]));
                net.loss_and_grad(&params, &batch_coords, &batch_targets, &mut grad, &mut ws)?
            };
            batch_loss = Some(loss);
        }

        if evaluate_now {
            let preds = if full && need_grad {
                ws.predictions()
            } else {
                net.forward(&params, &grid.coords, &mut eval_ws)?;
                eval_ws.predictions()
            };
            let mut point = evaluate(&config.transform, original, &target, preds)?;
            point.step = step;
            curve.push(point);
            let mut newly_hit = false;
            for h in hits.iter_mut().filter(|h| h.step.is_none()) {
                if point.psnr_recon_db >= h.db {
                    h.step = Some(step);
                    newly_hit = true;
                }
            }
            if newly_hit {
                for h in &hits {
                    if h.step == Some(step) {
                        snapshots.push((h.db, ParamVector { values: params.clone(), layout: init.layout.clone() }));
                    }
                }
            }
            if !point.loss.is_finite() || point.loss > DIVERGENCE_LOSS {
                status = RunStatus::Diverged;
                break;
            }
            if hits.iter().any(|h| h.db == config.target_psnr && h.step.is_some()) {
                status = RunStatus::Converged;
                break;
            }
        }
        if at_budget {
            break;
        }
        let loss = batch_loss.expect("gradient computed before budget");
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            status = RunStatus::Diverged;
            break;
        }
        opt_step(&mut state, &mut params, &grad, lr);
        step += 1;
    }

    Ok(RunRecord {
        lr,
        status,
        hits,
        curve,
        snapshots,
        final_params: ParamVector { values: params, layout: init.layout.clone() },
        init_params: init,
    })
}
