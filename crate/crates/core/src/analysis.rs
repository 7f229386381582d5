//! Diagnostics for trained fields: DCT spectra, loss barriers and landscape
//! slices, Hessian power iteration and per-pixel error statistics.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::models::{ArchSpec, ModelError, Network, ParamVector, Workspace};
use crate::signal::{coord_grid, psnr, Image, SignalError};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("expected {expected} values, got {got}")]
    WrongSize { expected: usize, got: usize },
    #[error("image {0}x{1} is not divisible into 8x8 patches")]
    NotDivisible(usize, usize),
    #[error("images differ in size")]
    SizeMismatch,
    #[error("no images given")]
    Empty,
    #[error("degenerate direction: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Orthonormal DCT-II basis, row `k` holds `c_k cos(π(2i+1)k / 2n)`.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let c = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            m[k * n + i] = c * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    m
}

/// `C·X·Cᵀ` (forward) or `Cᵀ·X·C` (inverse) for row-major `rows × cols` data.
fn separable(x: &[f64], rows: usize, cols: usize, cr: &[f64], cc: &[f64], inverse: bool) -> Vec<f64> {
    let at = |m: &[f64], n: usize, i: usize, j: usize| if inverse { m[j * n + i] } else { m[i * n + j] };
    let mut tmp = vec![0.0; rows * cols];
    for r in 0..rows {
        for k in 0..cols {
            let mut s = 0.0;
            for j in 0..cols {
                s += at(cc, cols, k, j) * x[r * cols + j];
            }
            tmp[r * cols + k] = s;
        }
    }
    let mut out = vec![0.0; rows * cols];
    for k in 0..rows {
        for c in 0..cols {
            let mut s = 0.0;
            for r in 0..rows {
                s += at(cr, rows, k, r) * tmp[r * cols + c];
            }
            out[k * cols + c] = s;
        }
    }
    out
}

fn block_dct(block: &[f64], inverse: bool) -> Result<[f64; 64]> {
    if block.len() != 64 {
        return Err(AnalysisError::WrongSize { expected: 64, got: block.len() });
    }
    let c = dct_matrix(8);
    let v = separable(block, 8, 8, &c, &c, inverse);
    Ok(v.try_into().expect("64 coefficients"))
}

/// Orthonormal 2D DCT-II of a row-major 8×8 block; `out[u*8+v]` has vertical
/// frequency `u` and horizontal frequency `v`.
pub fn dct2_block(block: &[f64]) -> Result<[f64; 64]> {
    block_dct(block, false)
}

pub fn idct2_block(coeffs: &[f64]) -> Result<[f64; 64]> {
    block_dct(coeffs, true)
}

/// Orthonormal DCT-II of a whole image.
pub fn dct2(img: &Image) -> Image {
    let (cr, cc) = (dct_matrix(img.height), dct_matrix(img.width));
    img.with_pixels(separable(&img.pixels, img.height, img.width, &cr, &cc, false))
}

pub fn idct2(coeffs: &Image) -> Image {
    let (cr, cc) = (dct_matrix(coeffs.height), dct_matrix(coeffs.width));
    coeffs.with_pixels(separable(&coeffs.pixels, coeffs.height, coeffs.width, &cr, &cc, true))
}

/// Mean over 8×8 patches of the squared DCT coefficients outside each
/// patch's low-frequency 4×4 quarter (`u ≥ 4` or `v ≥ 4`).
pub fn hf_intensity(img: &Image) -> Result<f64> {
    if img.width % 8 != 0 || img.height % 8 != 0 || img.is_empty() {
        return Err(AnalysisError::NotDivisible(img.width, img.height));
    }
    let c = dct_matrix(8);
    let mut block = [0.0; 64];
    let mut total = 0.0;
    let mut patches = 0usize;
    for by in (0..img.height).step_by(8) {
        for bx in (0..img.width).step_by(8) {
            // Shifting by a constant only moves DC, which the metric ignores;
            // it makes flat patches contribute exactly zero.
            let base = img.pixels[by * img.width + bx];
            for r in 0..8 {
                let row = (by + r) * img.width + bx;
                for c in 0..8 {
                    block[r * 8 + c] = img.pixels[row + c] - base;
                }
            }
            let coeffs = separable(&block, 8, 8, &c, &c, false);
            for u in 0..8 {
                for v in 0..8 {
                    if u >= 4 || v >= 4 {
                        total += coeffs[u * 8 + v] * coeffs[u * 8 + v];
                    }
                }
            }
            patches += 1;
        }
    }
    Ok(total / patches as f64)
}

/// Mean absolute full-image DCT across `images`, each entry raised to 0.03.
pub fn avg_dct_map(images: &[Image]) -> Result<Image> {
    let first = images.first().ok_or(AnalysisError::Empty)?;
    if !first.is_square() || images.iter().any(|i| i.width != first.width || i.height != first.height) {
        return Err(AnalysisError::SizeMismatch);
    }
    let mut acc = vec![0.0; first.len()];
    for img in images {
        for (a, c) in acc.iter_mut().zip(dct2(img).pixels) {
            *a += c.abs();
        }
    }
    let n = images.len() as f64;
    Ok(first.with_pixels(acc.into_iter().map(|a| (a / n).powf(0.03)).collect()))
}

/// Mean of the top-left quadrant divided by the global mean; 1 for a flat map.
pub fn low_frequency_concentration(map: &Image) -> f64 {
    let (h, w) = (map.height / 2, map.width / 2);
    let mut q = 0.0;
    for r in 0..h {
        q += map.pixels[r * map.width..r * map.width + w].iter().sum::<f64>();
    }
    let quad = q / (h * w) as f64;
    let global = map.pixels.iter().sum::<f64>() / map.len() as f64;
    quad / global
}

/// Full-image MSE of a network against a target, reusing buffers.
pub struct LossEvaluator {
    net: Network,
    coords: Vec<[f64; 2]>,
    target: Vec<f64>,
}

impl LossEvaluator {
    pub fn new(arch: &ArchSpec, target: &Image) -> Self {
        let grid = coord_grid(target.width, target.height, arch.domain());
        Self { net: Network::new(arch), coords: grid.coords, target: target.pixels.clone() }
    }

    pub fn loss(&self, params: &[f64], ws: &mut Workspace) -> Result<f64> {
        self.net.forward(params, &self.coords, ws)?;
        Ok(crate::signal::mse_slices(ws.predictions(), &self.target))
    }

    pub fn predictions(&self, params: &[f64]) -> Result<Vec<f64>> {
        let mut ws = Workspace::default();
        self.net.forward(params, &self.coords, &mut ws)?;
        Ok(ws.predictions().to_vec())
    }

    pub fn gradient(&self, params: &[f64], ws: &mut Workspace) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; params.len()];
        let loss = self.net.loss_and_grad(params, &self.coords, &self.target, &mut grad, ws)?;
        Ok((loss, grad))
    }
}

fn check_pair(arch: &ArchSpec, a: &ParamVector, b: &ParamVector) -> Result<()> {
    let n = arch.param_count();
    for p in [a, b] {
        if p.len() != n {
            return Err(ModelError::ParamCount { expected: n, got: p.len() }.into());
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Barrier {
    pub max_loss: f64,
    pub min_psnr_db: f64,
    pub t_at_max: f64,
    /// `(t, loss)` at every sample.
    pub path: Vec<(f64, f64)>,
}

/// Largest full-image loss on the segment `θ_A + t(θ_B − θ_A)`, `t = i/(n−1)`.
pub fn loss_barrier(
    arch: &ArchSpec,
    target: &Image,
    theta_a: &ParamVector,
    theta_b: &ParamVector,
    n_samples: usize,
) -> Result<Barrier> {
    if n_samples < 2 {
        return Err(AnalysisError::Invalid("barrier needs at least 2 samples".into()));
    }
    check_pair(arch, theta_a, theta_b)?;
    let eval = LossEvaluator::new(arch, target);
    let mut ws = Workspace::default();
    let mut theta = vec![0.0; theta_a.len()];
    let mut path = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let t = i as f64 / (n_samples - 1) as f64;
        for ((p, a), b) in theta.iter_mut().zip(&theta_a.values).zip(&theta_b.values) {
            *p = a + t * (b - a);
        }
        path.push((t, eval.loss(&theta, &mut ws)?));
    }
    let (t_at_max, max_loss) = path
        .iter()
        .copied()
        .fold((0.0, f64::NEG_INFINITY), |acc, (t, l)| if l > acc.1 || l.is_nan() { (t, l) } else { acc });
    Ok(Barrier { max_loss, min_psnr_db: psnr(max_loss), t_at_max, path })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianDirection {
    /// Unit-norm top eigenvector estimate.
    pub direction: Vec<f64>,
    pub eigenvalue: f64,
    /// Rayleigh quotient after each iteration.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Power iteration for the dominant Hessian eigenpair of a loss whose
/// gradient is `grad`, with central-difference Hessian-vector products
/// `(∇L(θ+εw) − ∇L(θ−εw)) / 2ε`, `ε = 1e−3/‖w‖`.
pub fn top_hessian_direction<G>(mut grad: G, theta: &[f64], iters: usize, tol: f64, seed: u64) -> Result<HessianDirection>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if iters == 0 {
        return Err(AnalysisError::Invalid("power iteration needs at least one iteration".into()));
    }
    let n = theta.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let wn = norm(&w);
    w.iter_mut().for_each(|x| *x /= wn);

    let mut probe = vec![0.0; n];
    let mut hvp = |w: &[f64], probe: &mut Vec<f64>| -> Result<Vec<f64>> {
        let eps = 1e-3 / norm(w);
        for i in 0..n {
            probe[i] = theta[i] + eps * w[i];
        }
        let plus = grad(probe)?;
        for i in 0..n {
            probe[i] = theta[i] - eps * w[i];
        }
        let minus = grad(probe)?;
        Ok(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * eps)).collect())
    };

    let mut history = Vec::with_capacity(iters);
    let mut converged = false;
    let mut hw = hvp(&w, &mut probe)?;
    for _ in 0..iters {
        let rq = dot(&w, &hw);
        let prev = history.last().copied();
        history.push(rq);
        let hn = norm(&hw);
        if !(hn > 0.0) || !hn.is_finite() {
            return Err(AnalysisError::Degenerate("Hessian-vector product vanished; power iteration did not converge".into()));
        }
        w = hw.iter().map(|x| x / hn).collect();
        hw = hvp(&w, &mut probe)?;
        if let Some(p) = prev {
            if (rq - p).abs() <= tol * rq.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }
    let eigenvalue = dot(&w, &hw);
    Ok(HessianDirection { direction: w, eigenvalue, history, converged })
}

/// [`top_hessian_direction`] of the full-image MSE of a network.
pub fn network_hessian_direction(
    arch: &ArchSpec,
    target: &Image,
    theta: &ParamVector,
    iters: usize,
    tol: f64,
    seed: u64,
) -> Result<HessianDirection> {
    let eval = LossEvaluator::new(arch, target);
    let mut ws = Workspace::default();
    top_hessian_direction(|p| Ok(eval.gradient(p, &mut ws)?.1), &theta.values, iters, tol, seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DirectionMode {
    /// Gaussian direction, orthogonalized against the anchor axis.
    Random { seed: u64 },
    /// Dominant Hessian eigenvector at `θ_B`.
    Eigen { iters: usize, tol: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub samples: usize,
}

impl Axis {
    pub fn value(&self, i: usize) -> f64 {
        if self.samples <= 1 {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.samples - 1) as f64
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.samples).map(|i| self.value(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceGrid {
    pub alpha: Axis,
    pub beta: Axis,
}

impl Default for SliceGrid {
    fn default() -> Self {
        Self {
            alpha: Axis { lo: -0.25, hi: 1.25, samples: 51 },
            beta: Axis { lo: -0.5, hi: 0.5, samples: 51 },
        }
    }
}

#[derive(Debug, Clone)]
pub struct LandscapeSlice {
    pub anchor: ParamVector,
    pub axis_u: Vec<f64>,
    pub axis_v: Vec<f64>,
    pub grid: SliceGrid,
    /// `loss[i][j]` at `alpha.value(j)`, `beta.value(i)`.
    pub loss: Vec<Vec<f64>>,
    pub psnr_db: Vec<Vec<f64>>,
}

impl LandscapeSlice {
    /// CSV with header `alpha,beta,loss,psnr_db`, beta-major.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,beta,loss,psnr_db\n");
        for (i, row) in self.loss.iter().enumerate() {
            for (j, l) in row.iter().enumerate() {
                s.push_str(&format!(
                    "{},{},{:e},{}\n",
                    self.grid.alpha.value(j),
                    self.grid.beta.value(i),
                    l,
                    self.psnr_db[i][j]
                ));
            }
        }
        s
    }
}

/// Loss surface on the plane `θ_A + α·u + β·v` with `u = θ_B − θ_A`.
pub fn landscape_slice(
    arch: &ArchSpec,
    target: &Image,
    theta_a: &ParamVector,
    theta_b: &ParamVector,
    mode: DirectionMode,
    grid: SliceGrid,
    workers: usize,
) -> Result<LandscapeSlice> {
    check_pair(arch, theta_a, theta_b)?;
    if grid.alpha.samples == 0 || grid.beta.samples == 0 {
        return Err(AnalysisError::Invalid("grid needs samples on both axes".into()));
    }
    let u: Vec<f64> = theta_b.values.iter().zip(&theta_a.values).map(|(b, a)| b - a).collect();
    let un = norm(&u);
    if !(un > 0.0) {
        return Err(AnalysisError::Degenerate("anchor points coincide".into()));
    }
    let mut v = match mode {
        DirectionMode::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v: Vec<f64> = (0..u.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let proj = dot(&v, &u) / (un * un);
            v.iter_mut().zip(&u).for_each(|(x, y)| *x -= proj * y);
            v
        }
        DirectionMode::Eigen { iters, tol, seed } => {
            network_hessian_direction(arch, target, theta_b, iters, tol, seed)?.direction
        }
    };
    let vn = norm(&v);
    if !(vn > 0.0) {
        return Err(AnalysisError::Degenerate("second direction vanished".into()));
    }
    v.iter_mut().for_each(|x| *x *= un / vn);

    let eval = LossEvaluator::new(arch, target);
    let rows = grid.beta.samples;
    let next = AtomicUsize::new(0);
    let results: Vec<std::sync::Mutex<Option<Result<Vec<f64>>>>> =
        (0..rows).map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, rows) {
            scope.spawn(|| {
                let mut ws = Workspace::default();
                let mut theta = vec![0.0; u.len()];
                loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= rows {
                        break;
                    }
                    let beta = grid.beta.value(i);
                    let row: Result<Vec<f64>> = (0..grid.alpha.samples)
                        .map(|j| {
                            let alpha = grid.alpha.value(j);
                            for k in 0..theta.len() {
                                theta[k] = theta_a.values[k] + alpha * u[k] + beta * v[k];
                            }
                            eval.loss(&theta, &mut ws)
                        })
                        .collect();
                    *results[i].lock().unwrap() = Some(row);
                }
            });
        }
    });
    let loss = results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("row evaluated"))
        .collect::<Result<Vec<_>>>()?;
    let psnr_db = loss.iter().map(|r| r.iter().map(|&l| psnr(l)).collect()).collect();
    Ok(LandscapeSlice { anchor: theta_a.clone(), axis_u: u, axis_v: v, grid, loss, psnr_db })
}

fn squared_errors(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    if pred.len() != target.len() {
        return Err(AnalysisError::WrongSize { expected: target.len(), got: pred.len() });
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).collect())
}

/// Population variance of per-pixel squared errors.
pub fn pixel_loss_variance(pred: &[f64], target: &[f64]) -> Result<f64> {
    let e = squared_errors(pred, target)?;
    if e.is_empty() {
        return Ok(0.0);
    }
    let n = e.len() as f64;
    let mean = e.iter().sum::<f64>() / n;
    Ok(e.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub mean_loss: Option<f64>,
}

/// Mean squared error per target-intensity bin; bin `b` is `[b/n, (b+1)/n)`
/// and the last bin also includes 1.
pub fn intensity_bins(pred: &[f64], target: &[f64], n_bins: usize) -> Result<Vec<BinStat>> {
    if n_bins == 0 {
        return Err(AnalysisError::Invalid("need at least one bin".into()));
    }
    let e = squared_errors(pred, target)?;
    let mut sum = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for (err, &t) in e.iter().zip(target) {
        if !(0.0..=1.0).contains(&t) {
            return Err(AnalysisError::Invalid(format!("target intensity {t} outside [0, 1]")));
        }
        let b = ((t * n_bins as f64) as usize).min(n_bins - 1);
        sum[b] += err;
        count[b] += 1;
    }
    Ok((0..n_bins)
        .map(|b| BinStat {
            lo: b as f64 / n_bins as f64,
            hi: (b + 1) as f64 / n_bins as f64,
            count: count[b],
            mean_loss: (count[b] > 0).then(|| sum[b] / count[b] as f64),
        })
        .collect())
}

/// Absolute error normalized by its maximum; all zero when the fit is exact.
pub fn error_map(pred: &Image, target: &Image) -> Result<Image> {
    pred.same_dims(target)?;
    let abs: Vec<f64> = pred.pixels.iter().zip(&target.pixels).map(|(p, t)| (p - t).abs()).collect();
    let max = abs.iter().copied().fold(0.0, f64::max);
    Ok(target.with_pixels(if max > 0.0 { abs.iter().map(|a| a / max).collect() } else { abs }))
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// side is constant or fewer than two pairs are given.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Spearman correlation between bin index and mean loss over non-empty bins.
pub fn bin_loss_correlation(bins: &[BinStat]) -> Option<f64> {
    let (idx, loss): (Vec<f64>, Vec<f64>) =
        bins.iter().enumerate().filter_map(|(i, b)| b.mean_loss.map(|l| (i as f64, l))).unzip();
    spearman(&idx, &loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_params;

    #[test]
    fn constant_block_has_only_dc() {
        let c = dct2_block(&[0.3; 64]).unwrap();
        assert!((c[0] - 8.0 * 0.3).abs() < 1e-12);
        assert!(c[1..].iter().all(|x| x.abs() < 1e-12));
        assert!(dct2_block(&[0.0; 63]).is_err());
    }

    #[test]
    fn checkerboard_energy_is_high_frequency() {
        let block: Vec<f64> = (0..64).map(|i| ((i / 8 + i % 8) % 2) as f64).collect();
        let c = dct2_block(&block).unwrap();
        let total_ac: f64 = c[1..].iter().map(|x| x * x).sum();
        // direct cosine sums as the oracle
        let basis = |k: usize, i: usize| {
            let s = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            s * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / 16.0).cos()
        };
        let mut outside = 0.0;
        for u in 0..8 {
            for v in 0..8 {
                let coeff: f64 = (0..64).map(|p| basis(u, p / 8) * basis(v, p % 8) * block[p]).sum();
                assert!((coeff - c[u * 8 + v]).abs() < 1e-12);
                if u >= 4 || v >= 4 {
                    outside += coeff * coeff;
                }
            }
        }
        let img = Image::new(8, 8, block).unwrap();
        let hf = hf_intensity(&img).unwrap();
        assert!((hf - outside).abs() < 1e-9);
        // odd-odd leakage into the low quarter is under 1% of the AC energy
        assert!(hf > 0.99 * total_ac && hf <= total_ac + 1e-12);
        assert!(c[63] * c[63] > 0.4 * total_ac);
    }

    #[test]
    fn hf_rejects_bad_sizes() {
        assert!(hf_intensity(&Image::filled(12, 8, 0.0)).is_err());
        assert_eq!(hf_intensity(&Image::filled(16, 8, 0.7)).unwrap(), 0.0);
    }

    #[test]
    fn full_dct_round_trip() {
        let img = crate::signal::gen_synthetic(2, 16, 16, 1.0).unwrap();
        let back = idct2(&dct2(&img));
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn avg_map_of_constant_image() {
        let m = avg_dct_map(&[Image::filled(4, 4, 0.5)]).unwrap();
        assert_eq!((m.width, m.height), (4, 4));
        assert!(m.pixels[0] > 0.0);
        // 0^0.03 = 0; tiny rounding residue raised to 0.03 stays well below the DC entry
        assert!(m.pixels[1..].iter().all(|&x| x < 0.5 * m.pixels[0]));
        assert!(avg_dct_map(&[]).is_err());
        assert!(avg_dct_map(&[Image::filled(4, 4, 0.0), Image::filled(8, 8, 0.0)]).is_err());
    }

    #[test]
    fn barrier_of_a_point_is_its_loss() {
        let arch = ArchSpec::siren(1, 8);
        let img = crate::signal::gen_synthetic(1, 8, 8, 1.0).unwrap();
        let p = init_params(&arch, 4);
        let b = loss_barrier(&arch, &img, &p, &p, 5).unwrap();
        let direct = crate::models::loss(&arch, &p, &coord_grid(8, 8, arch.domain()).coords, &img.pixels).unwrap();
        assert_eq!(b.max_loss, direct);
        assert_eq!(b.t_at_max, 0.0);
        assert!(loss_barrier(&arch, &img, &p, &p, 1).is_err());
    }

    #[test]
    fn power_iteration_on_diagonal_quadratic() {
        let a = [3.0, 1.0];
        let grad = |t: &[f64]| -> Result<Vec<f64>> { Ok(vec![a[0] * t[0], a[1] * t[1]]) };
        let h = top_hessian_direction(grad, &[0.2, -0.4], 200, 1e-14, 1).unwrap();
        assert!((h.eigenvalue - 3.0).abs() < 1e-4);
        assert!((norm(&h.direction) - 1.0).abs() < 1e-12);
        assert!(h.direction[0].abs() > 0.9999);
        assert!(h.history.windows(2).all(|w| w[1] >= w[0] - 1e-8));
        let flat = |_: &[f64]| -> Result<Vec<f64>> { Ok(vec![0.0, 0.0]) };
        assert!(top_hessian_direction(flat, &[0.0, 0.0], 10, 1e-9, 1).is_err());
    }

    #[test]
    fn variance_examples() {
        assert_eq!(pixel_loss_variance(&[0.1, 0.2, 0.3], &[0.2, 0.3, 0.4]).unwrap() < 1e-30, true);
        let e: f64 = 0.2;
        let v = pixel_loss_variance(&[e, e, 0.0, 0.0], &[0.0; 4]).unwrap();
        assert!((v - e.powi(4) / 4.0).abs() < 1e-18);
    }

    #[test]
    fn bins_boundaries() {
        let target = [0.0, 1.0, 0.0, 1.0];
        let pred = [0.1, 0.9, 0.1, 0.8];
        let bins = intensity_bins(&pred, &target, 16).unwrap();
        let nonempty: Vec<usize> = bins.iter().enumerate().filter(|(_, b)| b.count > 0).map(|(i, _)| i).collect();
        assert_eq!(nonempty, vec![0, 15]);
        let flat = intensity_bins(&[0.55, 0.15, 0.95], &[0.5, 0.1, 0.9], 4).unwrap();
        let losses: Vec<f64> = flat.iter().filter_map(|b| b.mean_loss).collect();
        assert!(losses.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-15));
        assert!(intensity_bins(&[0.0], &[1.5], 4).is_err());
    }

    #[test]
    fn error_map_examples() {
        let t = Image::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(error_map(&t, &t).unwrap().pixels.iter().all(|&x| x == 0.0));
        let mut p = t.clone();
        p.pixels[2] = 0.9;
        assert_eq!(error_map(&p, &t).unwrap().pixels, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), None);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }
}
