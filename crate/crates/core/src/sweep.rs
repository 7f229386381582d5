//! Learning-rate sweeps, acceleration factors and resumable studies.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::models::ArchSpec;
use crate::signal::{Image, ImageSource};
use crate::stream_seed;
use crate::training::{
    normalize_thresholds, train_to_target, Optimizer, RunConfig, RunRecord, RunStatus, TrainError,
    DEFAULT_THRESHOLDS,
};
use crate::transforms::TransformSpec;

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("invalid study manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, SweepError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SweepError + '_ {
    move |source| SweepError::Io { path: path.to_path_buf(), source }
}

/// Outcome of one learning rate within a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrOutcome {
    pub lr: f64,
    pub status: RunStatus,
    /// Steps to the target when converged.
    pub steps: Option<usize>,
    /// Step budget when the run was cut short by pruning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruned_at: Option<usize>,
}

/// Fewest converged steps; ties go to the larger learning rate.
pub fn select_best(grid: &[LrOutcome]) -> Option<(f64, usize)> {
    grid.iter()
        .filter_map(|o| o.steps.map(|s| (o.lr, s)))
        .min_by(|a, b| a.1.cmp(&b.1).then(b.0.total_cmp(&a.0)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepOptions {
    /// Cap each later run at the best step count found so far. The selected
    /// `(best_lr, cost)` is unchanged; the grid table marks capped runs.
    pub prune: bool,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub grid: Vec<LrOutcome>,
    pub best: Option<(f64, usize)>,
    /// Full record of the best run.
    pub best_run: Option<RunRecord>,
}

impl SweepOutcome {
    pub fn best_lr(&self) -> Option<f64> {
        self.best.map(|b| b.0)
    }

    pub fn cost(&self) -> Option<usize> {
        self.best.map(|b| b.1)
    }
}

/// Train once per learning rate and keep the cheapest converged run.
///
/// Grid points run from the largest learning rate down; the grid table is
/// reported in the caller's order.
pub fn lr_sweep(image: &Image, config: &RunConfig, grid: &[f64], opts: SweepOptions) -> Result<SweepOutcome> {
    if grid.is_empty() {
        return Err(SweepError::Manifest("empty learning-rate grid".into()));
    }
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));

    let mut outcomes: Vec<Option<LrOutcome>> = vec![None; grid.len()];
    let mut best: Option<(f64, usize)> = None;
    let mut best_run: Option<RunRecord> = None;
    for i in order {
        let lr = grid[i];
        let mut cfg = config.clone();
        let mut pruned_at = None;
        if opts.prune {
            if let Some((_, s)) = best {
                // Only a strictly smaller count can beat a larger lr, and an
                // unpruned run only records hits on the evaluation grid.
                if s == 0 {
                    outcomes[i] = Some(LrOutcome { lr, status: RunStatus::Dnf, steps: None, pruned_at: Some(0) });
                    continue;
                }
                let cap = (s - 1) / cfg.eval_every * cfg.eval_every;
                if cap < cfg.max_steps {
                    cfg.max_steps = cap;
                    pruned_at = Some(cap);
                }
            }
        }
        let rec = train_to_target(image, &cfg, lr)?;
        let steps = rec.cost(cfg.target_psnr);
        let outcome = LrOutcome {
            lr,
            status: rec.status,
            steps,
            pruned_at: if steps.is_none() { pruned_at } else { None },
        };
        if let Some(s) = steps {
            let better = match best {
                None => true,
                Some((blr, bs)) => s < bs || (s == bs && lr > blr),
            };
            if better {
                best = Some((lr, s));
                best_run = Some(rec);
            }
        }
        outcomes[i] = Some(outcome);
    }
    let grid: Vec<LrOutcome> = outcomes.into_iter().map(|o| o.expect("every grid point visited")).collect();
    debug_assert_eq!(select_best(&grid), best);
    Ok(SweepOutcome { grid, best, best_run })
}

/// `cost(Id) / cost(T)`; undefined when either run did not converge.
pub fn acceleration(cost_id: Option<usize>, cost_t: Option<usize>) -> Option<f64> {
    match (cost_id, cost_t) {
        (Some(a), Some(b)) if b > 0 => Some(a as f64 / b as f64),
        (Some(0), Some(0)) => Some(1.0),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Mean of per-image ratios.
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub count: usize,
    pub excluded: usize,
}

/// Mean of defined factors; undefined entries are counted as exclusions.
pub fn aggregate(factors: &[Option<f64>]) -> Aggregate {
    let mut defined: Vec<f64> = factors.iter().flatten().copied().collect();
    let excluded = factors.len() - defined.len();
    if defined.is_empty() {
        return Aggregate { mean: None, median: None, count: 0, excluded };
    }
    defined.sort_by(f64::total_cmp);
    let n = defined.len();
    let mean = defined.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 { defined[n / 2] } else { 0.5 * (defined[n / 2 - 1] + defined[n / 2]) };
    Aggregate { mean: Some(mean), median: Some(median), count: n, excluded }
}

/// Pixels per step in a study: an explicit count or the whole image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BatchSize {
    Full,
    Pixels(usize),
}

impl BatchSize {
    pub fn resolve(&self, n_pixels: usize) -> Option<usize> {
        match *self {
            BatchSize::Full => None,
            BatchSize::Pixels(b) if b >= n_pixels => None,
            BatchSize::Pixels(b) => Some(b),
        }
    }
}

impl fmt::Display for BatchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchSize::Full => write!(f, "full"),
            BatchSize::Pixels(b) => write!(f, "{b}"),
        }
    }
}

impl FromStr for BatchSize {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "full" => Ok(BatchSize::Full),
            t => match t.parse::<usize>() {
                Ok(b) if b > 0 => Ok(BatchSize::Pixels(b)),
                _ => Err(SweepError::Manifest(format!("bad batch size `{s}`"))),
            },
        }
    }
}

impl Serialize for BatchSize {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BatchSize::Full => s.serialize_str("full"),
            BatchSize::Pixels(b) => s.serialize_u64(*b as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) if n > 0 => Ok(BatchSize::Pixels(n as usize)),
            Raw::N(_) => Err(serde::de::Error::custom("batch size must be positive")),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

fn default_max_steps() -> usize {
    20_000
}

fn default_eval_every() -> usize {
    10
}

fn default_thresholds() -> Vec<f64> {
    DEFAULT_THRESHOLDS.to_vec()
}

/// Study description, read from TOML.
///
/// ```toml
/// images = ["synth:seed=1,size=64,exp=1", "photos/kodim01.png"]
/// transforms = ["identity", "rpp", "inversion"]
/// archs = ["siren-small"]
/// batch_sizes = ["full", 256]
/// lr_grid = [1e-3, 5e-4]     # optional; defaults to the architecture's grid
/// target_psnr = 40.0
/// seed = 0
/// ```
///
/// Optional keys: `max_steps`, `eval_every`, `optimizer`, `thresholds`,
/// `crop`, `srgb` (convert to linear intensities) and `prune`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyManifest {
    pub images: Vec<ImageSource>,
    pub transforms: Vec<TransformSpec>,
    pub archs: Vec<ArchSpec>,
    pub batch_sizes: Vec<BatchSize>,
    #[serde(default)]
    pub lr_grid: Option<Vec<f64>>,
    pub target_psnr: f64,
    pub seed: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default, with = "optimizer_text")]
    pub optimizer: Optimizer,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default)]
    pub crop: Option<usize>,
    #[serde(default)]
    pub srgb: bool,
    #[serde(default)]
    pub prune: bool,
}

mod optimizer_text {
    use super::Optimizer;

    pub fn serialize<S: serde::Serializer>(o: &Optimizer, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(o)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Optimizer, D::Error> {
        <String as serde::Deserialize>::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl StudyManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: StudyManifest = toml::from_str(text).map_err(|e| SweepError::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SweepError::Manifest(m.to_string()));
        if self.images.is_empty() || self.transforms.is_empty() || self.archs.is_empty() || self.batch_sizes.is_empty() {
            return bad("images, transforms, archs and batch_sizes must be non-empty");
        }
        if let Some(g) = &self.lr_grid {
            if g.is_empty() || g.iter().any(|lr| !(*lr > 0.0 && lr.is_finite())) {
                return bad("lr_grid must hold positive learning rates");
            }
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if !self.target_psnr.is_finite() {
            return bad("target_psnr must be finite");
        }
        Ok(())
    }

    pub fn grid_for(&self, arch: &ArchSpec) -> Vec<f64> {
        self.lr_grid.clone().unwrap_or_else(|| arch.default_lr_grid())
    }

    /// Cells in manifest order: image-major, then transform, arch, batch.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for image in &self.images {
            for transform in &self.transforms {
                for arch in &self.archs {
                    for batch in &self.batch_sizes {
                        out.push(CellKey { image: image.clone(), transform: *transform, arch: *arch, batch: *batch });
                    }
                }
            }
        }
        out
    }

    /// Training configuration of one cell; the initialization seed depends on
    /// image and architecture only, so every transform starts from the same
    /// parameters.
    pub fn run_config(&self, key: &CellKey, image: &Image) -> Result<RunConfig> {
        let transform = key.transform.build(image, rpp_seed(self.seed, &key.image)).map_err(TrainError::from)?;
        Ok(RunConfig {
            arch: key.arch,
            transform,
            batch_size: key.batch.resolve(image.len()),
            target_psnr: self.target_psnr,
            thresholds: normalize_thresholds(&self.thresholds, self.target_psnr),
            max_steps: self.max_steps,
            eval_every: self.eval_every,
            seed: init_seed(self.seed, &key.image, &key.arch),
            optimizer: self.optimizer,
        })
    }
}

/// Seed of the random permutation for `image`, shared by every cell on it.
pub fn rpp_seed(seed: u64, image: &ImageSource) -> u64 {
    stream_seed(seed, &format!("rpp|{image}"))
}

/// Initialization seed; depends on image and architecture only.
pub fn init_seed(seed: u64, image: &ImageSource, arch: &ArchSpec) -> u64 {
    stream_seed(seed, &format!("init|{image}|{arch}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellKey {
    pub image: ImageSource,
    pub transform: TransformSpec,
    pub arch: ArchSpec,
    pub batch: BatchSize,
}

impl CellKey {
    pub fn label(&self) -> String {
        format!("{}|{}|{}|{}", self.image, self.transform, self.arch, self.batch)
    }

    /// Stable file stem for the cell record.
    pub fn file_stem(&self) -> String {
        format!("{:016x}", stream_seed(0, &self.label()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Converged,
    Dnf,
    Error,
}

impl CellStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellStatus::Converged => "converged",
            CellStatus::Dnf => "dnf",
            CellStatus::Error => "error",
        }
    }
}

/// Persisted result of one sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub image: String,
    pub transform: String,
    pub arch: String,
    pub batch: String,
    pub status: CellStatus,
    pub best_lr: Option<f64>,
    pub cost_steps: Option<usize>,
    pub grid: Vec<LrOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CellRecord {
    fn new(key: &CellKey, status: CellStatus) -> Self {
        Self {
            image: key.image.to_string(),
            transform: key.transform.to_string(),
            arch: key.arch.to_string(),
            batch: key.batch.to_string(),
            status,
            best_lr: None,
            cost_steps: None,
            grid: Vec::new(),
            error: None,
        }
    }
}

/// Write via a sibling temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct StudyRow {
    pub cell: CellRecord,
    pub acceleration: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub transform: String,
    pub arch: String,
    pub batch: String,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    pub summary: Vec<SummaryRow>,
    /// Cells computed by this invocation (not loaded from disk).
    pub new_cells: usize,
    /// Training runs performed by this invocation.
    pub new_runs: usize,
}

impl StudyResult {
    pub fn study_csv(&self) -> String {
        let mut s = String::from("image,transform,arch,batch,best_lr,cost_steps,status,acceleration\n");
        for r in &self.rows {
            let c = &r.cell;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                csv_field(&c.image),
                csv_field(&c.transform),
                csv_field(&c.arch),
                c.batch,
                c.best_lr.map(|v| format!("{v:e}")).unwrap_or_default(),
                c.cost_steps.map(|v| v.to_string()).unwrap_or_default(),
                c.status.as_str(),
                r.acceleration.map(|v| format!("{v:.6}")).unwrap_or_default(),
            ));
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("transform,arch,batch,mean_acceleration,median_acceleration,n_images,excluded\n");
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for r in &self.summary {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                csv_field(&r.transform),
                csv_field(&r.arch),
                r.batch,
                fmt(r.aggregate.mean),
                fmt(r.aggregate.median),
                r.aggregate.count,
                r.aggregate.excluded,
            ));
        }
        s
    }
}

/// Quote a CSV field when it contains separators.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn run_cell(manifest: &StudyManifest, key: &CellKey, image: &std::result::Result<Image, String>) -> (CellRecord, usize) {
    let image = match image {
        Ok(img) => img,
        Err(e) => {
            let mut rec = CellRecord::new(key, CellStatus::Error);
            rec.error = Some(e.clone());
            return (rec, 0);
        }
    };
    let grid = manifest.grid_for(&key.arch);
    let outcome = manifest
        .run_config(key, image)
        .and_then(|cfg| lr_sweep(image, &cfg, &grid, SweepOptions { prune: manifest.prune }));
    match outcome {
        Ok(o) => {
            let status = if o.best.is_some() { CellStatus::Converged } else { CellStatus::Dnf };
            let mut rec = CellRecord::new(key, status);
            rec.best_lr = o.best_lr();
            rec.cost_steps = o.cost();
            rec.grid = o.grid;
            (rec, grid.len())
        }
        Err(e) => {
            let mut rec = CellRecord::new(key, CellStatus::Error);
            rec.error = Some(e.to_string());
            (rec, 0)
        }
    }
}

/// Execute every cell of the study under `dir`, skipping cells whose record
/// already exists. Writes `cells/<id>.json`, `study.csv` and `summary.csv`.
pub fn run_study(manifest: &StudyManifest, dir: &Path, workers: usize) -> Result<StudyResult> {
    manifest.validate()?;
    let cell_dir = dir.join("cells");
    std::fs::create_dir_all(&cell_dir).map_err(io_err(&cell_dir))?;
    let keys = manifest.cells();
    let path_of = |k: &CellKey| cell_dir.join(format!("{}.json", k.file_stem()));
    let pending: Vec<usize> = (0..keys.len()).filter(|&i| !path_of(&keys[i]).exists()).collect();

    let mut images: HashMap<String, std::result::Result<Image, String>> = HashMap::new();
    for i in &pending {
        let src = &keys[*i].image;
        images
            .entry(src.to_string())
            .or_insert_with(|| src.load(manifest.crop, manifest.srgb).map_err(|e| e.to_string()));
    }

    let next = AtomicUsize::new(0);
    let runs = AtomicUsize::new(0);
    let first_error: Mutex<Option<SweepError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(pending.len().max(1)) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = pending.get(j) else { break };
                let key = &keys[i];
                let (rec, n) = run_cell(manifest, key, &images[&key.image.to_string()]);
                runs.fetch_add(n, Ordering::SeqCst);
                let json = serde_json::to_vec_pretty(&rec).expect("cell record serializes");
                if let Err(e) = write_atomic(&path_of(key), &json) {
                    first_error.lock().unwrap().get_or_insert(e);
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }

    let mut cells = Vec::with_capacity(keys.len());
    for k in &keys {
        let p = path_of(k);
        let text = std::fs::read(&p).map_err(io_err(&p))?;
        let rec: CellRecord =
            serde_json::from_slice(&text).map_err(|e| SweepError::Manifest(format!("{}: {e}", p.display())))?;
        cells.push(rec);
    }
    let result = assemble(manifest, &keys, cells, pending.len(), runs.into_inner());
    write_atomic(&dir.join("study.csv"), result.study_csv().as_bytes())?;
    write_atomic(&dir.join("summary.csv"), result.summary_csv().as_bytes())?;
    Ok(result)
}

fn assemble(manifest: &StudyManifest, keys: &[CellKey], cells: Vec<CellRecord>, new_cells: usize, new_runs: usize) -> StudyResult {
    let identity_cost: HashMap<(String, String, String), Option<usize>> = cells
        .iter()
        .zip(keys)
        .filter(|(_, k)| k.transform.is_identity())
        .map(|(c, _)| ((c.image.clone(), c.arch.clone(), c.batch.clone()), c.cost_steps))
        .collect();
    let rows: Vec<StudyRow> = cells
        .into_iter()
        .map(|cell| {
            let id = identity_cost.get(&(cell.image.clone(), cell.arch.clone(), cell.batch.clone()));
            let acceleration = id.and_then(|&c| acceleration(c, cell.cost_steps));
            StudyRow { cell, acceleration }
        })
        .collect();

    let mut summary = Vec::new();
    for t in &manifest.transforms {
        for a in &manifest.archs {
            for b in &manifest.batch_sizes {
                let (t, a, b) = (t.to_string(), a.to_string(), b.to_string());
                let factors: Vec<Option<f64>> = rows
                    .iter()
                    .filter(|r| r.cell.transform == t && r.cell.arch == a && r.cell.batch == b)
                    .map(|r| r.acceleration)
                    .collect();
                summary.push(SummaryRow { transform: t, arch: a, batch: b, aggregate: aggregate(&factors) });
            }
        }
    }
    StudyResult { rows, summary, new_cells, new_runs }
}
