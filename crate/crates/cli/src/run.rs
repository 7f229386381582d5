//! `fit` and the run directory it produces.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fieldlab::analysis::LossEvaluator;
use fieldlab::models::{read_checkpoint, write_checkpoint, ArchSpec, ParamVector};
use fieldlab::signal::{encode_pgm, Image, ImageSource};
use fieldlab::sweep::{init_seed, lr_sweep, rpp_seed, BatchSize, SweepOptions};
use fieldlab::training::{normalize_thresholds, train_to_target, Optimizer, RunConfig, RunRecord, DEFAULT_THRESHOLDS};
use fieldlab::transforms::{apply, reconstruct, PermutationMap, Transform, TransformSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::svg::{emit_svg_plot, LinePlot, Plot, Series};
use crate::write_file;

/// Inputs that fully determine a run. The run id hashes this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub seed: u64,
    pub image: ImageSource,
    pub crop: Option<usize>,
    pub srgb: bool,
    pub transform: TransformSpec,
    pub arch: ArchSpec,
    pub optimizer: String,
    pub batch: BatchSize,
    /// One learning rate, or a grid to sweep.
    pub lr: Vec<f64>,
    pub prune: bool,
    pub target_psnr: f64,
    pub thresholds: Vec<f64>,
    pub max_steps: usize,
    pub eval_every: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HitEntry {
    pub db: f64,
    pub step: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub run_id: String,
    pub config: FitConfig,
    pub permutation_file: Option<String>,
    pub status: String,
    pub best_lr: Option<f64>,
    pub cost_steps: Option<usize>,
    pub first_hits: Vec<HitEntry>,
    pub final_psnr_db: Option<f64>,
}

impl FitConfig {
    pub fn run_id(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr.is_empty() || self.lr.iter().any(|lr| !(*lr > 0.0 && lr.is_finite())) {
            bail!("learning rates must be positive and finite");
        }
        if !self.target_psnr.is_finite() {
            bail!("target PSNR must be finite");
        }
        if self.eval_every == 0 {
            bail!("--eval-every must be at least 1");
        }
        self.optimizer.parse::<Optimizer>().map_err(|e| anyhow!("{e}"))?;
        Ok(())
    }

    pub fn load_image(&self) -> Result<Image> {
        self.image.load(self.crop, self.srgb).with_context(|| format!("loading image {}", self.image))
    }

    pub fn run_config(&self, image: &Image) -> Result<RunConfig> {
        let transform = self.transform.build(image, rpp_seed(self.seed, &self.image))?;
        Ok(RunConfig {
            arch: self.arch,
            transform,
            batch_size: self.batch.resolve(image.len()),
            target_psnr: self.target_psnr,
            thresholds: normalize_thresholds(&self.thresholds, self.target_psnr),
            max_steps: self.max_steps,
            eval_every: self.eval_every,
            seed: init_seed(self.seed, &self.image, &self.arch),
            optimizer: self.optimizer.parse().map_err(|e| anyhow!("{e}"))?,
        })
    }
}

pub fn default_thresholds() -> Vec<f64> {
    DEFAULT_THRESHOLDS.to_vec()
}

pub fn checkpoint_name(db: f64) -> String {
    format!("psnr{db}.nfld")
}

/// Execute a fit and write its run directory under `out`.
pub fn fit(config: &FitConfig, out: &Path) -> Result<(PathBuf, RunManifest)> {
    config.validate()?;
    let image = config.load_image()?;
    let run_cfg = config.run_config(&image)?;
    run_cfg.validate(image.len())?;
    // Fails early on transform preconditions such as negative intensities.
    apply(&run_cfg.transform, &image)?;

    let (best_lr, record) = if let [lr] = config.lr[..] {
        let r = train_to_target(&image, &run_cfg, lr)?;
        (r.converged().then_some(lr), r)
    } else {
        let outcome = lr_sweep(&image, &run_cfg, &config.lr, SweepOptions { prune: config.prune })?;
        match outcome.best_run {
            Some(r) => (outcome.best.map(|b| b.0), r),
            // Nothing converged: keep the first learning rate's run for inspection.
            None => (None, train_to_target(&image, &run_cfg, config.lr[0])?),
        }
    };

    let run_id = config.run_id();
    let dir = out.join(&run_id);
    std::fs::create_dir_all(dir.join("checkpoints")).with_context(|| format!("creating {}", dir.display()))?;

    write_file(&dir.join("metrics.csv"), record.metrics_csv().as_bytes())?;
    let permutation_file = match run_cfg.transform.permutation() {
        Some(p) => {
            write_file(&dir.join("permutation.txt"), p.to_text().as_bytes())?;
            Some("permutation.txt".to_string())
        }
        None => None,
    };
    let ck = dir.join("checkpoints");
    write_checkpoint(ck.join("init.nfld"), &config.arch, &record.init_params)?;
    for (db, params) in &record.snapshots {
        write_checkpoint(ck.join(checkpoint_name(*db)), &config.arch, params)?;
    }
    write_checkpoint(ck.join("final.nfld"), &config.arch, &record.final_params)?;

    let recon = reconstruct_image(&config.arch, &run_cfg.transform, &image, &record.final_params)?;
    write_file(&dir.join("recon.pgm"), &encode_pgm(&recon, true)?)?;
    let err = fieldlab::analysis::error_map(&recon, &image)?;
    write_file(&dir.join("error.pgm"), &encode_pgm(&err, true)?)?;
    emit_svg_plot(&curve_plot(&[(run_id.clone(), &record)]), &dir.join("curve.svg"))?;

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        run_id,
        config: config.clone(),
        permutation_file,
        status: record.status.as_str().to_string(),
        best_lr,
        cost_steps: record.cost(config.target_psnr),
        first_hits: record.hits.iter().map(|h| HitEntry { db: h.db, step: h.step }).collect(),
        final_psnr_db: record.curve.last().map(|p| p.psnr_recon_db),
    };
    write_file(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok((dir, manifest))
}

pub fn curve_plot(runs: &[(String, &RunRecord)]) -> Plot {
    Plot::Line(LinePlot {
        title: "Reconstruction PSNR".into(),
        x_label: "step".into(),
        y_label: "PSNR (dB)".into(),
        log_x: true,
        series: runs
            .iter()
            .map(|(label, r)| Series {
                label: label.clone(),
                points: r.curve.iter().map(|p| (p.step as f64, p.psnr_recon_db)).collect(),
            })
            .collect(),
    })
}

fn reconstruct_image(arch: &ArchSpec, t: &Transform, image: &Image, params: &ParamVector) -> Result<Image> {
    let pred = predictions(arch, image, params)?;
    Ok(reconstruct(t, &image.with_pixels(pred))?)
}

pub fn predictions(arch: &ArchSpec, image: &Image, params: &ParamVector) -> Result<Vec<f64>> {
    Ok(LossEvaluator::new(arch, image).predictions(&params.values)?)
}

/// A run directory reopened for analysis.
pub struct LoadedRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub original: Image,
    pub transform: Transform,
    /// What the network was fit to: the transformed image.
    pub target: Image,
}

impl LoadedRun {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let manifest: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let original = manifest.config.load_image()?;
        let mut transform = manifest.config.run_config(&original)?.transform;
        if let Some(f) = &manifest.permutation_file {
            let perm = PermutationMap::read(dir.join(f))?;
            transform = match transform {
                Transform::RandomPermutation(_) => Transform::RandomPermutation(perm),
                Transform::ZigzagPermutation(_) => Transform::ZigzagPermutation(perm),
                Transform::SpiralPermutation(_) => Transform::SpiralPermutation(perm),
                other => other,
            };
        }
        let target = apply(&transform, &original)?;
        Ok(Self { dir: dir.to_path_buf(), manifest, original, transform, target })
    }

    pub fn arch(&self) -> ArchSpec {
        self.manifest.config.arch
    }

    /// `init`, `final`, or a PSNR threshold in dB.
    pub fn checkpoint(&self, name: &str) -> Result<ParamVector> {
        let file = match name {
            "init" | "final" => format!("{name}.nfld"),
            db => {
                let v: f64 = db
                    .trim_end_matches("dB")
                    .trim_end_matches("db")
                    .parse()
                    .map_err(|_| anyhow!("checkpoint must be init, final or a dB threshold, got {db:?}"))?;
                match self.manifest.first_hits.iter().find(|h| h.db == v) {
                    None => bail!("run {} has no {v} dB threshold; configured: {:?}", self.manifest.run_id, self.thresholds()),
                    Some(HitEntry { step: None, .. }) => {
                        bail!("run {} never reached the {v} dB threshold, so it has no checkpoint", self.manifest.run_id)
                    }
                    Some(_) => checkpoint_name(v),
                }
            }
        };
        let path = self.dir.join("checkpoints").join(&file);
        let (arch, params) = read_checkpoint(&path).with_context(|| format!("reading {}", path.display()))?;
        if arch != self.arch() {
            bail!("checkpoint {} was written for {arch}, run uses {}", path.display(), self.arch());
        }
        Ok(params)
    }

    fn thresholds(&self) -> Vec<f64> {
        self.manifest.first_hits.iter().map(|h| h.db).collect()
    }

    pub fn predictions(&self, params: &ParamVector) -> Result<Vec<f64>> {
        predictions(&self.arch(), &self.target, params)
    }

    pub fn reconstruction(&self, params: &ParamVector) -> Result<Image> {
        reconstruct_image(&self.arch(), &self.transform, &self.target, params)
    }
}
