//! `fieldlab` command-line interface.

mod analyze;
mod run;
mod svg;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use fieldlab::models::ArchSpec;
use fieldlab::signal::{encode_pgm, gen_synthetic, ImageSource};
use fieldlab::sweep::{run_study, BatchSize, StudyManifest};
use fieldlab::transforms::TransformSpec;
use sha2::{Digest, Sha256};

use crate::run::{FitConfig, LoadedRun, RunManifest};
use crate::svg::{emit_svg_plot, LinePlot, Plot, Series};

#[derive(Parser, Debug)]
#[command(name = "fieldlab", version, about = "Fit coordinate networks to transformed images and measure the cost")]
struct Cli {
    /// Master seed for initialization, permutations and batching.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory; nothing is written outside it.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Worker threads for sweeps and landscape grids.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one network (or sweep a few learning rates) and save the run directory.
    Fit(FitArgs),
    /// Run a study manifest: every image x transform x arch x batch cell.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Post-hoc analyses on images and run directories.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCmd,
    },
    /// Summarize run and study directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Write synthetic 1/f images as PGM files.
    GenData {
        #[arg(long, default_value_t = 5)]
        count: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 1.0)]
        exp: f64,
    },
}

#[derive(clap::Args, Debug)]
struct FitArgs {
    /// Re-run from a saved manifest.json; other fit flags are ignored.
    #[arg(long, conflicts_with = "image")]
    config: Option<PathBuf>,
    /// Image path or `synth:seed=N,size=S,exp=E`.
    #[arg(long, required_unless_present = "config")]
    image: Option<ImageSource>,
    #[arg(long, default_value = "identity")]
    transform: TransformSpec,
    #[arg(long, default_value = "siren-small")]
    arch: ArchSpec,
    /// Learning rate, or a comma-separated grid.
    #[arg(long, value_delimiter = ',', default_value = "1e-4")]
    lr: Vec<f64>,
    /// Skip grid points once they cannot beat the best so far.
    #[arg(long)]
    prune: bool,
    /// Pixels per step, or `full`.
    #[arg(long, default_value = "full")]
    batch: BatchSize,
    #[arg(long, default_value_t = 40.0)]
    target: f64,
    #[arg(long, value_delimiter = ',', default_values_t = run::default_thresholds())]
    thresholds: Vec<f64>,
    #[arg(long, default_value_t = 20_000)]
    max_steps: usize,
    #[arg(long, default_value_t = 10)]
    eval_every: usize,
    #[arg(long, default_value = "adam")]
    optimizer: String,
    /// Center-crop file images to this side length.
    #[arg(long)]
    crop: Option<usize>,
    /// Convert sRGB-encoded files to linear intensities.
    #[arg(long)]
    srgb: bool,
}

#[derive(Subcommand, Debug)]
enum AnalyzeCmd {
    /// High-frequency intensity per image and the averaged DCT map.
    Dct {
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<ImageSource>,
        #[arg(long, default_value = "identity")]
        transform: TransformSpec,
        #[arg(long)]
        crop: Option<usize>,
        #[arg(long)]
        srgb: bool,
    },
    /// Loss-surface slice through two checkpoints.
    Landscape {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "init")]
        from: String,
        #[arg(long, default_value = "final")]
        to: String,
        #[arg(long, value_parser = ["random", "eigen"], default_value = "random")]
        mode: String,
        #[arg(long, default_value_t = 51)]
        samples: usize,
    },
    /// Maximum loss on the straight segment between two checkpoints.
    Barrier {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long, default_value_t = 101)]
        samples: usize,
    },
    /// Variance of per-pixel squared errors at checkpoints.
    Variance {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "final")]
        at: Vec<String>,
    },
    /// Mean error per intensity bin and its rank correlation with intensity.
    Bins {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "final")]
        at: String,
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
}

struct Globals {
    seed: u64,
    out: PathBuf,
    workers: usize,
}

/// Atomic write; parent directories are created as needed.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fieldlab::sweep::write_atomic(path, bytes)?;
    Ok(())
}

fn fit_config(args: FitArgs, seed: u64) -> Result<FitConfig> {
    if let Some(path) = args.config {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        // Accept a full run manifest or a bare config object.
        let cfg = value.get("config").cloned().unwrap_or(value);
        return serde_json::from_value(cfg).with_context(|| format!("parsing {}", path.display()));
    }
    Ok(FitConfig {
        seed,
        image: args.image.ok_or_else(|| anyhow!("--image is required"))?,
        crop: args.crop,
        srgb: args.srgb,
        transform: args.transform,
        arch: args.arch,
        optimizer: args.optimizer,
        batch: args.batch,
        lr: args.lr,
        prune: args.prune,
        target_psnr: args.target,
        thresholds: args.thresholds,
        max_steps: args.max_steps,
        eval_every: args.eval_every,
    })
}

fn cmd_fit(args: FitArgs, cli: &Globals) -> Result<()> {
    let config = fit_config(args, cli.seed)?;
    let (dir, m) = run::fit(&config, &cli.out)?;
    println!("run {} -> {}", m.run_id, dir.display());
    println!("status {}", m.status);
    for h in &m.first_hits {
        match h.step {
            Some(s) => println!("  {:>5} dB at step {s}", h.db),
            None => println!("  {:>5} dB not reached", h.db),
        }
    }
    Ok(())
}

fn cmd_sweep(manifest: &Path, cli: &Globals) -> Result<()> {
    let text = std::fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let study = StudyManifest::from_toml(&text)?;
    let canonical = study.to_toml();
    let id: String = Sha256::digest(canonical.as_bytes()).iter().take(6).map(|b| format!("{b:02x}")).collect();
    let dir = cli.out.join(&id);
    write_file(&dir.join("manifest.toml"), canonical.as_bytes())?;
    let result = run_study(&study, &dir, cli.workers)?;
    println!("study {id} -> {} ({} new cells, {} training runs)", dir.display(), result.new_cells, result.new_runs);
    print!("{}", result.summary_csv());
    Ok(())
}

fn cmd_analyze(what: AnalyzeCmd, cli: &Globals) -> Result<()> {
    let out = &cli.out;
    let text = match what {
        AnalyzeCmd::Dct { images, transform, crop, srgb } => analyze::dct(&images, transform, crop, srgb, cli.seed, out)?,
        AnalyzeCmd::Landscape { run, from, to, mode, samples } => {
            let r = LoadedRun::open(&analyze::resolve_run(&run)?)?;
            analyze::landscape(&r, &from, &to, mode == "eigen", samples, cli.seed, cli.workers, out)?
        }
        AnalyzeCmd::Barrier { run, from, to, samples } => {
            let r = LoadedRun::open(&analyze::resolve_run(&run)?)?;
            analyze::barrier(&r, &from, &to, samples, out)?
        }
        AnalyzeCmd::Variance { run, at } => {
            let r = LoadedRun::open(&analyze::resolve_run(&run)?)?;
            analyze::variance(&r, &at, out)?
        }
        AnalyzeCmd::Bins { run, at, bins } => {
            let r = LoadedRun::open(&analyze::resolve_run(&run)?)?;
            analyze::bins(&r, &at, bins, out)?
        }
    };
    println!("{}", text.trim_end());
    Ok(())
}

fn read_curve(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut pts = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 3 {
            bail!("malformed row in {}: {line}", path.display());
        }
        pts.push((f[0].parse()?, f[2].parse()?));
    }
    Ok(pts)
}

fn cmd_report(dirs: &[PathBuf], cli: &Globals) -> Result<()> {
    let mut csv = String::from("run_id,image,transform,arch,batch,best_lr,status,cost_steps,final_psnr_db\n");
    let mut series = Vec::new();
    for d in dirs {
        if d.join("summary.csv").exists() {
            println!("study {}", d.display());
            print!("{}", std::fs::read_to_string(d.join("summary.csv"))?);
            continue;
        }
        let path = d.join("manifest.json");
        let m: RunManifest = serde_json::from_str(
            &std::fs::read_to_string(&path).with_context(|| format!("{} is neither a run nor a study directory", d.display()))?,
        )?;
        let c = &m.config;
        let opt = |v: Option<String>| v.unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            m.run_id,
            fieldlab::sweep::csv_field(&c.image.to_string()),
            fieldlab::sweep::csv_field(&c.transform.to_string()),
            fieldlab::sweep::csv_field(&c.arch.to_string()),
            c.batch,
            opt(m.best_lr.map(|v| v.to_string())),
            m.status,
            opt(m.cost_steps.map(|v| v.to_string())),
            opt(m.final_psnr_db.map(|v| v.to_string())),
        );
        series.push(Series { label: format!("{} {}", m.run_id, c.transform), points: read_curve(&d.join("metrics.csv"))? });
    }
    if !series.is_empty() {
        write_file(&cli.out.join("report.csv"), csv.as_bytes())?;
        let plot = Plot::Line(LinePlot {
            title: "Reconstruction PSNR".into(),
            x_label: "step".into(),
            y_label: "PSNR (dB)".into(),
            log_x: true,
            series,
        });
        emit_svg_plot(&plot, &cli.out.join("curves.svg"))?;
        print!("{csv}");
    }
    Ok(())
}

fn cmd_gen_data(count: u64, size: usize, exp: f64, cli: &Globals) -> Result<()> {
    for k in 0..count {
        let seed = cli.seed + k;
        let img = gen_synthetic(seed, size, size, exp)?;
        let path = cli.out.join(format!("synth_{seed}.pgm"));
        write_file(&path, &encode_pgm(&img, true)?)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn main() {
    let Cli { seed, out, workers, command } = Cli::parse();
    let g = Globals { seed, out, workers };
    let result = match command {
        Command::Fit(args) => cmd_fit(args, &g),
        Command::Sweep { manifest } => cmd_sweep(&manifest, &g),
        Command::Analyze { what } => cmd_analyze(what, &g),
        Command::Report { dirs } => cmd_report(&dirs, &g),
        Command::GenData { count, size, exp } => cmd_gen_data(count, size, exp, &g),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
