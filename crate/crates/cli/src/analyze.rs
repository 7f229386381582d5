//! `analyze` subcommands. Each writes CSV and SVG into the output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fieldlab::analysis::{
    avg_dct_map, bin_loss_correlation, hf_intensity, intensity_bins, landscape_slice, loss_barrier,
    low_frequency_concentration, pixel_loss_variance, Axis, DirectionMode, SliceGrid,
};
use fieldlab::signal::ImageSource;
use fieldlab::stream_seed;
use fieldlab::transforms::{apply, TransformSpec};

use crate::run::LoadedRun;
use crate::svg::{emit_svg_plot, Heatmap, LinePlot, Plot, Series};
use crate::write_file;

fn tag(name: &str) -> String {
    name.trim_end_matches("dB").trim_end_matches("db").to_string()
}

/// hf_intensity per image, optionally after a transform, plus the averaged DCT map.
pub fn dct(images: &[ImageSource], transform: TransformSpec, crop: Option<usize>, srgb: bool, seed: u64, out: &Path) -> Result<String> {
    if images.is_empty() {
        bail!("analyze dct needs at least one --images entry");
    }
    let mut csv = String::from("image,hf_intensity\n");
    let mut loaded = Vec::new();
    let mut report = String::new();
    for src in images {
        let img = src.load(crop, srgb).with_context(|| format!("loading {src}"))?;
        let t = transform.build(&img, fieldlab::sweep::rpp_seed(seed, src))?;
        let img = apply(&t, &img)?;
        let hf = hf_intensity(&img)?;
        let _ = writeln!(csv, "{},{hf}", fieldlab::sweep::csv_field(&src.to_string()));
        let _ = writeln!(report, "{src}: hf_intensity {hf:.4}");
        loaded.push(img);
    }
    std::fs::create_dir_all(out)?;
    write_file(&out.join("dct_hf.csv"), csv.as_bytes())?;
    match avg_dct_map(&loaded) {
        Ok(map) => {
            let mut m = String::from("u,v,value\n");
            for r in 0..map.height {
                for c in 0..map.width {
                    let _ = writeln!(m, "{c},{r},{}", map.get(r, c));
                }
            }
            write_file(&out.join("dct_map.csv"), m.as_bytes())?;
            // Row 0 (lowest vertical frequency) is drawn at the top.
            let values: Vec<Vec<f64>> =
                (0..map.height).rev().map(|r| map.pixels[r * map.width..(r + 1) * map.width].to_vec()).collect();
            let heat = Heatmap {
                title: format!("Mean |DCT|^0.03 over {} image(s)", loaded.len()),
                x_label: "horizontal frequency".into(),
                y_label: "vertical frequency (top = low)".into(),
                x_range: (0.0, map.width as f64 - 1.0),
                y_range: (map.height as f64 - 1.0, 0.0),
                values,
            };
            emit_svg_plot(&Plot::Heat(heat), &out.join("dct_map.svg"))?;
            let _ = writeln!(report, "low-frequency concentration {:.4}", low_frequency_concentration(&map));
        }
        Err(e) => {
            let _ = writeln!(report, "no averaged map: {e}");
        }
    }
    Ok(report)
}

pub fn barrier(run: &LoadedRun, from: &str, to: &str, samples: usize, out: &Path) -> Result<String> {
    let a = run.checkpoint(from)?;
    let b = run.checkpoint(to)?;
    let res = loss_barrier(&run.arch(), &run.target, &a, &b, samples)?;
    let stem = format!("barrier_{}_{}", tag(from), tag(to));
    let mut csv = String::from("t,loss,psnr_db\n");
    for (t, l) in &res.path {
        let _ = writeln!(csv, "{t},{l:e},{}", fieldlab::signal::psnr(*l));
    }
    std::fs::create_dir_all(out)?;
    write_file(&out.join(format!("{stem}.csv")), csv.as_bytes())?;
    let summary = format!(
        "from,to,samples,max_loss,min_psnr_db,t_at_max\n{from},{to},{samples},{:e},{},{}\n",
        res.max_loss, res.min_psnr_db, res.t_at_max
    );
    write_file(&out.join(format!("{stem}_summary.csv")), summary.as_bytes())?;
    let plot = Plot::Line(LinePlot {
        title: format!("Loss on the segment {from} -> {to}"),
        x_label: "t".into(),
        y_label: "PSNR (dB)".into(),
        log_x: false,
        series: vec![Series {
            label: run.manifest.run_id.clone(),
            points: res.path.iter().map(|(t, l)| (*t, fieldlab::signal::psnr(*l))).collect(),
        }],
    });
    emit_svg_plot(&plot, &out.join(format!("{stem}.svg")))?;
    Ok(format!(
        "barrier {from} -> {to}: max loss {:.6e} (PSNR {:.3} dB) at t = {:.4}",
        res.max_loss, res.min_psnr_db, res.t_at_max
    ))
}

#[allow(clippy::too_many_arguments)]
pub fn landscape(
    run: &LoadedRun,
    from: &str,
    to: &str,
    eigen: bool,
    samples: usize,
    seed: u64,
    workers: usize,
    out: &Path,
) -> Result<String> {
    let a = run.checkpoint(from)?;
    let b = run.checkpoint(to)?;
    let dir_seed = stream_seed(seed, "landscape");
    let mode = if eigen {
        DirectionMode::Eigen { iters: 100, tol: 1e-4, seed: dir_seed }
    } else {
        DirectionMode::Random { seed: dir_seed }
    };
    let grid = SliceGrid {
        alpha: Axis { samples, ..SliceGrid::default().alpha },
        beta: Axis { samples, ..SliceGrid::default().beta },
    };
    let slice = landscape_slice(&run.arch(), &run.target, &a, &b, mode, grid, workers)?;
    let stem = format!("landscape_{}_{}_{}", tag(from), tag(to), if eigen { "eigen" } else { "random" });
    std::fs::create_dir_all(out)?;
    write_file(&out.join(format!("{stem}.csv")), slice.to_csv().as_bytes())?;
    let heat = Heatmap {
        title: format!("PSNR on the plane through {from} and {to}"),
        x_label: "alpha".into(),
        y_label: "beta".into(),
        x_range: (grid.alpha.lo, grid.alpha.hi),
        y_range: (grid.beta.lo, grid.beta.hi),
        values: slice.psnr_db.clone(),
    };
    emit_svg_plot(&Plot::Heat(heat), &out.join(format!("{stem}.svg")))?;
    Ok(format!("landscape {from} -> {to}: {}x{} grid written to {stem}.csv", samples, samples))
}

pub fn variance(run: &LoadedRun, at: &[String], out: &Path) -> Result<String> {
    let mut csv = String::from("checkpoint,pixel_loss_variance,psnr_db\n");
    let mut report = String::new();
    for name in at {
        let p = run.checkpoint(name)?;
        let pred = run.predictions(&p)?;
        let v = pixel_loss_variance(&pred, &run.target.pixels)?;
        let mse = fieldlab::signal::mse(&run.target.with_pixels(pred), &run.target)?;
        let _ = writeln!(csv, "{name},{v:e},{}", fieldlab::signal::psnr(mse));
        let _ = writeln!(report, "{name}: pixel loss variance {v:.6e}");
    }
    std::fs::create_dir_all(out)?;
    write_file(&out.join(format!("variance_{}.csv", run.manifest.run_id)), csv.as_bytes())?;
    Ok(report)
}

pub fn bins(run: &LoadedRun, at: &str, n_bins: usize, out: &Path) -> Result<String> {
    let p = run.checkpoint(at)?;
    // Bins are taken on the original intensities, after the inverse transform.
    let recon = run.reconstruction(&p)?;
    let stats = intensity_bins(&recon.pixels, &run.original.pixels, n_bins)?;
    let rho = bin_loss_correlation(&stats);
    let mut csv = String::from("bin,lo,hi,count,mean_loss\n");
    for (i, b) in stats.iter().enumerate() {
        let loss = b.mean_loss.map(|l| format!("{l:e}")).unwrap_or_default();
        let _ = writeln!(csv, "{i},{},{},{},{loss}", b.lo, b.hi, b.count);
    }
    let stem = format!("bins_{}_{}", run.manifest.run_id, tag(at));
    std::fs::create_dir_all(out)?;
    write_file(&out.join(format!("{stem}.csv")), csv.as_bytes())?;
    let points: Vec<(f64, f64)> =
        stats.iter().filter_map(|b| b.mean_loss.map(|l| (0.5 * (b.lo + b.hi), l))).collect();
    let plot = Plot::Line(LinePlot {
        title: format!("Mean squared error per intensity bin ({at})"),
        x_label: "intensity".into(),
        y_label: "mean squared error".into(),
        log_x: false,
        series: vec![Series { label: run.manifest.run_id.clone(), points }],
    });
    emit_svg_plot(&plot, &out.join(format!("{stem}.svg")))?;
    Ok(match rho {
        Some(r) => format!("spearman(bin, loss) = {r:.4}"),
        None => "spearman(bin, loss) undefined (constant loss or fewer than two bins)".into(),
    })
}

pub fn resolve_run(path: &Path) -> Result<PathBuf> {
    if path.join("manifest.json").exists() {
        Ok(path.to_path_buf())
    } else {
        bail!("{} is not a run directory (no manifest.json)", path.display())
    }
}
