use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fieldlab");
const ARCH: &str = "siren:hidden=1,width=16,omega0=30";

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fit_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "--out", out, "fit", "--image", "synth:seed=7,size=16,exp=2", "--arch", ARCH, "--lr", "4e-3",
        "--max-steps", "400", "--target", "30", "--thresholds", "20,30",
    ];
    v.extend_from_slice(extra);
    v
}

fn only_subdir(dir: &Path) -> PathBuf {
    let entries: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(entries.len(), 1, "{entries:?}");
    entries[0].clone()
}

#[test]
fn fit_writes_the_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    ok(&fit_args(out, &["--transform", "rpp"]));
    let run = only_subdir(tmp.path());
    assert_eq!(run.file_name().unwrap().len(), 12);
    for f in ["manifest.json", "metrics.csv", "permutation.txt", "recon.pgm", "error.pgm", "curve.svg", "checkpoints/init.nfld", "checkpoints/final.nfld"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["transform"], "rpp");
    let hits = manifest["first_hits"].as_array().unwrap();
    for h in hits {
        if let Some(step) = h["step"].as_u64() {
            let _ = step;
            let name = format!("checkpoints/psnr{}.nfld", h["db"].as_f64().unwrap());
            assert!(run.join(&name).exists(), "missing {name}");
        }
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,loss,psnr_recon_db,psnr_transformed_db\n"));
}

#[test]
fn fit_is_deterministic_and_rerunnable_from_its_manifest() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&fit_args(a.path().to_str().unwrap(), &["--transform", "spiral"]));
    ok(&fit_args(b.path().to_str().unwrap(), &["--transform", "spiral"]));
    let (ra, rb) = (only_subdir(a.path()), only_subdir(b.path()));
    assert_eq!(ra.file_name(), rb.file_name());
    let ma = std::fs::read(ra.join("metrics.csv")).unwrap();
    assert_eq!(ma, std::fs::read(rb.join("metrics.csv")).unwrap());

    let c = tempfile::tempdir().unwrap();
    let manifest = ra.join("manifest.json");
    ok(&["--out", c.path().to_str().unwrap(), "fit", "--config", manifest.to_str().unwrap()]);
    let rc = only_subdir(c.path());
    assert_eq!(rc.file_name(), ra.file_name());
    assert_eq!(std::fs::read(rc.join("metrics.csv")).unwrap(), ma);
}

fn write_pfm(path: &Path, values: &[f32], side: usize) {
    let mut bytes = format!("Pf\n{side} {side}\n-1.0\n").into_bytes();
    for v in values {
        bytes.extend(v.to_le_bytes());
    }
    std::fs::write(path, bytes).unwrap();
}

#[test]
fn gamma_on_negative_intensities_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("neg.pfm");
    write_pfm(&img, &[0.5, -0.25, 0.1, 0.9], 2);
    let out_dir = tmp.path().join("runs");
    let out = run(&[
        "--out", out_dir.to_str().unwrap(), "fit", "--image", img.to_str().unwrap(), "--transform", "gamma:2.0",
        "--arch", ARCH, "--lr", "1e-3", "--max-steps", "5",
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("-0.25"), "{err}");
    assert!(!out_dir.exists(), "nothing should be written on a precondition error");
}

#[test]
fn bad_arguments_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert!(!run(&fit_args(out, &["--transform", "gamma:-1"])).status.success());
    assert!(!run(&["--out", out, "fit", "--image", "synth:seed=1,size=16", "--arch", "lstm"]).status.success());
    assert!(!run(&["--out", out, "fit", "--image", "synth:seed=1,size=16", "--lr", "0"]).status.success());
}

#[test]
fn analyze_names_missing_thresholds() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    ok(&fit_args(runs.to_str().unwrap(), &[]));
    let run_dir = only_subdir(&runs);
    let r = run_dir.to_str().unwrap();
    let an = tmp.path().join("an");
    let a = an.to_str().unwrap();

    let out = run(&["--out", a, "analyze", "barrier", "--run", r, "--from", "20", "--to", "45"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("45 dB"));

    let text = ok(&["--out", a, "analyze", "barrier", "--run", r, "--from", "init", "--to", "final", "--samples", "11"]);
    assert!(text.contains("max loss"));
    let csv = std::fs::read_to_string(an.join("barrier_init_final.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);
    assert!(an.join("barrier_init_final.svg").exists());

    ok(&["--out", a, "analyze", "landscape", "--run", r, "--from", "init", "--to", "final", "--samples", "5"]);
    assert_eq!(std::fs::read_to_string(an.join("landscape_init_final_random.csv")).unwrap().lines().count(), 26);
    ok(&["--out", a, "analyze", "variance", "--run", r, "--at", "init,final"]);
    ok(&["--out", a, "analyze", "bins", "--run", r, "--bins", "4"]);
    ok(&["--out", a, "analyze", "dct", "--images", "synth:seed=1,size=16", "synth:seed=2,size=16"]);
    let hf = std::fs::read_to_string(an.join("dct_hf.csv")).unwrap();
    assert_eq!(hf.lines().count(), 3);
    assert!(an.join("dct_map.svg").exists());

    let report = ok(&["--out", a, "report", r]);
    assert!(report.contains("run_id,"));
    assert!(an.join("curves.svg").exists());
}

#[test]
fn gen_data_writes_pgm_files() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["--out", tmp.path().to_str().unwrap(), "--seed", "3", "gen-data", "--count", "2", "--size", "8"]);
    for s in [3, 4] {
        let bytes = std::fs::read(tmp.path().join(format!("synth_{s}.pgm"))).unwrap();
        assert!(bytes.starts_with(b"P5"));
    }
}

const STUDY: &str = r#"
images = ["synth:seed=1,size=16,exp=1.5"]
transforms = ["identity", "inversion"]
archs = ["siren:hidden=1,width=16,omega0=30"]
batch_sizes = ["full"]
lr_grid = [4e-3, 2e-3]
target_psnr = 25.0
seed = 0
max_steps = 300
"#;

fn sweep(out: &Path, manifest: &Path, workers: &str) -> PathBuf {
    ok(&["--out", out.to_str().unwrap(), "--workers", workers, "sweep", "--manifest", manifest.to_str().unwrap()]);
    only_subdir(out)
}

#[test]
fn sweep_is_resumable_and_worker_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("study.toml");
    std::fs::write(&manifest, STUDY).unwrap();

    let one = sweep(&tmp.path().join("w1"), &manifest, "1");
    let csv = std::fs::read_to_string(one.join("study.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(one.join("summary.csv").exists());

    let four = sweep(&tmp.path().join("w4"), &manifest, "4");
    assert_eq!(std::fs::read_to_string(four.join("study.csv")).unwrap(), csv);

    // Drop one cell record and resume.
    let cells = one.join("cells");
    let first = std::fs::read_dir(&cells).unwrap().next().unwrap().unwrap().path();
    std::fs::remove_file(first).unwrap();
    std::fs::remove_file(one.join("study.csv")).unwrap();
    let again = sweep(&tmp.path().join("w1"), &manifest, "1");
    assert_eq!(again, one);
    assert_eq!(std::fs::read_to_string(one.join("study.csv")).unwrap(), csv);
}
