use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use inr_core::convergence::TheoremConfig;
use inr_core::imaging::{ImageDims, ImageTensor, ValueRange};
use inr_core::siren::{init_weights, NetworkArch};
use inr_core::weight_space::{default_combiner, ThetaBank};
use inr_core::{bundle, load_png, save_png};
use serde_json::Value;
use tempfile::TempDir;

fn inr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn gradient_png(dir: &Path, name: &str, h: usize, w: usize, shift: f64) -> PathBuf {
    let mut v = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            let x = c as f64 / w as f64;
            let y = r as f64 / h as f64;
            v.extend([(x + shift).fract(), y, 0.5 * (x + y)]);
        }
    }
    let path = dir.join(name);
    save_png(&ImageTensor::new(h, w, 3, ValueRange::Unit, v).unwrap(), &path).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const QUICK: [&str; 6] = ["--arch", "l=1,n=8", "--epochs", "20", "--log-every", "10"];

/// Three 6x8 images compressed into the default two weight sets.
fn compressed(dir: &TempDir) -> (Vec<PathBuf>, PathBuf) {
    let images: Vec<PathBuf> = (0..3)
        .map(|i| gradient_png(dir.path(), &format!("img{i}.png"), 6, 8, 0.3 * i as f64))
        .collect();
    let out = dir.path().join("b.inrb");
    let mut args = vec!["compress", "--images"];
    args.extend(images.iter().map(|p| s(p)));
    args.extend(QUICK);
    args.extend(["--out", s(&out)]);
    let res = inr(&args);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    (images, out)
}

#[test]
fn help_succeeds_and_bad_flags_are_usage_errors() {
    assert_eq!(code(&inr(&["--help"])), 0);
    assert_eq!(code(&inr(&["compress", "--bogus"])), 1);
    assert_eq!(code(&inr(&[])), 1);
    assert_eq!(code(&inr(&["decompress", "--bundle", "x", "--out", "y"])), 1);
}

#[test]
fn compress_uses_default_combiner_and_writes_side_files() {
    let dir = TempDir::new().unwrap();
    let (_, out) = compressed(&dir);
    let b = bundle::deserialize(&fs::read(&out).unwrap()).unwrap();
    assert_eq!((b.bank.len(), b.spec.m()), (2, 3));
    let rows: Vec<Vec<f64>> = (0..3).map(|i| b.spec.alpha_row(i).to_vec()).collect();
    assert_eq!(rows, vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]]);

    let history = fs::read_to_string(dir.path().join("b.inrb.history.jsonl")).unwrap();
    let epochs: Vec<u64> = history
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["epoch"].as_u64().unwrap())
        .collect();
    assert_eq!(epochs, vec![0, 10, 20]);
    let meta: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("b.inrb.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["training_dims"], serde_json::json!([6, 8, 3]));
}

#[test]
fn single_image_with_one_weight_set() {
    let dir = TempDir::new().unwrap();
    let img = gradient_png(dir.path(), "one.png", 5, 5, 0.0);
    let out = dir.path().join("one.inrb");
    let mut args = vec!["compress", "--images", s(&img), "--n-weights", "1", "--out", s(&out)];
    args.extend(QUICK);
    assert_eq!(code(&inr(&args)), 0);
    let b = bundle::deserialize(&fs::read(&out).unwrap()).unwrap();
    assert_eq!((b.bank.len(), b.spec.m()), (1, 1));
}

#[test]
fn mixed_sizes_fail_before_training() {
    let dir = TempDir::new().unwrap();
    let a = gradient_png(dir.path(), "a.png", 6, 8, 0.0);
    let b = gradient_png(dir.path(), "b.png", 8, 6, 0.0);
    let out = dir.path().join("x.inrb");
    let res = inr(&[
        "compress",
        "--images",
        s(&a),
        s(&b),
        "--epochs",
        "100000",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("dimension mismatch"));
    assert!(!out.exists());
}

#[test]
fn unsupported_default_combiner_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let imgs: Vec<PathBuf> = (0..4)
        .map(|i| gradient_png(dir.path(), &format!("{i}.png"), 4, 4, 0.0))
        .collect();
    let out = dir.path().join("x.inrb");
    let mut args = vec!["compress", "--n-weights", "3", "--out", s(&out), "--images"];
    args.extend(imgs.iter().map(|p| s(p)));
    assert_eq!(code(&inr(&args)), 1);
}

#[test]
fn combiner_and_gamma_files() {
    let dir = TempDir::new().unwrap();
    let imgs: Vec<PathBuf> = (0..4)
        .map(|i| gradient_png(dir.path(), &format!("{i}.png"), 4, 4, 0.2 * i as f64))
        .collect();
    let alpha = dir.path().join("alpha.csv");
    fs::write(&alpha, "1,0,0\n0,1,0\n0,0,1\n0.2, 0.3, 0.5\n").unwrap();
    let gamma = dir.path().join("gamma.csv");
    fs::write(&gamma, "0.1\n0.2\n0.3\n0.4\n").unwrap();
    let out = dir.path().join("c.inrb");
    let mut args = vec![
        "compress",
        "--n-weights",
        "3",
        "--combiner",
        s(&alpha),
        "--gamma",
        s(&gamma),
        "--out",
        s(&out),
        "--images",
    ];
    args.extend(imgs.iter().map(|p| s(p)));
    args.extend(QUICK);
    let res = inr(&args);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let b = bundle::deserialize(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(
        b.spec.alpha_row(3).to_vec(),
        vec![0.2f32 as f64, 0.3f32 as f64, 0.5f32 as f64]
    );

    // wrong shape for the requested N
    let mut args = vec![
        "compress",
        "--n-weights",
        "2",
        "--combiner",
        s(&alpha),
        "--out",
        s(&out),
        "--images",
    ];
    args.extend(imgs.iter().map(|p| s(p)));
    assert_eq!(code(&inr(&args)), 1);
}

#[test]
fn decompress_index_scale_and_all() {
    let dir = TempDir::new().unwrap();
    let (_, bundle_path) = compressed(&dir);
    let b = s(&bundle_path);
    let one = dir.path().join("r2.png");
    assert_eq!(
        code(&inr(&["decompress", "--bundle", b, "--index", "2", "--out", s(&one)])),
        0
    );
    let img = load_png(&one).unwrap();
    assert_eq!((img.height(), img.width()), (6, 8));

    let big = dir.path().join("r1x2.png");
    assert_eq!(
        code(&inr(&[
            "decompress",
            "--bundle",
            b,
            "--index",
            "1",
            "--scale",
            "2",
            "--out",
            s(&big)
        ])),
        0
    );
    let img = load_png(&big).unwrap();
    assert_eq!((img.height(), img.width()), (12, 16));

    let res = inr(&["decompress", "--bundle", b, "--index", "99", "--out", s(&one)]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("99"));

    let all = dir.path().join("all");
    assert_eq!(code(&inr(&["decompress", "--bundle", b, "--all", "--out", s(&all)])), 0);
    for i in 1..=3 {
        assert!(all.join(format!("image_{i}.png")).exists());
    }
}

#[test]
fn bad_bundle_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    let junk = dir.path().join("junk.inrb");
    fs::write(&junk, b"not a bundle").unwrap();
    let out = dir.path().join("x.png");
    assert_eq!(
        code(&inr(&[
            "decompress",
            "--bundle",
            s(&junk),
            "--index",
            "1",
            "--out",
            s(&out)
        ])),
        2
    );
    assert_eq!(code(&inr(&["metrics", "--bundle", s(&junk)])), 2);
}

#[test]
fn pipeline_is_reproducible() {
    let one = TempDir::new().unwrap();
    let two = TempDir::new().unwrap();
    let (images, a) = compressed(&one);
    let (_, b) = compressed(&two);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let metrics = |bundle: &Path| {
        let mut args = vec!["metrics", "--bundle", s(bundle), "--images"];
        args.extend(images.iter().map(|p| s(p)));
        let res = inr(&args);
        assert_eq!(code(&res), 0);
        res.stdout
    };
    assert_eq!(metrics(&a), metrics(&b));
}

#[test]
fn metrics_report_fields_and_inf_sentinel() {
    let dir = TempDir::new().unwrap();
    let (images, bundle_path) = compressed(&dir);
    let b = s(&bundle_path);
    let mut args = vec!["metrics", "--bundle", b, "--images"];
    args.extend(images.iter().map(|p| s(p)));
    let report: Value = serde_json::from_slice(&inr(&args).stdout).unwrap();
    let psnrs = report["per_image_psnr"].as_array().unwrap();
    assert_eq!(psnrs.len(), 3);
    let mean = psnrs.iter().map(|v| v.as_f64().unwrap()).sum::<f64>() / 3.0;
    assert!((report["mean_psnr"].as_f64().unwrap() - mean).abs() < 1e-9);
    let bytes = fs::metadata(&bundle_path).unwrap().len();
    assert_eq!(report["bundle_bytes"].as_u64().unwrap(), bytes);
    // l = 1, n = 8: 3n + 3(n + 1)
    assert_eq!(report["param_count"].as_u64().unwrap(), 51);

    // decoded images as originals reproduce exactly
    let all = dir.path().join("all");
    assert_eq!(code(&inr(&["decompress", "--bundle", b, "--all", "--out", s(&all)])), 0);
    let decoded: Vec<PathBuf> = (1..=3).map(|i| all.join(format!("image_{i}.png"))).collect();
    let mut args = vec!["metrics", "--bundle", b, "--images"];
    args.extend(decoded.iter().map(|p| s(p)));
    let report: Value = serde_json::from_slice(&inr(&args).stdout).unwrap();
    assert_eq!(report["mean_psnr"], "inf");
    assert!(report["per_image_psnr"].as_array().unwrap().iter().all(|v| v == "inf"));

    // count mismatch
    let res = inr(&["metrics", "--bundle", b, "--images", s(&images[0])]);
    assert_eq!(code(&res), 2);
}

fn header_bpp(dir: &TempDir, l: usize, n: usize, m: usize, dims: ImageDims) -> f64 {
    let arch = NetworkArch::new(l, n).unwrap();
    let bank = ThetaBank::new(vec![init_weights(&arch, 1), init_weights(&arch, 2)]).unwrap();
    let bytes = bundle::serialize(&bank, &default_combiner(2, m).unwrap(), &arch, dims).unwrap();
    let path = dir.path().join(format!("h{m}.inrb"));
    fs::write(&path, bytes).unwrap();
    let out = inr(&["metrics", "--bundle", s(&path)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report.get("mean_psnr").is_none());
    report["bpp"].as_f64().unwrap()
}

#[test]
fn header_only_bpp_for_reference_sizes() {
    let dir = TempDir::new().unwrap();
    let kodak = ImageDims {
        height: 512,
        width: 768,
        channels: 3,
    };
    let bpp = header_bpp(&dir, 4, 170, 6, kodak);
    assert_eq!(format!("{bpp:.3}"), "0.399");

    let cifar = ImageDims {
        height: 32,
        width: 32,
        channels: 3,
    };
    // P = 3*18 + 3*(18*18 + 18) + 3*19 = 1137
    let expected = 2.0 * 1137.0 * 16.0 / (128.0 * 32.0 * 32.0 * 3.0);
    let bpp = header_bpp(&dir, 4, 18, 128, cifar);
    assert!((bpp - expected).abs() < 1e-12);
    assert!((bpp - 0.0925).abs() < 5e-4);
}

fn sweep_dir(dir: &TempDir) -> PathBuf {
    let images = dir.path().join("set");
    fs::create_dir(&images).unwrap();
    for i in 0..6 {
        gradient_png(&images, &format!("k{i:02}.png"), 4, 6, 0.1 * i as f64);
    }
    images
}

fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(
        header.iter().take(10).collect::<Vec<_>>(),
        [
            "mode",
            "M",
            "l",
            "n",
            "P",
            "bpp",
            "mean_psnr",
            "std_psnr",
            "epochs",
            "seed"
        ]
    );
    reader.records().map(Result::unwrap).collect()
}

#[test]
fn sweep_over_image_counts() {
    let dir = TempDir::new().unwrap();
    let images = sweep_dir(&dir);
    let out = dir.path().join("rd.csv");
    let mut args = vec![
        "sweep",
        "--images",
        s(&images),
        "--mode",
        "vary-m",
        "--m-values",
        "3,6",
        "--out",
        s(&out),
    ];
    args.extend(QUICK);
    let res = inr(&args);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let rows = read_rows(&out);
    assert_eq!(rows.len(), 2);
    let bpp: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    assert!((bpp[0] - 2.0 * bpp[1]).abs() < 1e-12);
    assert!(rows.iter().all(|r| r[6].parse::<f64>().unwrap().is_finite()));

    let meta: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("rd.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(
        meta["points"][0]["groups"][1],
        serde_json::json!(["k03.png", "k04.png", "k05.png"])
    );
}

#[test]
fn sweep_plan_over_architectures_keeps_rate_band() {
    let dir = TempDir::new().unwrap();
    let images = sweep_dir(&dir);
    let out = dir.path().join("arch.csv");
    let archs = [
        "l=2,n=294",
        "l=4,n=170",
        "l=6,n=132",
        "l=7,n=120",
        "l=8,n=112",
        "l=10,n=98",
    ];
    let mut args = vec![
        "sweep",
        "--images",
        s(&images),
        "--mode",
        "vary-arch",
        "--plan-only",
        "--out",
        s(&out),
    ];
    for a in &archs {
        args.extend(["--archs", a]);
    }
    assert_eq!(code(&inr(&args)), 0);
    let rows = read_rows(&out);
    assert_eq!(rows.len(), 6);
    // the band is stated for 512x768 images and six per bundle; rescale by pixel count
    let scale = (4.0 * 6.0) / (512.0 * 768.0);
    for r in &rows {
        let bpp: f64 = r[5].parse().unwrap();
        let at_full_size = bpp * scale;
        assert!((0.397..=0.404).contains(&at_full_size), "{r:?}: {at_full_size}");
    }
}

#[test]
fn sweep_with_empty_variation_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let images = sweep_dir(&dir);
    let out = dir.path().join("e.csv");
    assert_eq!(
        code(&inr(&[
            "sweep",
            "--images",
            s(&images),
            "--mode",
            "vary-m",
            "--out",
            s(&out)
        ])),
        1
    );
    assert_eq!(
        code(&inr(&[
            "sweep",
            "--images",
            s(&images),
            "--mode",
            "vary-arch",
            "--out",
            s(&out)
        ])),
        1
    );
}

fn write_config(dir: &TempDir, name: &str, cfg: &TheoremConfig) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

#[test]
fn verify_bounds_exit_codes() {
    let dir = TempDir::new().unwrap();
    let reference = write_config(&dir, "ref.json", &TheoremConfig::reference());
    let report = dir.path().join("report.json");
    let res = inr(&["verify-bounds", s(&reference), "--out", s(&report)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let body: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(body["gap"][0].as_array().unwrap().len(), 501);

    let mut infeasible = TheoremConfig::reference();
    infeasible.gamma = [0.05, 0.05, 0.9];
    let path = write_config(&dir, "bad.json", &infeasible);
    let res = inr(&["verify-bounds", s(&path)]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("gamma3 <="));

    let mut empty = TheoremConfig::reference();
    empty.iterations = 0;
    let path = write_config(&dir, "zero.json", &empty);
    assert_eq!(code(&inr(&["verify-bounds", s(&path)])), 0);

    let garbage = dir.path().join("garbage.json");
    fs::write(&garbage, "{").unwrap();
    assert_eq!(code(&inr(&["verify-bounds", s(&garbage)])), 1);
}

#[test]
fn demo_writes_triptychs_and_table() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("demo");
    let res = inr(&[
        "demo",
        "constrained-average",
        "--size",
        "8",
        "--arch",
        "l=1,n=8",
        "--epochs",
        "10",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for name in ["first", "middle", "second"] {
        let strip = load_png(out.join(format!("{name}.png"))).unwrap();
        assert_eq!((strip.height(), strip.width()), (8, 24));
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(report["holds"].is_boolean());
    assert!(!report["psnr"].as_array().unwrap().is_empty());

    let res = inr(&["demo", "different-third", "--images", "a.png", "--out", s(&out)]);
    assert_eq!(code(&res), 1);
}
