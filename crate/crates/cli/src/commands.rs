use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use inr_core::bundle::{self, Bundle};
use inr_core::convergence::{self, TheoremConfig, TheoremError};
use inr_core::experiments::{
    self, contiguous_groups, cross_glyph, plus_glyph, smooth_scene, DemoOutcome, SweepMode, SweepRow, SweepSpec,
};
use inr_core::imaging::{self, downsample2x, hconcat, residual, ImageDims, ImageTensor};
use inr_core::siren::{param_count, NetworkArch};
use inr_core::trainer::{self, Optimizer, TrainConfig};
use inr_core::weight_space::{default_combiner, uniform_gamma, CombinerSpec};
use inr_core::Error;
use serde_json::{json, Value};

use crate::args::{
    ArchArg, Command, CompressArgs, DecompressArgs, DemoArgs, DemoModeArg, MetricsArgs, OptimizerArg, SweepArgs,
    SweepModeArg, TrainingArgs, VerifyArgs,
};

pub const USAGE: u8 = 1;
pub const RUNTIME: u8 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    fn usage(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: USAGE,
            error: error.into(),
        }
    }

    fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: RUNTIME,
            error: error.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArch(_)
            | Error::InvalidCombiner(_)
            | Error::UnsupportedCombiner { .. }
            | Error::InvalidConfig(_) => Failure::usage(e),
            _ => Failure::runtime(e),
        }
    }
}

impl From<TheoremError> for Failure {
    fn from(e: TheoremError) -> Self {
        match e {
            TheoremError::Diverged { .. } => Failure::runtime(e),
            _ => Failure::usage(e),
        }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

pub fn run(command: Command) -> CmdResult {
    match command {
        Command::Compress(a) => compress(a),
        Command::Decompress(a) => decompress(a),
        Command::Metrics(a) => metrics(a),
        Command::Sweep(a) => sweep(a),
        Command::VerifyBounds(a) => verify_bounds(a),
        Command::Demo(a) => demo(a),
    }
}

fn arch_of(a: ArchArg) -> CmdResult<NetworkArch> {
    Ok(NetworkArch::new(a.l, a.n)?)
}

fn train_config(t: &TrainingArgs) -> TrainConfig {
    TrainConfig {
        epochs: t.epochs,
        optimizer: match t.optimizer {
            OptimizerArg::Adam => Optimizer::adam(),
            OptimizerArg::PlainGd => Optimizer::PlainGd,
        },
        learning_rate: t.lr,
        seed: t.seed,
        log_every: t.log_every,
        identical_init: t.identical_init,
    }
}

/// Load PNGs, optionally turning portrait images to landscape. Returns the
/// 0-based indices that were rotated.
fn load_images(paths: &[PathBuf], rotate_portrait: bool) -> CmdResult<(Vec<ImageTensor>, Vec<usize>)> {
    let mut images = Vec::with_capacity(paths.len());
    let mut rotated = Vec::new();
    for (i, p) in paths.iter().enumerate() {
        let img = imaging::load_png(p)?;
        if rotate_portrait && img.is_portrait() {
            rotated.push(i);
            images.push(img.rotate90());
        } else {
            images.push(img);
        }
    }
    Ok((images, rotated))
}

fn require_same_size(images: &[ImageTensor], paths: &[PathBuf]) -> CmdResult {
    let Some(first) = images.first() else {
        return Err(Failure::usage(anyhow!("no input images")));
    };
    for (img, path) in images.iter().zip(paths) {
        if (img.height(), img.width()) != (first.height(), first.width()) {
            return Err(Failure::runtime(anyhow!(
                "dimension mismatch: {} is {}x{}, {} is {}x{}",
                path.display(),
                img.height(),
                img.width(),
                paths[0].display(),
                first.height(),
                first.width()
            )));
        }
    }
    Ok(())
}

fn read_table(path: &Path) -> CmdResult<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::runtime(anyhow!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Failure::usage(anyhow!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .filter(|f| !f.is_empty())
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Failure::usage(anyhow!("{} line {}: not a number: {f:?}", path.display(), i + 1)))
            })
            .collect::<CmdResult<Vec<f64>>>()?;
        if !row.is_empty() {
            rows.push(row);
        }
    }
    Ok(rows)
}

fn resolve_combiner(combiner: &str, gamma: &str, n: usize, m: usize) -> CmdResult<CombinerSpec> {
    let gamma = if gamma == "uniform" {
        uniform_gamma(m)
    } else {
        let rows = read_table(Path::new(gamma))?;
        if rows.iter().any(|r| r.len() != 1) {
            return Err(Failure::usage(anyhow!("gamma file must hold one value per line")));
        }
        rows.into_iter().map(|r| r[0]).collect()
    };
    let spec = if combiner == "default" {
        if n == m {
            CombinerSpec::new(CombinerSpec::identity(n)?.alpha().clone(), gamma)?
        } else {
            CombinerSpec::new(default_combiner(n, m)?.alpha().clone(), gamma)?
        }
    } else {
        CombinerSpec::from_rows(&read_table(Path::new(combiner))?, gamma)?
    };
    if spec.m() != m || spec.n() != n {
        return Err(Failure::usage(anyhow!(
            "combiner is {}x{}, expected {m} images by {n} weight sets",
            spec.m(),
            spec.n()
        )));
    }
    Ok(spec)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::runtime(anyhow!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::runtime(anyhow!("cannot write {}: {e}", path.display())))
}

fn read_bundle(path: &Path) -> CmdResult<Bundle> {
    let bytes = fs::read(path).map_err(|e| Failure::runtime(anyhow!("cannot read {}: {e}", path.display())))?;
    bundle::deserialize(&bytes)
        .with_context(|| format!("bad bundle {}", path.display()))
        .map_err(Failure::runtime)
}

/// PSNR as JSON, with `"inf"` standing in for a perfect match.
fn psnr_value(v: f64) -> Value {
    if v.is_infinite() && v > 0.0 {
        json!("inf")
    } else {
        json!(v)
    }
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json values serialize") + "\n"
}

fn compress(a: CompressArgs) -> CmdResult {
    let arch = arch_of(a.train.arch)?;
    let config = train_config(&a.train);
    config.validate()?;
    let (mut images, rotated) = load_images(&a.images, a.rotate_portrait)?;
    require_same_size(&images, &a.images)?;
    let spec = resolve_combiner(&a.combiner, &a.gamma, a.n_weights, images.len())?;
    if a.downsample {
        images = images.iter().map(downsample2x).collect::<Result<_, _>>()?;
    }
    let channels = images.iter().map(ImageTensor::channels).max().unwrap_or(3);
    let dims = ImageDims {
        height: images[0].height(),
        width: images[0].width(),
        channels,
    };

    let (bank, history) = trainer::train_with_observer(&images, &arch, &spec, &config, |r| {
        eprintln!("epoch {:>6}  loss {:.6e}", r.epoch, r.total_loss);
    })?;
    let bytes = bundle::serialize(&bank, &spec, &arch, dims).map_err(Failure::runtime)?;
    write_file(&a.out, &bytes)?;
    write_file(&with_suffix(&a.out, ".history.jsonl"), history.to_json_lines())?;
    let meta = json!({
        "images": a.images.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "rotated": rotated.iter().map(|i| i + 1).collect::<Vec<_>>(),
        "downsampled": a.downsample,
        "training_dims": [dims.height, dims.width, dims.channels],
        "n_weights": a.n_weights,
        "epochs": config.epochs,
        "seed": config.seed,
    });
    write_file(&with_suffix(&a.out, ".meta.json"), pretty(&meta))?;

    let decoded = bundle::deserialize(&bytes).map_err(Failure::runtime)?;
    for (i, img) in images.iter().enumerate() {
        let rec = imaging::reconstruct(&decoded, i + 1, 1.0)?;
        let original = if channels == img.channels() {
            img.to_unit()
        } else {
            img.to_rgb().to_unit()
        };
        println!("image {:>3}  psnr {:.2} dB", i + 1, imaging::psnr(&rec, &original)?);
    }
    println!("bpp {:.4}  bytes {}", decoded.bpp(), bytes.len());
    Ok(())
}

fn decompress(a: DecompressArgs) -> CmdResult {
    if !(a.scale.is_finite() && a.scale > 0.0) {
        return Err(Failure::usage(anyhow!("--scale must be positive")));
    }
    let bundle = read_bundle(&a.bundle)?;
    if a.all {
        fs::create_dir_all(&a.out).map_err(|e| Failure::runtime(anyhow!("cannot create {}: {e}", a.out.display())))?;
        for i in 1..=bundle.spec.m() {
            let img = imaging::reconstruct(&bundle, i, a.scale)?;
            imaging::save_png(&img, a.out.join(format!("image_{i}.png")))?;
        }
    } else {
        let index = a.index.expect("clap requires --index without --all");
        let img = imaging::reconstruct(&bundle, index, a.scale)?;
        imaging::save_png(&img, &a.out)?;
    }
    Ok(())
}

fn metrics(a: MetricsArgs) -> CmdResult {
    if !(a.scale.is_finite() && a.scale > 0.0) {
        return Err(Failure::usage(anyhow!("--scale must be positive")));
    }
    let bundle = read_bundle(&a.bundle)?;
    let m = bundle.spec.m();
    let mut report = json!({
        "n": bundle.bank.len(),
        "m": m,
        "dims": [bundle.dims.height, bundle.dims.width, bundle.dims.channels],
        "bits_per_param": bundle.bits_per_param,
        "param_count": param_count(&bundle.arch),
        "bundle_bytes": bundle.encoded_len(),
        "bpp": bundle.bpp(),
    });
    if !a.images.is_empty() {
        if a.images.len() != m {
            return Err(Failure::runtime(anyhow!(
                "bundle holds {m} images but {} originals were given",
                a.images.len()
            )));
        }
        let (originals, _) = load_images(&a.images, a.rotate_portrait)?;
        let mut scores = Vec::with_capacity(m);
        for (i, orig) in originals.iter().enumerate() {
            let rec = imaging::reconstruct(&bundle, i + 1, a.scale)?;
            let orig = if rec.channels() == orig.channels() {
                orig.clone()
            } else {
                orig.to_rgb()
            };
            // scored as the decoded PNG would be
            scores.push(imaging::psnr(&rec.to_8bit(), &orig.to_unit())?);
        }
        let mean = scores.iter().sum::<f64>() / m as f64;
        report["per_image_psnr"] = Value::Array(scores.iter().map(|&v| psnr_value(v)).collect());
        report["mean_psnr"] = psnr_value(mean);
    }
    let text = pretty(&report);
    match &a.out {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn png_paths(dir: &Path) -> CmdResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::runtime(anyhow!("cannot list {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::runtime(anyhow!("no PNG images in {}", dir.display())));
    }
    Ok(paths)
}

fn sweep(a: SweepArgs) -> CmdResult {
    let paths = png_paths(&a.images)?;
    let (images, rotated) = load_images(&paths, a.rotate_portrait)?;
    require_same_size(&images, &paths)?;
    let train = train_config(&a.train);
    train.validate()?;
    let spec = match a.mode {
        SweepModeArg::VaryM => SweepSpec {
            mode: SweepMode::VaryM,
            group_sizes: a.m_values.clone(),
            archs: vec![(a.train.arch.l, a.train.arch.n)],
            n_weights: a.n_weights,
            train,
        },
        SweepModeArg::VaryArch => SweepSpec {
            mode: SweepMode::VaryArch,
            group_sizes: vec![a.group_size.unwrap_or(images.len())],
            archs: a.archs.iter().map(|x| (x.l, x.n)).collect(),
            n_weights: a.n_weights,
            train,
        },
    };
    let points = spec.points()?;

    let rows: Vec<SweepRow> = if a.plan_only {
        let dims = images[0].dims();
        points
            .iter()
            .map(|&(m, l, n)| {
                let arch = NetworkArch::new(l, n)?;
                Ok(SweepRow {
                    mode: spec.mode.clone(),
                    m,
                    l,
                    n,
                    p: param_count(&arch),
                    bpp: inr_core::bpp(&arch, spec.n_weights, m, dims, 16),
                    mean_psnr: f64::NAN,
                    std_psnr: f64::NAN,
                    epochs: spec.train.epochs,
                    seed: spec.train.seed,
                    status: "planned".into(),
                })
            })
            .collect::<Result<_, Error>>()?
    } else {
        experiments::run_sweep(&images, &spec)?
    };

    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        writer.serialize(row).map_err(Failure::runtime)?;
    }
    let csv_bytes = writer.into_inner().map_err(|e| Failure::runtime(anyhow!("{e}")))?;
    write_file(&a.out, csv_bytes)?;

    let name = |i: &usize| {
        paths[*i]
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let splits: Vec<Value> = points
        .iter()
        .map(|&(m, l, n)| {
            let groups: Vec<Vec<String>> = contiguous_groups(images.len(), m)
                .iter()
                .map(|g| g.iter().map(name).collect())
                .collect();
            json!({ "M": m, "l": l, "n": n, "groups": groups })
        })
        .collect();
    let meta = json!({
        "images": (0..paths.len()).map(|i| name(&i)).collect::<Vec<_>>(),
        "rotated": rotated.iter().map(name).collect::<Vec<_>>(),
        "split": "contiguous",
        "points": splits,
    });
    write_file(&with_suffix(&a.out, ".meta.json"), pretty(&meta))?;
    for r in &rows {
        println!(
            "M={:<4} l={:<2} n={:<4} P={:<7} bpp={:.4} psnr={:.2}±{:.2} {}",
            r.m, r.l, r.n, r.p, r.bpp, r.mean_psnr, r.std_psnr, r.status
        );
    }
    Ok(())
}

fn verify_bounds(a: VerifyArgs) -> CmdResult {
    let text = fs::read_to_string(&a.config)
        .map_err(|e| Failure::runtime(anyhow!("cannot read {}: {e}", a.config.display())))?;
    let config = TheoremConfig::from_json(&text)?;
    let report = convergence::verify(&config)?;
    if let Some(path) = &a.out {
        let body = serde_json::to_string_pretty(&report).map_err(Failure::runtime)?;
        write_file(path, body + "\n")?;
    }
    println!("iterations {}", report.iterations);
    println!(
        "delta13 {:.6e}  delta23 {:.6e}  delta123 {:.6e}",
        report.delta13, report.delta23, report.delta123
    );
    for (name, check) in ["L1", "L2", "L3"].iter().zip(&report.asymptotic) {
        println!(
            "{name}: tail gap {:.6e}  limit {:.6e}{}",
            check.tail_gap,
            check.limit,
            if check.settled { "" } else { "  (not settled)" }
        );
    }
    if report.passed() {
        println!("all bounds hold");
        Ok(())
    } else {
        let detail: Vec<String> = report
            .violations
            .iter()
            .map(|v| format!("{} at t={}: {:e} > {:e}", v.bound, v.iteration, v.empirical, v.rhs))
            .chain(
                report
                    .asymptotic
                    .iter()
                    .zip(["L1", "L2", "L3"])
                    .filter(|(c, _)| c.settled && !c.holds)
                    .map(|(c, n)| format!("{n} tail gap {:e} above limit {:e}", c.tail_gap, c.limit)),
            )
            .collect();
        Err(Failure::runtime(anyhow!("bound violated: {}", detail.join("; "))))
    }
}

fn demo_images(a: &DemoArgs) -> CmdResult<Vec<ImageTensor>> {
    let needed = if a.mode == DemoModeArg::DifferentThird { 3 } else { 2 };
    if a.images.is_empty() {
        let mut imgs = vec![plus_glyph(a.size), cross_glyph(a.size)];
        if needed == 3 {
            imgs.push(smooth_scene(a.size));
        }
        return Ok(imgs);
    }
    if a.images.len() != needed {
        return Err(Failure::usage(anyhow!(
            "this demo takes {needed} images, got {}",
            a.images.len()
        )));
    }
    let (imgs, _) = load_images(&a.images, false)?;
    require_same_size(&imgs, &a.images)?;
    Ok(imgs)
}

fn demo(a: DemoArgs) -> CmdResult {
    if a.size < 2 {
        return Err(Failure::usage(anyhow!("--size must be at least 2")));
    }
    let arch = arch_of(a.arch)?;
    let config = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        seed: a.seed,
        identical_init: true,
        ..TrainConfig::default()
    };
    config.validate()?;
    let imgs = demo_images(&a)?;
    let outcome: DemoOutcome = match a.mode {
        DemoModeArg::NaiveAverage => experiments::naive_average(&imgs[0], &imgs[1], &arch, &config)?,
        DemoModeArg::ConstrainedAverage => experiments::constrained_average(&imgs[0], &imgs[1], &arch, &config)?,
        DemoModeArg::DifferentThird => experiments::different_third(&imgs[0], &imgs[1], &imgs[2], &arch, &config)?,
    };
    fs::create_dir_all(&a.out).map_err(|e| Failure::runtime(anyhow!("cannot create {}: {e}", a.out.display())))?;
    for (name, original, rec) in &outcome.panels {
        let res = residual(rec, original)?;
        let strip = hconcat(&[original, rec, &res])?;
        imaging::save_png(&strip, a.out.join(format!("{name}.png")))?;
    }
    let table: Vec<Value> = outcome
        .table
        .iter()
        .map(|e| json!({ "reconstruction": e.reconstruction, "reference": e.reference, "psnr": psnr_value(e.psnr) }))
        .collect();
    let report = json!({ "mode": outcome.mode, "holds": outcome.holds(), "psnr": table });
    write_file(&a.out.join("metrics.json"), pretty(&report))?;
    for e in &outcome.table {
        println!("{:<9} vs {:<8} {:.2} dB", e.reconstruction, e.reference, e.psnr);
    }
    println!(
        "phenomenon {}",
        if outcome.holds() {
            "reproduced"
        } else {
            "not reproduced"
        }
    );
    Ok(())
}
